"""Shared builders for the test suite."""

import numpy as np
import pytest

from otselect import (
    DiscreteJointDistribution,
    FeatureMatrix,
    LabeledDataset,
)


def rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)


def random_matrix(seed: int, n: int, d: int, scale: float = 1.0) -> FeatureMatrix:
    return FeatureMatrix(rng(seed).normal(size=(n, d)) * scale)


def random_dataset(seed: int, counts, d: int = 2, spread: float = 4.0) -> LabeledDataset:
    """Gaussian blobs, one per class, labeled densely in class order."""
    r = rng(seed)
    counts = np.asarray(counts, dtype=np.int64)
    blocks = []
    labels = []
    for i, c in enumerate(counts):
        center = r.normal(size=d) * spread
        blocks.append(center + r.normal(size=(int(c), d)))
        labels.extend([i] * int(c))
    return LabeledDataset(FeatureMatrix(np.vstack(blocks)), np.array(labels))


def random_joint(seed: int, n_atoms: int = 5, d: int = 2, n_labels: int = 3,
                 support: np.ndarray | None = None) -> DiscreteJointDistribution:
    """Random discrete joint over (feature atom, label) pairs."""
    r = rng(seed)
    z = support if support is not None else r.normal(size=(n_atoms, d))
    labels = r.integers(0, n_labels, size=z.shape[0])
    masses = r.dirichlet(np.ones(z.shape[0]))
    return DiscreteJointDistribution(np.asarray(z, dtype=np.float64), labels, masses)


@pytest.fixture
def tmp_file(tmp_path):
    def make(name: str) -> str:
        return str(tmp_path / name)

    return make
