"""Pairwise Euclidean distance matrices between feature sets."""

from __future__ import annotations

import numpy as np

from .data import FeatureMatrix
from .errors import DimensionMismatch


def pairwise_distances(source: FeatureMatrix, target: FeatureMatrix) -> np.ndarray:
    """n x m matrix of l2 distances between source rows and target rows.

    Uses the Gram expansion ||a||^2 + ||b||^2 - 2 a.b with negative radicands
    clamped to zero; entries the clamp touched are recomputed exactly so
    catastrophic cancellation cannot corrupt near-zero distances.
    """
    if source.cols != target.cols:
        raise DimensionMismatch(
            f"source has {source.cols} feature dims, target has {target.cols}"
        )
    a, b = source.values, target.values
    sq = (
        np.sum(a * a, axis=1)[:, None]
        + np.sum(b * b, axis=1)[None, :]
        - 2.0 * (a @ b.T)
    )
    # Cancellation can leave small negatives or inflated near-zero values.
    # Redo any entry whose squared distance is within roundoff of zero.
    scale = np.maximum(np.sum(a * a, axis=1)[:, None], np.sum(b * b, axis=1)[None, :])
    suspect = sq < 1e-10 * (1.0 + scale)
    if suspect.any():
        rows, cols = np.nonzero(suspect)
        diff = a[rows] - b[cols]
        sq[rows, cols] = np.sum(diff * diff, axis=1)
    return np.sqrt(np.maximum(sq, 0.0))
