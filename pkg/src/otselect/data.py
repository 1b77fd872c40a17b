"""Domain types and file ingestion for embeddings, labels, weights, and plans.

All numeric payloads are numpy arrays in float64; types are frozen after
construction and safe to share across threads.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyFile,
    MalformedFile,
    NonFiniteValue,
)

_MAGIC = b"WSF1"

# Weights below this are treated as zero on export.
WEIGHT_CLAMP = 1e-9


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def _check_finite(values: np.ndarray, what: str) -> None:
    bad = ~np.isfinite(values)
    if bad.any():
        idx = np.argwhere(bad)[0]
        if values.ndim == 2:
            r, c = int(idx[0]), int(idx[1])
            raise NonFiniteValue(f"{what} has non-finite entry at row {r}, col {c}", row=r, col=c)
        raise NonFiniteValue(f"{what} has non-finite entry at index {int(idx[0])}", row=int(idx[0]))


# ============================================================
# Core types
# ============================================================


@dataclass(frozen=True)
class FeatureMatrix:
    """Dense real matrix of embeddings; rows are samples, columns are dimensions."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise MalformedFile(f"feature matrix must be 2-D and non-empty, got shape {v.shape}")
        _check_finite(v, "feature matrix")
        object.__setattr__(self, "values", _freeze(v))

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class LabeledDataset:
    """Feature matrix plus a dense class label per row.

    Labels must already be dense in [0, k); use :func:`densify_labels` on raw
    ids first. Every class in the range must be represented.
    """

    features: FeatureMatrix
    labels: np.ndarray
    class_counts: np.ndarray = field(init=False)

    def __post_init__(self):
        lab = np.asarray(self.labels, dtype=np.int64)
        if lab.ndim != 1 or lab.shape[0] != self.features.rows:
            raise DimensionMismatch(
                f"labels length {lab.shape} does not match {self.features.rows} feature rows"
            )
        if lab.size == 0 or lab.min() < 0:
            raise MalformedFile("labels must be nonnegative integers")
        k = int(lab.max()) + 1
        counts = np.bincount(lab, minlength=k)
        if (counts == 0).any():
            missing = int(np.argwhere(counts == 0)[0][0])
            raise MalformedFile(f"class {missing} in [0, {k}) has no samples; labels must be dense")
        object.__setattr__(self, "labels", _freeze(lab))
        object.__setattr__(self, "class_counts", _freeze(counts))

    @property
    def n(self) -> int:
        return self.features.rows

    @property
    def k(self) -> int:
        return self.class_counts.shape[0]


@dataclass(frozen=True)
class ClassWeights:
    """Simplex vector over source classes."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1 or w.size < 1:
            raise DimensionMismatch("weights must be a non-empty vector")
        _check_finite(w, "class weights")
        if w.min() < -WEIGHT_CLAMP:
            raise MalformedFile(f"negative class weight {w.min():.3e} below tolerance")
        if abs(w.sum() - 1.0) > 1e-8:
            raise MalformedFile(f"class weights sum to {w.sum():.12g}, expected 1")
        object.__setattr__(self, "weights", _freeze(w))

    @property
    def k(self) -> int:
        return self.weights.shape[0]

    def support(self, threshold: float = WEIGHT_CLAMP) -> np.ndarray:
        """Dense indices of classes carrying weight above the threshold."""
        return np.flatnonzero(self.weights > threshold)


@dataclass(frozen=True)
class TransportPlan:
    """Nonnegative coupling matrix with its marginals and transport cost.

    ``dual_gap`` is the certified LP duality gap when the plan came from the
    exact solver, else None.
    """

    plan: np.ndarray
    source_marginal: np.ndarray
    target_marginal: np.ndarray
    objective: float
    dual_gap: float | None = None

    def __post_init__(self):
        p = np.asarray(self.plan, dtype=np.float64)
        mu = np.asarray(self.source_marginal, dtype=np.float64)
        nu = np.asarray(self.target_marginal, dtype=np.float64)
        if p.ndim != 2 or mu.shape != (p.shape[0],) or nu.shape != (p.shape[1],):
            raise DimensionMismatch("plan and marginal shapes disagree")
        _check_finite(p, "transport plan")
        if p.min() < -1e-12:
            raise MalformedFile(f"plan entry {p.min():.3e} is negative")
        row_err = np.abs(p.sum(axis=1) - mu).max()
        col_err = np.abs(p.sum(axis=0) - nu).max()
        if row_err > 1e-7 or col_err > 1e-7:
            raise MalformedFile(
                f"plan marginals violated: row err {row_err:.3e}, col err {col_err:.3e}"
            )
        object.__setattr__(self, "plan", _freeze(np.maximum(p, 0.0)))
        object.__setattr__(self, "source_marginal", _freeze(mu))
        object.__setattr__(self, "target_marginal", _freeze(nu))


@dataclass(frozen=True)
class DiscreteJointDistribution:
    """Finitely supported distribution over (feature vector, class id) pairs."""

    features: np.ndarray
    labels: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        m = np.asarray(self.masses, dtype=np.float64)
        if z.ndim != 2 or y.shape != (z.shape[0],) or m.shape != (z.shape[0],):
            raise DimensionMismatch("joint distribution arrays disagree on atom count")
        _check_finite(z, "joint distribution features")
        _check_finite(m, "joint distribution masses")
        if m.min() < 0:
            raise MalformedFile(f"negative atom mass {m.min():.3e}")
        if abs(m.sum() - 1.0) > 1e-8:
            raise MalformedFile(f"atom masses sum to {m.sum():.12g}, expected 1")
        object.__setattr__(self, "features", _freeze(z))
        object.__setattr__(self, "labels", _freeze(y))
        object.__setattr__(self, "masses", _freeze(m))

    @property
    def atoms(self) -> list[tuple[np.ndarray, int, float]]:
        return [
            (self.features[i], int(self.labels[i]), float(self.masses[i]))
            for i in range(self.masses.shape[0])
        ]

    @classmethod
    def from_dataset(cls, ds: LabeledDataset, sample_probs: np.ndarray | None = None,
                     label_ids: np.ndarray | None = None) -> "DiscreteJointDistribution":
        """Empirical joint of a dataset, optionally reweighted per sample.

        ``label_ids`` maps dense labels back to external class ids so joints
        from different domains can share one label vocabulary.
        """
        m = (np.full(ds.n, 1.0 / ds.n) if sample_probs is None
             else np.asarray(sample_probs, dtype=np.float64))
        y = ds.labels if label_ids is None else np.asarray(label_ids)[ds.labels]
        keep = m > 0
        mk = m[keep]
        return cls(ds.features.values[keep], y[keep], mk / mk.sum())


# ============================================================
# File formats
# ============================================================


def save_feature_matrix(matrix: FeatureMatrix, path, format: str = "binary") -> None:
    """Write a matrix in the binary (magic + u32 dims + f32 payload) or CSV format."""
    if format == "binary":
        with open(path, "wb") as f:
            f.write(_MAGIC)
            f.write(struct.pack("<II", matrix.rows, matrix.cols))
            f.write(matrix.values.astype("<f4").tobytes(order="C"))
    elif format == "csv":
        with open(path, "w", encoding="utf-8") as f:
            for row in matrix.values:
                f.write(",".join(f"{x:.17g}" for x in row))
                f.write("\n")
    else:
        raise ValueError(f"unknown format {format!r}")


def load_feature_matrix(path, format: str = "binary") -> FeatureMatrix:
    """Read a matrix written by :func:`save_feature_matrix`; validates finiteness."""
    if format == "binary":
        with open(path, "rb") as f:
            raw = f.read()
        if len(raw) < 12 or raw[:4] != _MAGIC:
            raise MalformedFile(f"{path}: missing {_MAGIC!r} magic header")
        rows, cols = struct.unpack("<II", raw[4:12])
        expected = 12 + 4 * rows * cols
        if rows < 1 or cols < 1 or len(raw) != expected:
            raise MalformedFile(
                f"{path}: header says {rows}x{cols} but file has {len(raw)} bytes, expected {expected}"
            )
        values = np.frombuffer(raw, dtype="<f4", offset=12).astype(np.float64).reshape(rows, cols)
    elif format == "csv":
        rows_out: list[list[float]] = []
        with open(path, "r", encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    rows_out.append([float(tok) for tok in line.split(",")])
                except ValueError as e:
                    raise MalformedFile(f"{path}:{lineno}: {e}") from e
                if len(rows_out[-1]) != len(rows_out[0]):
                    raise MalformedFile(
                        f"{path}:{lineno}: row has {len(rows_out[-1])} fields, expected {len(rows_out[0])}"
                    )
        if not rows_out:
            raise MalformedFile(f"{path}: no data rows")
        values = np.array(rows_out, dtype=np.float64)
    else:
        raise ValueError(f"unknown format {format!r}")
    return FeatureMatrix(values)


def densify_labels(raw: np.ndarray) -> tuple[np.ndarray, dict[int, int]]:
    """Re-index labels to 0..k-1 in first-appearance order.

    Returns the dense labels and the original-id -> dense-id mapping.
    Idempotent on already-dense labels.
    """
    raw = np.asarray(raw, dtype=np.int64)
    mapping: dict[int, int] = {}
    dense = np.empty_like(raw)
    for i, v in enumerate(raw.tolist()):
        if v not in mapping:
            mapping[v] = len(mapping)
        dense[i] = mapping[v]
    return dense, mapping


def save_labels(labels: np.ndarray, path) -> None:
    """Write one nonnegative integer label per line."""
    raw = np.asarray(labels)
    y = raw.astype(np.int64, copy=False) if raw.dtype.kind in "iu" else None
    if y is None:
        cast = np.asarray(raw, dtype=np.float64)
        if cast.ndim and not np.array_equal(cast, np.floor(cast)):
            raise MalformedFile("labels must be integer-valued")
        y = cast.astype(np.int64)
    if y.ndim != 1 or y.size == 0:
        raise DimensionMismatch("labels must be a non-empty vector")
    if y.min() < 0:
        raise MalformedFile(f"negative label {y.min()}")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(str(v) for v in y.tolist()))
        f.write("\n")


def load_labels(path) -> tuple[np.ndarray, dict[int, int]]:
    """Read one nonnegative integer per line; densify to 0..k-1.

    Returns (dense labels, original-id -> dense-id mapping).
    """
    raw: list[int] = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                v = int(line)
            except ValueError as e:
                raise MalformedFile(f"{path}:{lineno}: not an integer: {line!r}") from e
            if v < 0:
                raise MalformedFile(f"{path}:{lineno}: negative label {v}")
            raw.append(v)
    if not raw:
        raise EmptyFile(f"{path}: no labels")
    return densify_labels(np.array(raw, dtype=np.int64))


def clamp_weights(w: np.ndarray, threshold: float = WEIGHT_CLAMP) -> np.ndarray:
    """Zero out weights below the threshold and renormalize to sum 1."""
    w = np.where(np.asarray(w, dtype=np.float64) > threshold, w, 0.0)
    total = w.sum()
    if total <= 0:
        raise MalformedFile("all class weights clamped to zero")
    return w / total


def save_class_weights(w: ClassWeights, mapping: dict[int, int], path) -> None:
    """Write weights as JSON keyed by original class ids.

    Weights below the clamp threshold are written as 0.0 and the rest
    renormalized; ``support`` lists original ids that kept positive weight.
    """
    inverse = {dense: orig for orig, dense in mapping.items()}
    if len(inverse) != w.k:
        raise DimensionMismatch(f"mapping covers {len(inverse)} classes, weights have {w.k}")
    cleaned = clamp_weights(w.weights)
    doc = {
        "k": w.k,
        "weights": {str(inverse[i]): float(cleaned[i]) for i in range(w.k)},
        "support": sorted(int(inverse[i]) for i in np.flatnonzero(cleaned > 0)),
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def load_class_weights(path) -> dict[int, float]:
    """Read a weights JSON document back as original-id -> weight."""
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    try:
        return {int(cid): float(val) for cid, val in doc["weights"].items()}
    except (KeyError, TypeError, ValueError) as e:
        raise MalformedFile(f"{path}: not a weights document: {e}") from e


def load_vector_csv(path) -> np.ndarray:
    """Read a single numeric vector: one value per line or one comma-separated row."""
    with open(path, "r", encoding="utf-8") as f:
        tokens = [tok for line in f for tok in line.strip().split(",") if tok]
    if not tokens:
        raise EmptyFile(f"{path}: no values")
    try:
        vec = np.array([float(t) for t in tokens], dtype=np.float64)
    except ValueError as e:
        raise MalformedFile(f"{path}: {e}") from e
    _check_finite(vec, "vector")
    return vec
