"""Pre-train / fine-tune pipeline on fixed embeddings, with baselines.

The downstream model is a single softmax head (a k x p weight matrix, no
bias) trained by seeded mini-batch gradient descent on a weighted
cross-entropy. Features are never modified: fine-tuning trains a fresh head
on target data, initialized from the pre-trained head wherever class ids
are shared and from zeros elsewhere.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .classlp import solve_class_weights, weights_to_sample_probabilities
from .data import ClassWeights, FeatureMatrix, LabeledDataset
from .distance import pairwise_distances
from .errors import (
    AllZeroProbabilities,
    DegenerateInput,
    DimensionMismatch,
    MalformedFile,
    UnknownLabel,
)
from .ot import OtProblem, solve_exact_ot
from .sinkhorn import SinkhornConfig, sinkhorn_class_weights

PIPELINE_METHODS = ("wass", "wass-sinkhorn", "all", "rnd", "mn")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.5
    epochs: int = 200
    batch_size: int = 32
    seed: int = 0
    l2_penalty: float = 0.0
    early_stop_patience: int = 5

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.l2_penalty < 0:
            raise ValueError("l2_penalty must be nonnegative")


@dataclass(frozen=True)
class SoftmaxHead:
    """Linear logits over a fixed class list; probabilities via row softmax."""

    weight_matrix: np.ndarray
    class_list: np.ndarray

    def __post_init__(self):
        V = np.ascontiguousarray(self.weight_matrix, dtype=np.float64)
        cls = np.asarray(self.class_list, dtype=np.int64)
        if V.ndim != 2 or cls.shape != (V.shape[0],):
            raise DimensionMismatch("weight matrix rows must match the class list")
        if not np.isfinite(V).all():
            raise MalformedFile("head weights must be finite")
        if len(set(cls.tolist())) != cls.size:
            raise MalformedFile("class list has duplicate ids")
        V.setflags(write=False)
        cls.setflags(write=False)
        object.__setattr__(self, "weight_matrix", V)
        object.__setattr__(self, "class_list", cls)

    @property
    def n_classes(self) -> int:
        return self.weight_matrix.shape[0]

    def predict_logits(self, features: np.ndarray) -> np.ndarray:
        return np.asarray(features, dtype=np.float64) @ self.weight_matrix.T

    def predict_proba(self, features: np.ndarray) -> np.ndarray:
        return softmax(self.predict_logits(features))

    def class_position(self, class_ids: np.ndarray) -> np.ndarray:
        """Indices of the given external ids within this head's output axis."""
        lookup = {int(c): i for i, c in enumerate(self.class_list)}
        try:
            return np.array([lookup[int(c)] for c in np.atleast_1d(class_ids)], dtype=np.int64)
        except KeyError as e:
            raise UnknownLabel(f"label {e.args[0]} not among head classes") from e


@dataclass(frozen=True)
class EvalReport:
    zero_one_error: float
    cross_entropy: float
    per_class_accuracy: np.ndarray
    n_eval: int

    @property
    def accuracy(self) -> float:
        return 1.0 - self.zero_one_error


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def weighted_cross_entropy(V: np.ndarray, features: np.ndarray, label_idx: np.ndarray,
                           sample_probs: np.ndarray, l2_penalty: float = 0.0
                           ) -> tuple[float, np.ndarray]:
    """Loss sum_j p_j * CE_j + (l2/2)||V||_F^2 and its exact gradient in V."""
    logits = features @ V.T
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(label_idx.size)
    log_prob = shifted[rows, label_idx] - log_norm
    loss = -float(sample_probs @ log_prob) + 0.5 * l2_penalty * float(np.sum(V * V))
    delta = np.exp(shifted - log_norm[:, None])
    delta[rows, label_idx] -= 1.0
    grad = (delta * sample_probs[:, None]).T @ features + l2_penalty * V
    return loss, grad


def _validate_probs(sample_probs: np.ndarray, n: int) -> np.ndarray:
    p = np.asarray(sample_probs, dtype=np.float64)
    if p.shape != (n,):
        raise DimensionMismatch(f"sample_probs shape {p.shape} does not match {n} rows")
    if not np.isfinite(p).all() or p.min() < 0:
        raise MalformedFile("sample_probs must be finite and nonnegative")
    total = p.sum()
    if total == 0.0:
        raise DegenerateInput("all sample probabilities are zero")
    if abs(total - 1.0) > 1e-8:
        raise MalformedFile(f"sample probabilities sum to {total:.12g}, expected 1")
    return p


def _fit(V0: np.ndarray, Z: np.ndarray, label_idx: np.ndarray, p: np.ndarray,
         cfg: TrainConfig) -> np.ndarray:
    """Mini-batch GD on the weighted cross-entropy; returns the best-loss V.

    The per-batch l2 term is scaled by the batch fraction so one epoch's
    updates sum to one pass of the full objective's gradient. Training stops
    early when the full loss has not improved for `early_stop_patience`
    consecutive epochs (patience 0 disables the check).
    """
    rng = np.random.default_rng(cfg.seed)
    n = label_idx.size
    V = V0.copy()
    best_loss = np.inf
    best_V = V.copy()
    stall = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            _, grad = weighted_cross_entropy(
                V, Z[idx], label_idx[idx], p[idx], cfg.l2_penalty * idx.size / n
            )
            V -= cfg.learning_rate * grad
        loss, _ = weighted_cross_entropy(V, Z, label_idx, p, cfg.l2_penalty)
        if loss < best_loss - 1e-12:
            best_loss = loss
            best_V = V.copy()
            stall = 0
        else:
            stall += 1
            if cfg.early_stop_patience > 0 and stall > cfg.early_stop_patience:
                break
    return best_V


def train_head(features: FeatureMatrix, labels: np.ndarray, sample_probs: np.ndarray,
               cfg: TrainConfig, class_list: np.ndarray | None = None) -> SoftmaxHead:
    """Train a softmax head from zeros on importance-weighted cross-entropy.

    ``labels`` are positions into ``class_list`` (identity list by default).
    Deterministic given the config seed.
    """
    y = np.asarray(labels, dtype=np.int64)
    if y.shape != (features.rows,):
        raise DimensionMismatch("labels must align with feature rows")
    k_out = int(y.max()) + 1 if class_list is None else len(class_list)
    cls = np.arange(k_out) if class_list is None else np.asarray(class_list, dtype=np.int64)
    if y.min() < 0 or y.max() >= k_out:
        raise DimensionMismatch(f"labels must lie in [0, {k_out})")
    p = _validate_probs(sample_probs, features.rows)
    V = _fit(np.zeros((k_out, features.cols)), features.values, y, p, cfg)
    return SoftmaxHead(V, cls)


def finetune_head(features: FeatureMatrix, labels: np.ndarray, base: SoftmaxHead | None,
                  cfg: TrainConfig, class_list: np.ndarray | None = None) -> SoftmaxHead:
    """Train a fresh head on target data; features stay frozen.

    Rows are initialized from ``base`` for class ids the two heads share and
    from zeros otherwise, then trained with uniform per-sample weight.
    """
    y = np.asarray(labels, dtype=np.int64)
    if y.shape != (features.rows,):
        raise DimensionMismatch("labels must align with feature rows")
    k_out = int(y.max()) + 1 if class_list is None else len(class_list)
    cls = np.arange(k_out) if class_list is None else np.asarray(class_list, dtype=np.int64)
    if y.min() < 0 or y.max() >= k_out:
        raise DimensionMismatch(f"labels must lie in [0, {k_out})")
    V0 = np.zeros((k_out, features.cols))
    if base is not None:
        if base.weight_matrix.shape[1] != features.cols:
            raise DimensionMismatch("base head feature dimension does not match")
        base_lookup = {int(c): i for i, c in enumerate(base.class_list)}
        for pos, cid in enumerate(cls.tolist()):
            if cid in base_lookup:
                V0[pos] = base.weight_matrix[base_lookup[cid]]
    p = np.full(features.rows, 1.0 / features.rows)
    V = _fit(V0, features.values, y, p, cfg)
    return SoftmaxHead(V, cls)


def evaluate(head: SoftmaxHead, features: FeatureMatrix, labels: np.ndarray) -> EvalReport:
    """Exact empirical 0-1 error and mean cross-entropy under argmax prediction.

    ``labels`` are external class ids and must all be known to the head;
    argmax ties resolve toward the smallest class index.
    """
    pos = head.class_position(np.asarray(labels))
    if pos.size != features.rows:
        raise DimensionMismatch("labels must align with feature rows")
    logits = head.predict_logits(features.values)
    pred = np.argmax(logits, axis=1)
    zero_one = float(np.mean(pred != pos))

    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    ce = float(np.mean(log_norm - shifted[np.arange(pos.size), pos]))

    per_class = np.zeros(head.n_classes)
    for c in range(head.n_classes):
        mask = pos == c
        if mask.any():
            per_class[c] = float(np.mean(pred[mask] == c))
    return EvalReport(zero_one, ce, per_class, int(pos.size))


def baseline_weights(method: str, source: LabeledDataset, target: FeatureMatrix,
                     seed: int, mn_top: int = 3) -> ClassWeights:
    """ALL: uniform. RND: uniform over a seeded random nonempty class subset.
    MN: uniform over the ``mn_top`` classes whose mean embedding is closest
    to the target's overall mean (all classes when k < mn_top)."""
    k = source.k
    method = method.lower()
    if method == "all":
        return ClassWeights(np.full(k, 1.0 / k))
    if method == "rnd":
        rng = np.random.default_rng(seed)
        mask = np.zeros(k, dtype=bool)
        while not mask.any():
            mask = rng.integers(0, 2, size=k).astype(bool)
        w = mask / mask.sum()
        return ClassWeights(w)
    if method == "mn":
        means = np.stack([
            source.features.values[source.labels == i].mean(axis=0) for i in range(k)
        ])
        target_mean = target.values.mean(axis=0)
        dists = np.linalg.norm(means - target_mean, axis=1)
        chosen = np.argsort(dists, kind="stable")[: min(mn_top, k)]
        w = np.zeros(k)
        w[chosen] = 1.0 / chosen.size
        return ClassWeights(w)
    raise ValueError(f"unknown baseline method {method!r}")


def resample_fixed_budget(dataset: LabeledDataset, sample_probs: np.ndarray,
                          budget: int, seed: int) -> tuple[LabeledDataset, np.ndarray]:
    """Draw ``budget`` samples i.i.d. with replacement by the given probabilities.

    Classes that receive no draws disappear, so labels are re-densified;
    the second return value maps each new dense id back to the original one.
    """
    if budget < 1:
        raise ValueError("budget must be at least 1")
    p = np.asarray(sample_probs, dtype=np.float64)
    if p.shape != (dataset.n,):
        raise DimensionMismatch("sample_probs must align with dataset rows")
    total = p.sum()
    if total <= 0:
        raise AllZeroProbabilities("no sample has positive probability")
    rng = np.random.default_rng(seed)
    idx = rng.choice(dataset.n, size=budget, replace=True, p=p / total)
    raw = dataset.labels[idx]
    dense = np.empty_like(raw)
    kept: list[int] = []
    remap: dict[int, int] = {}
    for i, v in enumerate(raw.tolist()):
        if v not in remap:
            remap[v] = len(kept)
            kept.append(v)
        dense[i] = remap[v]
    ds = LabeledDataset(FeatureMatrix(dataset.features.values[idx]), dense)
    return ds, np.array(kept, dtype=np.int64)


# ============================================================
# Orchestration
# ============================================================


@dataclass(frozen=True)
class PipelineResult:
    method: str
    weights: ClassWeights
    support_size: int
    w1_objective: float
    report: EvalReport
    pretrained: SoftmaxHead
    finetuned: SoftmaxHead
    warnings: tuple[str, ...] = ()


def sort_by_class(dataset: LabeledDataset) -> LabeledDataset:
    """Stable reorder so each class occupies one contiguous row block."""
    order = np.argsort(dataset.labels, kind="stable")
    return LabeledDataset(FeatureMatrix(dataset.features.values[order]), dataset.labels[order])


def select_weights(method: str, source_sorted: LabeledDataset, target: FeatureMatrix,
                   seed: int, mn_top: int = 3,
                   sinkhorn_cfg: SinkhornConfig | None = None
                   ) -> tuple[ClassWeights, float, tuple[str, ...]]:
    """Class weights for any method plus the transport cost they achieve.

    For baselines the cost is evaluated by an exact fixed-marginal solve at
    the chosen weights, so all methods report a comparable objective.
    """
    D = pairwise_distances(source_sorted.features, target)
    counts = source_sorted.class_counts
    warnings: tuple[str, ...] = ()
    if method == "wass":
        sol = solve_class_weights(D, counts)
        return sol.weights, sol.objective, warnings
    if method == "wass-sinkhorn":
        sol = sinkhorn_class_weights(D, counts, sinkhorn_cfg)
        if sol.warning:
            warnings = (sol.warning,)
        return sol.weights, sol.objective, warnings
    w = baseline_weights(method, source_sorted, target, seed, mn_top)
    mu = np.repeat(w.weights / counts, counts)
    nu = np.full(target.rows, 1.0 / target.rows)
    obj = solve_exact_ot(OtProblem(D, mu, nu)).objective
    return w, obj, warnings


def run_pipeline(source: LabeledDataset, target_train: LabeledDataset,
                 target_test: LabeledDataset, *, method: str = "wass",
                 cfg: TrainConfig | None = None, budget: int = 0, mn_top: int = 3,
                 sinkhorn_cfg: SinkhornConfig | None = None,
                 source_class_ids: np.ndarray | None = None,
                 target_class_ids: np.ndarray | None = None) -> PipelineResult:
    """Select source classes, pre-train on them, fine-tune on target, evaluate.

    Class id arrays map each dataset's dense labels to external ids; the
    default treats target classes as disjoint from source classes. With a
    positive ``budget`` the source set is resampled to that many rows before
    pre-training; otherwise importance weights enter the loss directly.
    Each phase derives its own seed from the config seed.
    """
    if method not in PIPELINE_METHODS:
        raise ValueError(f"method must be one of {PIPELINE_METHODS}, got {method!r}")
    cfg = cfg or TrainConfig()
    src_ids = (np.arange(source.k) if source_class_ids is None
               else np.asarray(source_class_ids, dtype=np.int64))
    tgt_ids = (source.k + np.arange(target_train.k) if target_class_ids is None
               else np.asarray(target_class_ids, dtype=np.int64))

    source_sorted = sort_by_class(source)
    weights, w1, warns = select_weights(
        method, source_sorted, target_train.features, cfg.seed, mn_top, sinkhorn_cfg
    )
    probs = weights_to_sample_probabilities(weights, source_sorted.labels)

    pre_cfg = replace(cfg, seed=cfg.seed * 4 + 1)
    if budget > 0:
        resampled, kept = resample_fixed_budget(
            source_sorted, probs, budget, seed=cfg.seed * 4 + 3
        )
        pretrained = train_head(
            resampled.features, resampled.labels,
            np.full(resampled.n, 1.0 / resampled.n), pre_cfg, class_list=src_ids[kept],
        )
    else:
        pretrained = train_head(
            source_sorted.features, source_sorted.labels, probs, pre_cfg,
            class_list=src_ids,
        )

    fine_cfg = replace(cfg, seed=cfg.seed * 4 + 2)
    finetuned = finetune_head(
        target_train.features, target_train.labels, pretrained, fine_cfg,
        class_list=tgt_ids,
    )
    report = evaluate(finetuned, target_test.features, tgt_ids[target_test.labels])
    support = int(weights.support().size)
    return PipelineResult(method, weights, support, float(w1), report,
                          pretrained, finetuned, warns)


# ============================================================
# Head serialization
# ============================================================


def save_head(head: SoftmaxHead, path) -> None:
    doc = {"classes": head.class_list.tolist(), "matrix": head.weight_matrix.tolist()}
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f)
        f.write("\n")


def load_head(path) -> SoftmaxHead:
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    try:
        return SoftmaxHead(np.array(doc["matrix"], dtype=np.float64),
                           np.array(doc["classes"], dtype=np.int64))
    except (KeyError, TypeError, ValueError) as e:
        raise MalformedFile(f"{path}: not a head document: {e}") from e
