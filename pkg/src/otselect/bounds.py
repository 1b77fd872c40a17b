"""Transfer-bound diagnostics for softmax heads on frozen features.

Every quantity in the bound

    eps_target(h') <= eps_source(h) + max{rho, 1} * W1_joint + alpha * beta * sigma_max(V_S - V_T)

is computed from data, and the inequalities behind it can be re-checked
numerically on discrete instances. ``rho`` is never claimed exactly: a
pairwise sample estimate gives a lower bound, and alpha * sigma_max(V) gives
an analytic upper bound for a linear-softmax head; soundness checks use the
upper bound. All randomized checks take explicit seeds.
"""

from __future__ import annotations

import math
import warnings as _warnings
from dataclasses import dataclass

import numpy as np

from .data import DiscreteJointDistribution, FeatureMatrix
from .distance import pairwise_distances
from .errors import (
    DimensionMismatch,
    InsufficientSamples,
    InvalidK,
    NonFiniteValue,
    RowNotSimplex,
    SupportMismatch,
)
from .ot import (
    OtProblem,
    conditional_wasserstein_term,
    joint_wasserstein,
    solve_exact_ot,
    wasserstein_distance,
)
from .pipeline import SoftmaxHead, weighted_cross_entropy


def softmax_lipschitz_constant(K: int) -> float:
    """sqrt(K-1)/K, the l2-to-l1 Lipschitz constant of the K-class softmax."""
    if int(K) != K or K < 2:
        raise InvalidK(f"need an integer K >= 2, got {K!r}")
    return math.sqrt(K - 1) / K

def verify_softmax_lipschitz(K: int, trials: int, seed: int) -> float:
    """Max of ||softmax(v) - softmax(v')||_1 / ||v - v'||_2 over random pairs.

    Logits are drawn zero-centered at scales 0.1, 1 and 10 (cycled across
    trials); pairs closer than 1e-12 are skipped.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    if K < 2:
        raise InvalidK(f"need K >= 2, got {K!r}")
    rng = np.random.default_rng(seed)
    scales = (0.1, 1.0, 10.0)
    best = 0.0
    for scale in scales:
        count = trials // len(scales) + (1 if scale == scales[0] else 0)
        count = max(count, 1)
        v = rng.normal(0.0, scale, size=(count, K))
        u = rng.normal(0.0, scale, size=(count, K))
        gaps = np.linalg.norm(v - u, axis=1)
        keep = gaps >= 1e-12
        if not keep.any():
            continue
        sv = _softmax_rows(v[keep])
        su = _softmax_rows(u[keep])
        ratios = np.abs(sv - su).sum(axis=1) / gaps[keep]
        best = max(best, float(ratios.max()))
    return best


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def largest_singular_value(M: np.ndarray) -> float:
    """sigma_max via power iteration on M^T M from the normalized all-ones vector.

    Iterates until the eigenvector estimate moves less than 1e-12 between
    steps (cap 1e5, then the best estimate is returned with a warning). A
    start vector orthogonal to the top singular direction is caught by
    canonical-basis probes: sigma_max is at least every column and row norm,
    so an estimate below that floor triggers one deterministic restart.
    """
    A = np.asarray(M, dtype=np.float64)
    if A.ndim != 2 or A.size == 0:
        raise DimensionMismatch("need a non-empty 2-d matrix")
    if not np.isfinite(A).all():
        raise NonFiniteValue("matrix entries must be finite")
    if not A.any():
        return 0.0

    col_norms = np.linalg.norm(A, axis=0)
    row_norms = np.linalg.norm(A, axis=1)
    floor = max(float(col_norms.max()), float(row_norms.max()))

    def run(x0: np.ndarray) -> tuple[float, bool]:
        x = x0 / np.linalg.norm(x0)
        for _ in range(100_000):
            y = A.T @ (A @ x)
            ny = np.linalg.norm(y)
            if ny == 0.0:
                return 0.0, True
            x_new = y / ny
            if np.abs(x_new - x).max() < 1e-12:
                return float(np.linalg.norm(A @ x_new)), True
            x = x_new
        return float(np.linalg.norm(A @ x)), False

    est, converged = run(np.ones(A.shape[1]))
    if est < floor * (1.0 - 1e-12):
        probe = np.zeros(A.shape[1])
        probe[int(np.argmax(col_norms))] = 1.0
        est2, conv2 = run(probe)
        est, converged = max(est, est2), converged and conv2
    if not converged:
        _warnings.warn(
            "power iteration hit the iteration cap; returning best estimate",
            RuntimeWarning,
        )
    return est


def induced_error(probs: np.ndarray, labels_onehot: np.ndarray,
                  masses: np.ndarray | None = None) -> float:
    """(1/2) * E ||h(x) - y||_1: the expected 0-1 error of the classifier that
    samples its label from the row distribution h(x). Uniform weights by
    default; pass ``masses`` for a weighted empirical measure."""
    P = np.asarray(probs, dtype=np.float64)
    Y = np.asarray(labels_onehot, dtype=np.float64)
    if P.ndim != 2 or P.shape != Y.shape:
        raise DimensionMismatch("probs and one-hot labels must have equal 2-d shapes")
    if not np.isfinite(P).all():
        raise NonFiniteValue("probability rows must be finite")
    row_sums = P.sum(axis=1)
    if P.min() < -1e-8 or np.abs(row_sums - 1.0).max() > 1e-8:
        raise RowNotSimplex("each probability row must lie in the simplex")
    if not ((Y == 0.0) | (Y == 1.0)).all() or not (Y.sum(axis=1) == 1.0).all():
        raise DimensionMismatch("labels must be exact one-hot rows")
    per_row = 0.5 * np.abs(P - Y).sum(axis=1)
    if masses is None:
        return float(per_row.mean())
    m = np.asarray(masses, dtype=np.float64)
    if m.shape != (P.shape[0],):
        raise DimensionMismatch("masses must align with probability rows")
    if m.min() < 0 or abs(m.sum() - 1.0) > 1e-8:
        raise RowNotSimplex("masses must be a probability vector")
    return float(m @ per_row)


def estimate_rho(head: SoftmaxHead, features: FeatureMatrix) -> tuple[float, float]:
    """(pairwise lower estimate, analytic upper bound alpha * sigma_max(V)).

    The lower value is max ||h(x)-h(x')||_1 / ||x-x'||_2 over sample pairs,
    a lower bound on the true Lipschitz modulus; pairs closer than 1e-12
    are skipped, and all-degenerate inputs are an error.
    """
    Z = features.values
    if Z.shape[0] < 2:
        raise InsufficientSamples("need at least two feature rows")
    P = head.predict_proba(Z)
    best = -1.0
    for i in range(Z.shape[0] - 1):
        dz = np.linalg.norm(Z[i + 1:] - Z[i], axis=1)
        keep = dz >= 1e-12
        if not keep.any():
            continue
        dp = np.abs(P[i + 1:] - P[i]).sum(axis=1)
        best = max(best, float((dp[keep] / dz[keep]).max()))
    if best < 0.0:
        raise InsufficientSamples("all sample pairs are degenerate")
    upper = softmax_lipschitz_constant(head.n_classes) * largest_singular_value(
        head.weight_matrix
    )
    return best, upper


def _onehot_for_head(joint: DiscreteJointDistribution, head: SoftmaxHead) -> np.ndarray:
    pos = head.class_position(joint.labels)
    Y = np.zeros((pos.size, head.n_classes))
    Y[np.arange(pos.size), pos] = 1.0
    return Y


def check_error_difference_bound(p: DiscreteJointDistribution,
                                 q: DiscreteJointDistribution,
                                 head: SoftmaxHead) -> tuple[float, float, bool]:
    """|induced error on p - induced error on q| against max{rho,1} * W1_joint.

    Uses the analytic upper bound for rho so a True result is sound; the
    joint ground cost is feature distance plus a 0-1 label term.
    """
    if p.features.shape[1] != q.features.shape[1]:
        raise DimensionMismatch("joints must share the feature dimension")
    err_p = induced_error(head.predict_proba(p.features), _onehot_for_head(p, head),
                          masses=p.masses)
    err_q = induced_error(head.predict_proba(q.features), _onehot_for_head(q, head),
                          masses=q.masses)
    lhs = abs(err_p - err_q)
    rho_upper = softmax_lipschitz_constant(head.n_classes) * largest_singular_value(
        head.weight_matrix
    )
    w1 = joint_wasserstein(p, q, label_cost=1.0)
    rhs = max(rho_upper, 1.0) * w1
    return lhs, rhs, bool(lhs <= rhs + 1e-9)


def assemble_transfer_bound(eps_source_pretrained: float, w1: float, rho: float,
                            alpha: float, beta: float, sigma_max_diff: float) -> float:
    """eps_source + max{rho, 1} * w1 + alpha * beta * sigma_max_diff."""
    vals = (eps_source_pretrained, w1, rho, alpha, beta, sigma_max_diff)
    if not all(math.isfinite(v) for v in vals):
        raise NonFiniteValue("bound terms must be finite")
    if min(w1, rho, alpha, beta, sigma_max_diff) < 0 or not 0 <= eps_source_pretrained <= 1:
        raise ValueError("bound terms out of range")
    return eps_source_pretrained + max(rho, 1.0) * w1 + alpha * beta * sigma_max_diff


def beta_bound(features: FeatureMatrix) -> float:
    """Largest row l2 norm; every evaluated feature vector is within it."""
    return float(np.linalg.norm(features.values, axis=1).max())


# ============================================================
# Full report
# ============================================================


@dataclass(frozen=True)
class BoundReport:
    """Every measured term of the transfer bound for one source/target pair.

    ``cond_term_source``, ``cond_term_target`` and ``rho_hat`` are None when
    not computable on the given data (conditional terms need a shared
    feature support; the pairwise rho estimate needs non-degenerate pairs).
    """

    eps_source: float
    eps_target: float
    w1_marginal: float
    w1_joint: float
    cond_term_source: float | None
    cond_term_target: float | None
    rho_hat: float | None
    rho_upper: float
    alpha: float
    beta: float
    sigma_max_diff: float
    bound_value: float
    holds: bool
    lambda_hat: float

    def to_json_dict(self) -> dict:
        return {
            "eps_source": self.eps_source,
            "eps_target": self.eps_target,
            "w1_marginal": self.w1_marginal,
            "w1_joint": self.w1_joint,
            "cond_term_source": self.cond_term_source,
            "cond_term_target": self.cond_term_target,
            "rho_hat": self.rho_hat,
            "rho_upper": self.rho_upper,
            "alpha": self.alpha,
            "beta": self.beta,
            "sigma_max_diff": self.sigma_max_diff,
            "bound_value": self.bound_value,
            "holds": self.holds,
            "empirical_lambda_hat": self.lambda_hat,
        }


def compute_bound_report(pretrained: SoftmaxHead, finetuned: SoftmaxHead,
                         source: DiscreteJointDistribution,
                         target: DiscreteJointDistribution,
                         *, label_cost: float = 1.0) -> BoundReport:
    """Measure every bound term between a weighted source joint and a target joint.

    Both heads must score the same class list so the weight-matrix difference
    is well defined; labels of both joints must belong to that list.
    ``lambda_hat`` is the smaller of the two heads' summed source+target
    errors, an empirical stand-in for the best joint error (it is a minimum
    over the two trained heads only, not over the hypothesis class).
    """
    if pretrained.class_list.shape != finetuned.class_list.shape or (
        pretrained.class_list != finetuned.class_list
    ).any():
        raise DimensionMismatch("heads must share an identical class list")
    if pretrained.weight_matrix.shape != finetuned.weight_matrix.shape:
        raise DimensionMismatch("heads must share the weight-matrix shape")

    src_onehot = _onehot_for_head(source, pretrained)
    tgt_onehot = _onehot_for_head(target, pretrained)
    src_feats = FeatureMatrix(source.features)
    tgt_feats = FeatureMatrix(target.features)

    eps_source = induced_error(pretrained.predict_proba(source.features),
                               src_onehot, masses=source.masses)
    eps_target = induced_error(finetuned.predict_proba(target.features),
                               tgt_onehot, masses=target.masses)

    D = pairwise_distances(src_feats, tgt_feats)
    w1_marginal = solve_exact_ot(OtProblem(D, source.masses, target.masses)).objective
    w1_joint = joint_wasserstein(source, target, label_cost=label_cost)

    def _cond(weighting: str) -> float | None:
        try:
            return conditional_wasserstein_term(source, target, weighting)
        except SupportMismatch:
            return None

    try:
        stacked = FeatureMatrix(np.vstack([source.features, target.features]))
        rho_hat, rho_upper = estimate_rho(pretrained, stacked)
    except InsufficientSamples:
        rho_hat = None
        rho_upper = softmax_lipschitz_constant(pretrained.n_classes) * (
            largest_singular_value(pretrained.weight_matrix)
        )

    alpha = softmax_lipschitz_constant(pretrained.n_classes)
    beta = max(beta_bound(src_feats), beta_bound(tgt_feats))
    sigma_max_diff = largest_singular_value(
        pretrained.weight_matrix - finetuned.weight_matrix
    )
    bound_value = assemble_transfer_bound(
        eps_source, w1_joint, rho_upper, alpha, beta, sigma_max_diff
    )

    def _joint_err(head: SoftmaxHead) -> float:
        a = induced_error(head.predict_proba(source.features), src_onehot,
                          masses=source.masses)
        b = induced_error(head.predict_proba(target.features), tgt_onehot,
                          masses=target.masses)
        return a + b

    lambda_hat = min(_joint_err(pretrained), _joint_err(finetuned))
    return BoundReport(
        eps_source=float(eps_source),
        eps_target=float(eps_target),
        w1_marginal=float(w1_marginal),
        w1_joint=float(w1_joint),
        cond_term_source=_cond("source"),
        cond_term_target=_cond("target"),
        rho_hat=rho_hat,
        rho_upper=float(rho_upper),
        alpha=float(alpha),
        beta=float(beta),
        sigma_max_diff=float(sigma_max_diff),
        bound_value=float(bound_value),
        holds=bool(eps_target <= bound_value + 1e-12),
        lambda_hat=float(lambda_hat),
    )


def end_to_end_bound_report(source, target_train, target_test, *, cfg=None,
                            source_class_ids=None, target_class_ids=None,
                            skip_finetune: bool = False,
                            label_cost: float = 1.0) -> BoundReport:
    """Select weights, train both heads over the union class space, and report.

    The bound compares one fixed output space before and after fine-tuning,
    so both heads are trained over the union of source and target class ids
    (rows of classes absent from a phase's data stay where initialization
    put them). The source joint carries the selection's sample weights; the
    target joint is the uniform empirical measure on the test split.
    With ``skip_finetune`` the fine-tuned head is the pre-trained head
    itself, which collapses the weight-shift term to exactly zero.
    """
    from .classlp import solve_class_weights, weights_to_sample_probabilities
    from .pipeline import TrainConfig, finetune_head, sort_by_class, train_head

    cfg = cfg or TrainConfig()
    src_ids = (np.arange(source.k) if source_class_ids is None
               else np.asarray(source_class_ids, dtype=np.int64))
    tgt_ids = (source.k + np.arange(target_train.k) if target_class_ids is None
               else np.asarray(target_class_ids, dtype=np.int64))
    union_ids = np.concatenate(
        [src_ids, np.array([c for c in tgt_ids.tolist() if c not in set(src_ids.tolist())],
                           dtype=np.int64)]
    )
    union_pos = {int(c): i for i, c in enumerate(union_ids)}

    source_sorted = sort_by_class(source)
    D = pairwise_distances(source_sorted.features, target_train.features)
    sol = solve_class_weights(D, source_sorted.class_counts)
    probs = weights_to_sample_probabilities(sol.weights, source_sorted.labels)

    src_pos = np.array([union_pos[int(src_ids[v])] for v in source_sorted.labels],
                       dtype=np.int64)
    from dataclasses import replace as _replace
    pretrained = train_head(source_sorted.features, src_pos, probs,
                            _replace(cfg, seed=cfg.seed * 4 + 1),
                            class_list=union_ids)
    if skip_finetune:
        finetuned = pretrained
    else:
        tgt_pos = np.array([union_pos[int(tgt_ids[v])] for v in target_train.labels],
                           dtype=np.int64)
        finetuned = finetune_head(target_train.features, tgt_pos, pretrained,
                                  _replace(cfg, seed=cfg.seed * 4 + 2),
                                  class_list=union_ids)

    source_joint = DiscreteJointDistribution.from_dataset(
        source_sorted, sample_probs=probs, label_ids=src_ids
    )
    target_joint = DiscreteJointDistribution.from_dataset(
        target_test, label_ids=tgt_ids
    )
    return compute_bound_report(pretrained, finetuned, source_joint, target_joint,
                                label_cost=label_cost)



# ============================================================
# Property suite
# ============================================================


def random_joint_pair_shared_support(rng: np.random.Generator, max_support: int = 6,
                                     dim: int = 2, max_labels: int = 4,
                                     equal_marginals: bool = False
                                     ) -> tuple[DiscreteJointDistribution,
                                                DiscreteJointDistribution]:
    """Two joints over one feature support with Dirichlet masses and conditionals.

    With ``equal_marginals`` both joints also share the feature marginal,
    the regime where the marginal-plus-conditional decomposition provably
    holds; otherwise each side draws its own marginal masses.
    """
    s = int(rng.integers(2, max_support + 1))
    L = int(rng.integers(2, max_labels + 1))
    z = rng.random((s, dim))
    shared_mz = rng.dirichlet(np.ones(s)) if equal_marginals else None

    def draw() -> DiscreteJointDistribution:
        mz = shared_mz if shared_mz is not None else rng.dirichlet(np.ones(s))
        cond = rng.dirichlet(np.ones(L), size=s)
        feats = np.repeat(z, L, axis=0)
        labels = np.tile(np.arange(L), s)
        masses = (mz[:, None] * cond).ravel()
        return DiscreteJointDistribution(feats, labels, masses / masses.sum())

    return draw(), draw()


def random_joint_pair(rng: np.random.Generator, n_labels: int, dim: int
                      ) -> tuple[DiscreteJointDistribution, DiscreteJointDistribution]:
    """Two unrelated small joints over a common label vocabulary."""

    def draw() -> DiscreteJointDistribution:
        na = int(rng.integers(2, 7))
        scale = float(rng.choice([0.3, 1.0, 3.0]))
        feats = rng.normal(0.0, scale, size=(na, dim))
        labels = rng.integers(0, n_labels, na)
        masses = rng.dirichlet(np.ones(na))
        return DiscreteJointDistribution(feats, labels, masses)

    return draw(), draw()


def _feature_marginals(p: DiscreteJointDistribution, q: DiscreteJointDistribution
                       ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    support: list[np.ndarray] = []
    index: dict[bytes, int] = {}
    for joint in (p, q):
        for i in range(joint.masses.size):
            key = joint.features[i].tobytes()
            if key not in index:
                index[key] = len(support)
                support.append(joint.features[i])

    def mass(joint: DiscreteJointDistribution) -> np.ndarray:
        v = np.zeros(len(support))
        for i in range(joint.masses.size):
            v[index[joint.features[i].tobytes()]] += joint.masses[i]
        return v

    return np.stack(support), mass(p), mass(q)


def decomposition_check(p: DiscreteJointDistribution, q: DiscreteJointDistribution
                        ) -> tuple[float, float, bool]:
    """Joint W1 against marginal W1 plus the smaller conditional term.

    The decomposition is checked, not assumed: it can fail on joints whose
    label structure is tied to where each distribution puts feature mass
    (see the shift-coupling test in the suite), so callers get the measured
    sides and the verdict rather than a guarantee.
    """
    Z, mp, mq = _feature_marginals(p, q)
    D = pairwise_distances(FeatureMatrix(Z), FeatureMatrix(Z))
    w1_marg = solve_exact_ot(OtProblem(D, mp, mq)).objective
    cond = min(conditional_wasserstein_term(p, q, "source"),
               conditional_wasserstein_term(p, q, "target"))
    lhs = joint_wasserstein(p, q, label_cost=1.0)
    rhs = w1_marg + cond
    return float(lhs), float(rhs), bool(lhs <= rhs + 1e-7)


def glued_decomposition_check(p: DiscreteJointDistribution,
                              q: DiscreteJointDistribution
                              ) -> tuple[float, float, bool]:
    """Joint W1 against marginal W1 plus conditionals along the marginal coupling.

    Unlike the same-atom decomposition, the conditional distance here is
    taken between p's conditional at z and q's conditional at z' for every
    (z, z') pair the optimal feature coupling uses. Gluing label couplings
    on top of that feature coupling yields a feasible joint coupling, so
    this inequality holds for every pair of joints.
    """
    Z, mp, mq = _feature_marginals(p, q)
    D = pairwise_distances(FeatureMatrix(Z), FeatureMatrix(Z))
    marg_plan = solve_exact_ot(OtProblem(D, mp, mq))

    index = {Z[i].tobytes(): i for i in range(Z.shape[0])}

    def conditionals(joint: DiscreteJointDistribution) -> dict[int, dict[int, float]]:
        out: dict[int, dict[int, float]] = {}
        for a in range(joint.masses.size):
            i = index[joint.features[a].tobytes()]
            y = int(joint.labels[a])
            out.setdefault(i, {})[y] = out.get(i, {}).get(y, 0.0) + float(joint.masses[a])
        return out

    cond_p = conditionals(p)
    cond_q = conditionals(q)
    labels = sorted({y for side in (cond_p, cond_q) for d in side.values() for y in d})
    cost01 = 1.0 - np.eye(len(labels))

    def vec(cond: dict[int, float]) -> np.ndarray:
        v = np.array([cond.get(y, 0.0) for y in labels])
        return v / v.sum()

    coupled = 0.0
    P = marg_plan.plan
    for i in range(P.shape[0]):
        for j in range(P.shape[1]):
            if P[i, j] <= 0.0 or i not in cond_p or j not in cond_q:
                continue
            coupled += P[i, j] * wasserstein_distance(cost01, vec(cond_p[i]), vec(cond_q[j]))
    lhs = joint_wasserstein(p, q, label_cost=1.0)
    rhs = marg_plan.objective + coupled
    return float(lhs), float(rhs), bool(lhs <= rhs + 1e-7)


def shift_coupling_counterexample(delta: float = 0.5, tau: float = 0.1
                                  ) -> tuple[DiscreteJointDistribution,
                                             DiscreteJointDistribution]:
    """A joint pair whose labels follow the mass shift between two feature atoms.

    Most source mass sits at z0 with label a while most target mass sits at
    z1 with label b, so transporting features forces label changes that the
    per-atom conditional terms never see. The decomposition check fails on
    this pair by about 1 - 2*tau for any atom separation delta > 0.
    """
    z = np.array([[0.0], [delta]])
    p = DiscreteJointDistribution(z, np.array([0, 0]), np.array([1.0 - tau, tau]))
    q = DiscreteJointDistribution(z, np.array([0, 1]), np.array([tau, 1.0 - tau]))
    return p, q


def _check_softmax_lipschitz(seed: int, trials: int) -> tuple[bool, str]:
    worst = ""
    ok = True
    for K in (2, 3, 5, 10):
        alpha = softmax_lipschitz_constant(K)
        ratio = verify_softmax_lipschitz(K, trials, seed + K)
        if ratio > alpha + 1e-9:
            ok = False
        worst += f" K={K}:{ratio:.6f}<={alpha:.6f}"
    return ok, worst.strip()


def _check_singular_surrogate(rng: np.random.Generator, pairs: int) -> tuple[bool, str]:
    worst = -np.inf
    for _ in range(pairs):
        n = int(rng.integers(1, 8))
        m = int(rng.integers(1, 8))
        M = rng.normal(0.0, float(rng.choice([0.1, 1.0, 10.0])), size=(n, m))
        u = rng.normal(size=m)
        norm = np.linalg.norm(u)
        if norm < 1e-12:
            continue
        u /= norm
        slack = float(np.linalg.norm(M @ u)) - largest_singular_value(M)
        worst = max(worst, slack)
    return bool(worst <= 1e-9), f"max ||Mu|| - sigma_max = {worst:.3e}"


def _check_induced_error_mc(rng: np.random.Generator, draws: int) -> tuple[bool, str]:
    ok = True
    detail = []
    for _ in range(5):
        n, K = 6, 4
        P = rng.dirichlet(np.ones(K), size=n)
        true = rng.integers(0, K, n)
        onehot = np.zeros((n, K))
        onehot[np.arange(n), true] = 1.0
        exact = induced_error(P, onehot)
        rows = rng.integers(0, n, draws)
        u = rng.random(draws)
        sampled = (u[:, None] > P[rows].cumsum(axis=1)).sum(axis=1)
        mc = float(np.mean(sampled != true[rows]))
        sigma = math.sqrt(max(exact * (1.0 - exact), 1e-12) / draws)
        if abs(mc - exact) > 3.0 * sigma + 1e-9:
            ok = False
        detail.append(f"{abs(mc - exact):.2e}<= {3 * sigma:.2e}")
    return ok, "; ".join(detail)


def _check_error_difference(rng: np.random.Generator, instances: int) -> tuple[bool, str]:
    failures = 0
    for _ in range(instances):
        K = int(rng.integers(2, 5))
        dim = int(rng.integers(1, 4))
        p, q = random_joint_pair(rng, K, dim)
        V = rng.normal(size=(K, dim)) * float(rng.choice([0.2, 1.0, 5.0]))
        head = SoftmaxHead(V, np.arange(K))
        _, _, holds = check_error_difference_bound(p, q, head)
        failures += 0 if holds else 1
    return failures == 0, f"{failures}/{instances} violations"


def _check_decomposition(rng: np.random.Generator, instances: int,
                         equal_marginals: bool = False) -> tuple[bool, str]:
    failures = 0
    worst = 0.0
    for _ in range(instances):
        p, q = random_joint_pair_shared_support(rng, equal_marginals=equal_marginals)
        lhs, rhs, holds = decomposition_check(p, q)
        if not holds:
            failures += 1
            worst = max(worst, lhs - rhs)
    return failures == 0, f"{failures}/{instances} violations, worst excess {worst:.3e}"


def _check_glued_decomposition(rng: np.random.Generator, instances: int) -> tuple[bool, str]:
    failures = 0
    worst = 0.0
    for _ in range(instances):
        p, q = random_joint_pair_shared_support(rng)
        lhs, rhs, holds = glued_decomposition_check(p, q)
        if not holds:
            failures += 1
            worst = max(worst, lhs - rhs)
    return failures == 0, f"{failures}/{instances} violations, worst excess {worst:.3e}"


def _check_bound_collapse(rng: np.random.Generator, instances: int) -> tuple[bool, str]:
    for _ in range(instances):
        eps = float(rng.random())
        w1 = float(rng.random() * 3)
        rho = float(rng.random() * 4)
        alpha = float(rng.random())
        beta = float(rng.random() * 5)
        got = assemble_transfer_bound(eps, w1, rho, alpha, beta, 0.0)
        if got != eps + max(rho, 1.0) * w1:
            return False, "collapse not exact"
    return True, "exact on all instances"


def _check_ot_metric(rng: np.random.Generator, instances: int) -> tuple[bool, str]:
    from .ot import wasserstein_distance

    worst = 0.0
    for _ in range(instances):
        s = int(rng.integers(2, 8))
        pts = rng.normal(size=(s, 2))
        D = pairwise_distances(FeatureMatrix(pts), FeatureMatrix(pts))
        mu = rng.dirichlet(np.ones(s))
        nu = rng.dirichlet(np.ones(s))
        rho_m = rng.dirichlet(np.ones(s))
        self_dist = wasserstein_distance(D, mu, mu)
        ab = wasserstein_distance(D, mu, nu)
        ba = wasserstein_distance(D, nu, mu)
        ac = wasserstein_distance(D, mu, rho_m)
        cb = wasserstein_distance(D, rho_m, nu)
        worst = max(worst, self_dist, abs(ab - ba) - 1e-8, ab - (ac + cb) - 1e-7)
    return bool(worst <= 1e-8), f"worst slack {worst:.3e}"


def _check_ot_duality(rng: np.random.Generator, instances: int) -> tuple[bool, str]:
    worst = 0.0
    for _ in range(instances):
        n = int(rng.integers(2, 12))
        m = int(rng.integers(2, 12))
        C = rng.random((n, m)) * float(rng.choice([1.0, 50.0]))
        mu = rng.dirichlet(np.ones(n))
        nu = rng.dirichlet(np.ones(m))
        plan = solve_exact_ot(OtProblem(C, mu, nu))
        gap = plan.dual_gap if plan.dual_gap is not None else np.inf
        rel = gap / (1.0 + abs(plan.objective))
        worst = max(worst, rel)
    return bool(worst <= 1e-7), f"worst relative duality gap {worst:.3e}"


def _check_sinkhorn_feasibility(rng: np.random.Generator, instances: int) -> tuple[bool, str]:
    from .sinkhorn import sinkhorn_class_weights

    worst_col = 0.0
    worst_spread = 0.0
    for _ in range(instances):
        counts = rng.integers(2, 5, size=int(rng.integers(2, 4)))
        n = int(counts.sum())
        m = int(rng.integers(3, 7))
        D = rng.random((n, m))
        sol = sinkhorn_class_weights(D, counts)
        P = sol.plan.plan
        worst_col = max(worst_col, float(np.abs(P.sum(axis=0) - 1.0 / m).max()))
        start = 0
        for c in counts:
            block = P[start:start + c].sum(axis=1)
            worst_spread = max(worst_spread, float(block.max() - block.min()))
            start += c
    ok = worst_col <= 1e-9 and worst_spread <= 1e-6
    return ok, f"col dev {worst_col:.2e}, row spread {worst_spread:.2e}"


def _check_head_gradient(rng: np.random.Generator, instances: int) -> tuple[bool, str]:
    worst = 0.0
    for _ in range(instances):
        n, d, K = 12, 3, 4
        Z = rng.normal(size=(n, d))
        V = rng.normal(size=(K, d)) * 0.5
        y = rng.integers(0, K, n)
        p = rng.dirichlet(np.ones(n))
        l2 = float(rng.choice([0.0, 0.1]))
        _, grad = weighted_cross_entropy(V, Z, y, p, l2)
        num = np.zeros_like(V)
        h = 1e-6
        for a in range(K):
            for b in range(d):
                Vp = V.copy()
                Vp[a, b] += h
                Vm = V.copy()
                Vm[a, b] -= h
                lp, _ = weighted_cross_entropy(Vp, Z, y, p, l2)
                lm, _ = weighted_cross_entropy(Vm, Z, y, p, l2)
                num[a, b] = (lp - lm) / (2 * h)
        rel = float(np.abs(num - grad).max() / (1.0 + np.abs(grad).max()))
        worst = max(worst, rel)
    return bool(worst <= 1e-6), f"max relative gradient error {worst:.3e}"


def run_verification_suite(seed: int, trials: int) -> dict:
    """Run every numerical property check; returns a JSON-ready summary.

    ``trials`` controls the sampling effort of the Monte Carlo checks; the
    fixed-size inequality suites always run at their full instance counts.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    rng = np.random.default_rng(seed)
    checks = [
        ("softmax_lipschitz", lambda: _check_softmax_lipschitz(seed, trials)),
        ("singular_value_surrogate",
         lambda: _check_singular_surrogate(rng, min(max(trials, 100), 1000))),
        ("induced_error_monte_carlo", lambda: _check_induced_error_mc(rng, max(trials, 1000))),
        ("error_difference_bound", lambda: _check_error_difference(rng, 200)),
        ("joint_decomposition", lambda: _check_decomposition(rng, 200)),
        ("joint_decomposition_equal_marginals",
         lambda: _check_decomposition(rng, 200, equal_marginals=True)),
        ("joint_decomposition_glued", lambda: _check_glued_decomposition(rng, 100)),
        ("transfer_bound_collapse", lambda: _check_bound_collapse(rng, 100)),
        ("ot_metric_properties", lambda: _check_ot_metric(rng, 40)),
        ("ot_duality_gap", lambda: _check_ot_duality(rng, 40)),
        ("sinkhorn_feasibility", lambda: _check_sinkhorn_feasibility(rng, 8)),
        ("training_gradient", lambda: _check_head_gradient(rng, 5)),
    ]
    results = []
    for name, fn in checks:
        passed, detail = fn()
        results.append({"name": name, "passed": bool(passed), "detail": detail})
    return {
        "seed": int(seed),
        "trials": int(trials),
        "checks": results,
        "all_passed": all(r["passed"] for r in results),
    }
