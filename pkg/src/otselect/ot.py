"""Exact discrete optimal transport with fixed marginals.

The solver is a primal simplex specialized to transportation structure:
northwest-corner initialization, spanning-tree bases, cycle pivoting.
Degeneracy is removed up front by the standard marginal perturbation
(1e-12 scaled by row index) and the perturbation is dropped again when the
final plan is rebuilt from the optimal basis. The most-negative-reduced-cost
entering rule is used while progress is made; Bland's rule takes over after
a run of degenerate pivots so the solve cannot cycle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import DiscreteJointDistribution, TransportPlan
from .errors import (
    DimensionMismatch,
    InfeasibleMarginals,
    MalformedFile,
    SolverFailure,
    SupportMismatch,
)

_PERTURB = 1e-12


@dataclass(frozen=True)
class OtProblem:
    """Cost matrix plus source/target marginals of equal total mass."""

    cost: np.ndarray
    mu: np.ndarray
    nu: np.ndarray

    def __post_init__(self):
        c = np.ascontiguousarray(self.cost, dtype=np.float64)
        mu = np.ascontiguousarray(self.mu, dtype=np.float64)
        nu = np.ascontiguousarray(self.nu, dtype=np.float64)
        if c.ndim != 2 or mu.shape != (c.shape[0],) or nu.shape != (c.shape[1],):
            raise DimensionMismatch(
                f"cost {c.shape} incompatible with marginals {mu.shape}, {nu.shape}"
            )
        if not np.isfinite(c).all() or c.min() < 0:
            raise MalformedFile("cost matrix must be finite and nonnegative")
        if mu.min() < 0 or nu.min() < 0:
            raise InfeasibleMarginals("marginals must be nonnegative")
        if abs(mu.sum() - 1.0) > 1e-8 or abs(nu.sum() - 1.0) > 1e-8:
            raise InfeasibleMarginals(
                f"marginals must each sum to 1: {mu.sum():.12g} vs {nu.sum():.12g}"
            )
        object.__setattr__(self, "cost", c)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "nu", nu)


def _northwest_corner(a: np.ndarray, b: np.ndarray) -> tuple[list[int], list[int]]:
    """Staircase spanning tree of n+m-1 cells; values are resolved separately."""
    n, m = a.size, b.size
    a = a.copy()
    b = b.copy()
    bi: list[int] = []
    bj: list[int] = []
    i = j = 0
    for _ in range(n + m - 1):
        bi.append(i)
        bj.append(j)
        q = a[i] if a[i] <= b[j] else b[j]
        a[i] -= q
        b[j] -= q
        if i == n - 1 and j == m - 1:
            break
        if i == n - 1:
            j += 1
        elif j == m - 1:
            i += 1
        elif a[i] < b[j]:
            i += 1
        elif a[i] > b[j]:
            j += 1
        else:
            i += 1
    return bi, bj


def _tree_values(bi: list[int], bj: list[int], mu: np.ndarray, nu: np.ndarray) -> np.ndarray:
    """Basic-variable values of the spanning tree for the given marginals.

    Leaf elimination: a degree-1 node forces its single incident edge.
    """
    n, m = mu.size, nu.size
    nb = len(bi)
    incident: list[list[int]] = [[] for _ in range(n + m)]
    for e in range(nb):
        incident[bi[e]].append(e)
        incident[n + bj[e]].append(e)
    deg = [len(lst) for lst in incident]
    need = np.concatenate([mu, nu])
    used = [False] * nb
    vals = np.zeros(nb)
    stack = [v for v in range(n + m) if deg[v] == 1]
    while stack:
        v = stack.pop()
        if deg[v] != 1:
            continue
        e = next(ei for ei in incident[v] if not used[ei])
        used[e] = True
        vals[e] = need[v]
        other = n + bj[e] if v < n else bi[e]
        need[other] -= need[v]
        need[v] = 0.0
        deg[v] -= 1
        deg[other] -= 1
        if deg[other] == 1:
            stack.append(other)
    return vals


def _compute_duals(adj: list[dict[int, int]], cost: np.ndarray, n: int, m: int
                   ) -> tuple[np.ndarray, np.ndarray]:
    """Dual potentials with u[0] = 0, propagated over the basis tree."""
    u = np.empty(n)
    v = np.empty(m)
    seen = [False] * (n + m)
    u[0] = 0.0
    seen[0] = True
    stack = [0]
    while stack:
        node = stack.pop()
        for other in adj[node]:
            if seen[other]:
                continue
            seen[other] = True
            if node < n:
                v[other - n] = cost[node, other - n] - u[node]
            else:
                u[other] = cost[other, node - n] - v[node - n]
            stack.append(other)
    return u, v


def solve_exact_ot(problem: OtProblem, max_iters: int | None = None) -> TransportPlan:
    """Optimal coupling between the problem's marginals under its cost.

    Returns a plan whose objective is the exact W1 value; optimality is
    certified by the attached LP duality gap (primal minus a dual-feasible
    objective built from the terminal potentials).
    """
    C, mu, nu = problem.cost, problem.mu, problem.nu
    n, m = C.shape

    if n == 1 or m == 1:
        plan = np.outer(mu, nu) / mu.sum() if mu.sum() > 0 else np.zeros((n, m))
        obj = float(np.sum(C * plan))
        return TransportPlan(plan, mu, nu, obj, dual_gap=0.0)

    # Perturb to a generically non-degenerate instance; the basis found is
    # optimal for the original marginals too (optimality depends on C only).
    mu_p = mu + _PERTURB * np.arange(1, n + 1)
    nu_p = nu.copy()
    nu_p[-1] += _PERTURB * (n * (n + 1) // 2)
    nu_p *= mu_p.sum() / nu_p.sum()

    bi, bj = _northwest_corner(mu_p, nu_p)
    vals = _tree_values(bi, bj, mu_p, nu_p)
    adj: list[dict[int, int]] = [dict() for _ in range(n + m)]
    for e in range(len(bi)):
        adj[bi[e]][n + bj[e]] = e
        adj[n + bj[e]][bi[e]] = e

    scale = 1.0 + float(C.max(initial=0.0))
    rc_tol = 1e-11 * scale
    cap = max_iters if max_iters is not None else 20 * n * m + 50 * (n + m) + 200
    degenerate_run = 0
    bland = False

    for _ in range(cap):
        u, v = _compute_duals(adj, C, n, m)
        rc = C - u[:, None] - v[None, :]
        if bland:
            flat = np.flatnonzero(rc.ravel() < -rc_tol)
            if flat.size == 0:
                break
            ei, ej = divmod(int(flat[0]), m)
        else:
            pos = int(np.argmin(rc))
            ei, ej = divmod(pos, m)
            if rc[ei, ej] >= -rc_tol:
                break

        # Path from row node ei to column node ej through the basis tree.
        start, goal = ei, n + ej
        parent = {start: -1}
        stack = [start]
        while stack:
            node = stack.pop()
            if node == goal:
                break
            for other in adj[node]:
                if other not in parent:
                    parent[other] = node
                    stack.append(other)
        path = [goal]
        while path[-1] != start:
            path.append(parent[path[-1]])
        path.reverse()

        # Cells along the path alternate -theta, +theta starting at the cell
        # between path[0] (row ei) and path[1].
        cycle_edges = []
        for a_node, b_node in zip(path, path[1:]):
            cycle_edges.append(adj[a_node][b_node])
        minus = cycle_edges[0::2]
        theta = np.inf
        leave = -1
        for e in minus:
            if vals[e] < theta - 1e-18:
                theta = vals[e]
                leave = e
        for e in minus:
            vals[e] -= theta
        for e in cycle_edges[1::2]:
            vals[e] += theta

        li, lj = bi[leave], bj[leave]
        del adj[li][n + lj]
        del adj[n + lj][li]
        bi[leave], bj[leave] = ei, ej
        vals[leave] = theta
        adj[ei][n + ej] = leave
        adj[n + ej][ei] = leave

        if theta <= 1e-14:
            degenerate_run += 1
            if degenerate_run > 2 * (n + m):
                bland = True
        else:
            degenerate_run = 0
            bland = False
    else:
        raise SolverFailure(f"transportation simplex hit the {cap}-pivot cap")

    # Rebuild the plan for the unperturbed marginals from the optimal basis.
    final_vals = _tree_values(bi, bj, mu, nu)
    if final_vals.min() < -1e-8:
        raise SolverFailure(f"basis infeasible after de-perturbation: {final_vals.min():.3e}")
    plan = np.zeros((n, m))
    plan[bi, bj] = np.maximum(final_vals, 0.0)
    objective = float(np.sum(C * plan))

    # Rigorous certificate: shift u until (u, v) is dual feasible, then gap.
    violation = max(0.0, float((u[:, None] + v[None, :] - C).max()))
    dual_obj = float(u @ mu + v @ nu) - violation * float(mu.sum())
    gap = max(objective - dual_obj, 0.0)
    return TransportPlan(plan, mu, nu, objective, dual_gap=gap)


def wasserstein_distance(cost: np.ndarray, mu: np.ndarray, nu: np.ndarray) -> float:
    """Convenience wrapper: exact W1 objective only."""
    return solve_exact_ot(OtProblem(cost, mu, nu)).objective


# ============================================================
# Joint and conditional distances over feature x label space
# ============================================================


def _joint_cost(p: DiscreteJointDistribution, q: DiscreteJointDistribution,
                label_cost: float) -> np.ndarray:
    if p.features.shape[1] != q.features.shape[1]:
        raise DimensionMismatch("joint distributions disagree on feature dimension")
    diff = p.features[:, None, :] - q.features[None, :, :]
    dz = np.sqrt(np.sum(diff * diff, axis=2))
    return dz + label_cost * (p.labels[:, None] != q.labels[None, :])


def joint_wasserstein(p: DiscreteJointDistribution, q: DiscreteJointDistribution,
                      label_cost: float = 1.0) -> float:
    """W1 over feature-label space with ground cost ||z-z'|| + label_cost*[y != y']."""
    if label_cost < 0:
        raise ValueError("label_cost must be nonnegative")
    return wasserstein_distance(_joint_cost(p, q, label_cost), p.masses, q.masses)


def _group_by_feature(d: DiscreteJointDistribution) -> dict[bytes, tuple[float, dict[int, float]]]:
    """Map exact feature bytes -> (marginal mass, conditional label distribution)."""
    groups: dict[bytes, tuple[float, dict[int, float]]] = {}
    for i in range(d.masses.size):
        mass = float(d.masses[i])
        if mass <= 0.0:
            continue
        key = d.features[i].tobytes()
        total, cond = groups.setdefault(key, (0.0, {}))
        cond[int(d.labels[i])] = cond.get(int(d.labels[i]), 0.0) + mass
        groups[key] = (total + mass, cond)
    return groups


def conditional_wasserstein_term(p: DiscreteJointDistribution,
                                 q: DiscreteJointDistribution,
                                 weighting: str = "source",
                                 label_cost: float = 1.0) -> float:
    """Expected per-feature W1 between the two conditional label distributions.

    The expectation runs over the feature marginal of ``p`` (weighting
    "source") or ``q`` ("target"); features are matched by exact equality.
    """
    if weighting not in ("source", "target"):
        raise ValueError(f"weighting must be 'source' or 'target', got {weighting!r}")
    gp = _group_by_feature(p)
    gq = _group_by_feature(q)
    weigh = gp if weighting == "source" else gq
    weigh_mass = sum(w for w, _ in weigh.values())
    total = 0.0
    for key, (mass, _) in weigh.items():
        if key not in gp or key not in gq:
            raise SupportMismatch(
                "a feature atom of the weighting marginal is missing from the other support"
            )
        cond_p, cond_q = gp[key][1], gq[key][1]
        labels = sorted(set(cond_p) | set(cond_q))
        a = np.array([cond_p.get(y, 0.0) for y in labels])
        b = np.array([cond_q.get(y, 0.0) for y in labels])
        a /= a.sum()
        b /= b.sum()
        cost = label_cost * (1.0 - np.eye(len(labels)))
        total += (mass / weigh_mass) * wasserstein_distance(cost, a, b)
    return total
