"""Routing-policy construction.

Stationary probability vectors (closed-form efficient policy and the
numerically optimized one), balanced region partitions for vehicle
teams, Metropolis-Hastings chains for hop-constrained topologies, and
the adaptive selection rule driven by current detector statistics.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .detection import wald_eta_bar
from .envmodel import Environment, ObservationModel, Weights

__all__ = [
    "StationaryPolicy",
    "MultiVehiclePolicy",
    "Partition",
    "MarkovRoutingChain",
    "AdaptivePolicyState",
    "MinimizeResult",
    "efficient_policy",
    "optimal_policy",
    "minimize_average_delay",
    "partition_regions",
    "partitioned_efficient_policy",
    "metropolis_hastings_chain",
    "adaptive_step",
    "recurrence_bound",
]

SIMPLEX_TOL = 1e-12
INTERIOR_EPS = 1e-8


@dataclass(frozen=True)
class StationaryPolicy:
    """Fixed region-selection probability vector."""

    q: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        if q.ndim != 1 or q.size == 0:
            raise ValueError("policy must be a nonempty vector")
        if np.any(q < 0):
            raise ValueError("policy entries must be nonnegative")
        if abs(float(q.sum()) - 1.0) > SIMPLEX_TOL:
            raise ValueError(f"policy must sum to 1, got {q.sum()!r}")
        object.__setattr__(self, "q", q)

    @classmethod
    def uniform(cls, n: int) -> "StationaryPolicy":
        return cls(np.full(n, 1.0 / n))

    @property
    def n(self) -> int:
        return self.q.size


@dataclass(frozen=True)
class Partition:
    """Disjoint region subsets, one per vehicle, covering all regions."""

    subsets: tuple
    n: int

    def __post_init__(self):
        subsets = tuple(tuple(int(i) for i in s) for s in self.subsets)
        seen: set = set()
        for s in subsets:
            if len(s) == 0:
                raise ValueError("partition subsets must be nonempty")
            seen.update(s)
            if len(seen) != sum(len(t) for t in subsets[: subsets.index(s) + 1]):
                raise ValueError("partition subsets must be disjoint")
        if seen != set(range(self.n)):
            raise ValueError("partition must cover every region exactly once")
        cap = math.ceil(self.n / len(subsets))
        for s in subsets:
            if len(s) > cap:
                raise ValueError(f"subset {s} exceeds cardinality bound {cap}")
        object.__setattr__(self, "subsets", subsets)

    @property
    def m(self) -> int:
        return len(self.subsets)

    @property
    def owner(self) -> np.ndarray:
        """Vehicle index owning each region."""
        owner = np.empty(self.n, dtype=np.int32)
        for r, s in enumerate(self.subsets):
            for k in s:
                owner[k] = r
        return owner


@dataclass(frozen=True)
class MultiVehiclePolicy:
    """One stationary vector per vehicle, optionally supported on a partition."""

    policies: tuple
    partition: Optional[Partition] = None

    def __post_init__(self):
        policies = tuple(self.policies)
        if self.partition is not None:
            if self.partition.m != len(policies):
                raise ValueError("one policy per partition subset required")
            for r, pol in enumerate(policies):
                support = set(np.nonzero(pol.q)[0].tolist())
                if not support <= set(self.partition.subsets[r]):
                    raise ValueError(f"vehicle {r} policy leaves its subset")
        object.__setattr__(self, "policies", policies)

    @property
    def m(self) -> int:
        return len(self.policies)

    def stacked(self) -> np.ndarray:
        return np.vstack([p.q for p in self.policies])


def efficient_policy(weights: Weights, divergences: Sequence[float]) -> StationaryPolicy:
    """Closed-form minimizer of the average-delay upper bound.

    q_k proportional to sqrt(w_k / D_k).
    """
    d = np.asarray(divergences, dtype=float)
    if np.any(d <= 0):
        raise ValueError("divergences must be strictly positive")
    if d.size != len(weights):
        raise ValueError("weights and divergences must have equal length")
    s = np.sqrt(weights.w / d)
    return StationaryPolicy(s / s.sum())


# ── Numeric minimization of the average detection delay ────────────


@dataclass(frozen=True)
class MinimizeResult:
    q: np.ndarray
    value: float
    converged: bool
    iterations: int
    grad_norm: float
    stalled: bool = False


def average_delay_raw(q: np.ndarray, v: np.ndarray, tbar: np.ndarray, travel: np.ndarray) -> float:
    """(sum v_k/q_k) * (sum q_i T_i + sum_ij q_i q_j d_ij)."""
    return float((v / q).sum() * (q @ tbar + q @ travel @ q))


def minimize_average_delay(
    v: Sequence[float],
    tbar: Sequence[float],
    travel: np.ndarray,
    q0: Sequence[float],
    grad_tol: float = 1e-9,
    max_iter: int = 100_000,
    rel_tol: float = 1e-6,
) -> MinimizeResult:
    """Gradient descent on the average delay over the probability simplex.

    Substitutes q_n = 1 - sum of the others, descends the reduced
    gradient with backtracking (Armijo) line search, and keeps iterates
    in the simplex interior by clipping at INTERIOR_EPS and
    renormalizing. The objective blows up at the boundary, so the clip
    is inactive at any minimizer.

    Stops at ``grad_tol`` (absolute) or when no representable descent
    step remains; in the latter case convergence requires the relative
    first-order measure |grad| / max(1, f) to be below ``rel_tol``.
    For objectives of typical scale the float64 resolution floor sits
    around 1e-8 relative, above an absolute 1e-9.
    """
    v = np.asarray(v, dtype=float)
    tbar = np.asarray(tbar, dtype=float)
    travel = np.asarray(travel, dtype=float)
    n = v.size
    if n == 1:
        q = np.array([1.0])
        return MinimizeResult(q, average_delay_raw(q, v, tbar, travel), True, 0, 0.0)
    sym = travel + travel.T

    def clamp(x: np.ndarray) -> np.ndarray:
        q = np.append(x, 1.0 - x.sum())
        np.clip(q, INTERIOR_EPS, None, out=q)
        return q / q.sum()

    def value_grad(q: np.ndarray):
        a = float((v / q).sum())
        b = float(q @ tbar + q @ travel @ q)
        grad = b * (-v / (q * q)) + a * (tbar + sym @ q)
        return a * b, grad

    q = clamp(np.asarray(q0, dtype=float)[: n - 1].copy())
    f, g = value_grad(q)
    gred = g[:-1] - g[-1]
    step = 1.0 / (1.0 + float(np.linalg.norm(gred)))
    grad_norm = math.inf

    def stalled_result(it: int) -> MinimizeResult:
        relative = grad_norm / max(1.0, abs(f))
        ok = grad_norm <= grad_tol or relative <= rel_tol
        return MinimizeResult(q, f, ok, it, grad_norm, stalled=True)

    for it in range(1, max_iter + 1):
        grad_norm = float(np.linalg.norm(gred))
        if grad_norm <= grad_tol:
            return MinimizeResult(q, f, True, it - 1, grad_norm)
        gsq = grad_norm * grad_norm
        accepted = False
        while step >= 1e-20:
            q_new = clamp(q[:-1] - step * gred)
            f_new, g_new = value_grad(q_new)
            if f_new <= f - 1e-4 * step * gsq:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            # Line search collapsed: no representable descent left.
            return stalled_result(it)
        s = q_new[:-1] - q[:-1]
        if not np.any(s):
            # Step below coordinate resolution: same point re-accepted.
            return stalled_result(it)
        gred_new = g_new[:-1] - g_new[-1]
        # Barzilai-Borwein initial step for the next line search; far
        # fewer iterations than a doubling heuristic on this objective.
        y = gred_new - gred
        sy = float(s @ y)
        if sy > 0.0 and math.isfinite(sy):
            step = float(s @ s) / sy
            step = min(max(step, 1e-14), 1e8)
        else:
            step *= 2.0
        q, f, g, gred = q_new, f_new, g_new, gred_new
    return MinimizeResult(q, f, False, max_iter, grad_norm)


@dataclass(frozen=True)
class OptimalPolicyResult:
    policy: StationaryPolicy
    average_delay: float
    converged: bool
    iterations: int
    grad_norm: float


def optimal_policy(
    env: Environment,
    model: ObservationModel,
    weights: Weights,
    eta: float,
    q0: Optional[Sequence[float]] = None,
    grad_tol: float = 1e-9,
    max_iter: int = 100_000,
) -> OptimalPolicyResult:
    """Numerically optimized stationary policy (minimizer of the average delay).

    Starts from the efficient policy unless a start point is given;
    descent can only improve on it, so the returned policy never does
    worse than the closed form.
    """
    v = weights.w * wald_eta_bar(eta) / model.divergences
    if q0 is None:
        q0 = efficient_policy(weights, model.divergences).q
    res = minimize_average_delay(
        v, env.mean_processing, env.travel, q0, grad_tol=grad_tol, max_iter=max_iter
    )
    return OptimalPolicyResult(
        StationaryPolicy(res.q), res.value, res.converged, res.iterations, res.grad_norm
    )


# ── Multi-vehicle partitioning ──────────────────────────────────────


def partition_regions(n: int, m: int) -> Partition:
    """Balanced deterministic partition: region k goes to vehicle k mod m.

    Cardinalities never exceed ceil(n/m). When m >= n each region gets
    its own vehicle and the surplus vehicles are dropped.
    """
    if m < 1:
        raise ValueError("vehicle count must be at least 1")
    if n < 1:
        raise ValueError("region count must be at least 1")
    groups = min(m, n)
    subsets = tuple(tuple(range(r, n, groups)) for r in range(groups))
    return Partition(subsets, n)


def partitioned_efficient_policy(
    weights: Weights, divergences: Sequence[float], partition: Partition
) -> MultiVehiclePolicy:
    """Single-vehicle efficient policy inside each partition subset.

    Weights are renormalized within the subset; the resulting vectors
    are supported only on their subset.
    """
    d = np.asarray(divergences, dtype=float)
    n = len(weights)
    policies = []
    for subset in partition.subsets:
        idx = np.array(subset)
        sub_w = Weights(weights.w[idx] / weights.w[idx].sum())
        sub_q = efficient_policy(sub_w, d[idx]).q
        q = np.zeros(n)
        q[idx] = sub_q
        policies.append(StationaryPolicy(q))
    return MultiVehiclePolicy(tuple(policies), partition)


# ── Markov-chain routing ────────────────────────────────────────────


@dataclass(frozen=True)
class MarkovRoutingChain:
    """Reversible routing chain over the region graph.

    ``transition`` is row-stochastic, supported on the edge set, and
    has ``target`` as its stationary distribution (detailed balance).
    """

    transition: np.ndarray
    target: np.ndarray
    neighbors: tuple

    @property
    def n(self) -> int:
        return self.target.size


def _adjacency(n: int, edges) -> list:
    nbrs: list = [set() for _ in range(n)]
    for i, j in edges:
        if not (0 <= i < n and 0 <= j < n):
            raise ValueError(f"edge ({i},{j}) out of range")
        if i == j:
            continue
        nbrs[i].add(j)
        nbrs[j].add(i)
    return [sorted(s) for s in nbrs]


def _connected(nbrs: list) -> bool:
    n = len(nbrs)
    seen = {0}
    stack = [0]
    while stack:
        i = stack.pop()
        for j in nbrs[i]:
            if j not in seen:
                seen.add(j)
                stack.append(j)
    return len(seen) == n


def metropolis_hastings_chain(edges, target: Sequence[float]) -> MarkovRoutingChain:
    """Metropolis-Hastings transition matrix with the given stationary vector.

    Off-diagonal entries are min{1/d_i, q_j/(q_i d_j)} on edges, where
    d_i counts distinct neighbors of region i (self excluded); the
    diagonal absorbs the residual mass.
    """
    q = np.asarray(target, dtype=float)
    if np.any(q <= 0):
        raise ValueError("target distribution must be strictly positive")
    if abs(float(q.sum()) - 1.0) > SIMPLEX_TOL:
        raise ValueError("target distribution must sum to 1")
    n = q.size
    nbrs = _adjacency(n, edges)
    if n > 1 and not _connected(nbrs):
        raise ValueError("region graph must be connected")
    P = np.zeros((n, n))
    deg = [len(s) for s in nbrs]
    for i in range(n):
        for j in nbrs[i]:
            P[i, j] = min(1.0 / deg[i], q[j] / (q[i] * deg[j]))
        P[i, i] = 1.0 - P[i].sum()
    if n == 1:
        P[0, 0] = 1.0
    flow = q[:, None] * P
    if float(np.abs(flow - flow.T).max()) > 1e-12:
        raise AssertionError("detailed balance violated beyond tolerance")
    return MarkovRoutingChain(P, q, tuple(tuple(s) for s in nbrs))


def line_edges(n: int) -> list:
    return [(i, i + 1) for i in range(n - 1)]


def ring_edges(n: int) -> list:
    return line_edges(n) + ([(n - 1, 0)] if n > 2 else [])


def complete_edges(n: int) -> list:
    return [(i, j) for i in range(n) for j in range(i + 1, n)]


# ── Adaptive policy ─────────────────────────────────────────────────


def adaptive_step(statistics: Sequence[float], divergences: Sequence[float]) -> np.ndarray:
    """Selection vector from current detector statistics.

    Each region gets the logistic prior pi_k = e^L / (1 + e^L) of its
    statistic, then probability proportional to sqrt(pi_k / D_k).
    """
    stats = np.asarray(statistics, dtype=float)
    d = np.asarray(divergences, dtype=float)
    if np.any(d <= 0):
        raise ValueError("divergences must be strictly positive")
    priors = 1.0 / (1.0 + np.exp(-stats))
    s = np.sqrt(priors / d)
    return s / s.sum()


@dataclass
class AdaptivePolicyState:
    """Current detector statistics plus the derived selection vector."""

    statistics: np.ndarray
    divergences: np.ndarray

    @property
    def priors(self) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-np.asarray(self.statistics, dtype=float)))

    @property
    def selection(self) -> np.ndarray:
        return adaptive_step(self.statistics, self.divergences)


def recurrence_bound(alpha: float, beta: float) -> float:
    """Upper bound beta/alpha^2 on mean draws until a state with
    per-draw probability in (alpha, beta) recurs."""
    if not (0.0 < alpha <= beta < 1.0):
        raise ValueError(f"need 0 < alpha <= beta < 1, got alpha={alpha}, beta={beta}")
    return beta / (alpha * alpha)
