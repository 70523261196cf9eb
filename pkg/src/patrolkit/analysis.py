"""Closed-form detection-delay formulas and bounds.

Evaluates, from scenario parameters alone, the expected observation
counts and delays of the stationary single-vehicle policy, the matching
upper/lower bounds, the multi-vehicle and partitioning bounds, and the
(deliberately conservative) adaptive-policy bound. Everything here is a
pure function used to cross-check the Monte-Carlo engine.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .detection import wald_eta_bar
from .envmodel import Environment, ObservationModel, Weights, expected_min_processing, t_one
from .policy import MultiVehiclePolicy, StationaryPolicy, efficient_policy

__all__ = [
    "DelayReport",
    "BoundsReport",
    "expected_observations",
    "expected_delay_single",
    "average_delay",
    "upper_bound_delay",
    "lower_bound_delay",
    "theory_delay_report",
    "global_lower_bounds",
    "multi_vehicle_lower_bound",
    "partition_bounds",
    "adaptive_delay_bound",
]

# Policies with q_k below this are treated as unable to detect at k.
Q_MIN = 1e-8


@dataclass(frozen=True)
class DelayReport:
    """Per-region observation counts and delays plus their weighted average.

    ``source`` tags provenance: "theory" for formula evaluations,
    "simulation" for Monte-Carlo aggregates (which also carry standard
    errors and censoring counts).
    """

    observations: np.ndarray
    delays: np.ndarray
    average: float
    source: str
    delay_stderr: Optional[np.ndarray] = None
    observation_stderr: Optional[np.ndarray] = None
    detected_trials: Optional[np.ndarray] = None
    censored_trials: Optional[np.ndarray] = None
    false_alarms: Optional[np.ndarray] = None
    trials: Optional[int] = None

    def to_dict(self) -> dict:
        out = {
            "observations": np.asarray(self.observations).tolist(),
            "delays": np.asarray(self.delays).tolist(),
            "average": self.average,
            "source": self.source,
        }
        for name in (
            "delay_stderr",
            "observation_stderr",
            "detected_trials",
            "censored_trials",
            "false_alarms",
        ):
            value = getattr(self, name)
            if value is not None:
                out[name] = np.asarray(value).tolist()
        if self.trials is not None:
            out["trials"] = self.trials
        return out


@dataclass(frozen=True)
class BoundsReport:
    """Bound values for one scenario/policy combination.

    Fields are filled by whichever bound family produced the report;
    unused ones stay None.
    """

    region_lower: Optional[np.ndarray] = None
    average_lower: Optional[float] = None
    average_upper: Optional[float] = None
    ratio_vs_optimal: Optional[float] = None
    ratio_vs_global: Optional[float] = None

    def to_dict(self) -> dict:
        out: dict = {}
        if self.region_lower is not None:
            out["region_lower"] = np.asarray(self.region_lower).tolist()
        for name in ("average_lower", "average_upper", "ratio_vs_optimal", "ratio_vs_global"):
            value = getattr(self, name)
            if value is not None:
                out[name] = value
        return out


def _check_q(q: np.ndarray, k: Optional[int] = None) -> None:
    if k is not None:
        if q[k] < Q_MIN:
            raise ValueError(f"q_{k} below {Q_MIN}: expected delay is unbounded")
        return
    if np.any(q < Q_MIN):
        raise ValueError(f"policy has entries below {Q_MIN}: expected delay is unbounded")


def expected_observations(q, k: int, divergence: float, eta: float) -> float:
    """Iterations to detection at region k: eta_bar / (q_k D_k)."""
    qv = np.asarray(q.q if isinstance(q, StationaryPolicy) else q, dtype=float)
    _check_q(qv, k)
    if divergence <= 0:
        raise ValueError("divergence must be positive")
    return wald_eta_bar(eta) / (qv[k] * divergence)


def _iteration_time(q: np.ndarray, env: Environment) -> float:
    """Mean travel-plus-processing time of one observation iteration."""
    return float(q @ env.mean_processing + q @ env.travel @ q)


def expected_delay_single(q, env: Environment, model: ObservationModel, eta: float, k: int) -> float:
    """Expected detection delay at region k under stationary policy q."""
    qv = np.asarray(q.q if isinstance(q, StationaryPolicy) else q, dtype=float)
    _check_q(qv)
    nk = expected_observations(qv, k, float(model.divergences[k]), eta)
    return _iteration_time(qv, env) * nk


def average_delay(
    q, env: Environment, model: ObservationModel, weights: Weights, eta: float
) -> float:
    """Prior-weighted average of the per-region expected delays."""
    qv = np.asarray(q.q if isinstance(q, StationaryPolicy) else q, dtype=float)
    _check_q(qv)
    counts = wald_eta_bar(eta) * weights.w / (qv * model.divergences)
    return float(counts.sum()) * _iteration_time(qv, env)


def upper_bound_delay(
    q,
    weights: Weights,
    divergences: Sequence[float],
    tbar_max: float,
    d_max: float,
    eta: float,
) -> float:
    """Travel-agnostic upper bound on the average delay.

    (sum_k w_k eta_bar / (q_k D_k)) * (T_max + d_max); minimized by the
    closed-form efficient policy.
    """
    qv = np.asarray(q.q if isinstance(q, StationaryPolicy) else q, dtype=float)
    _check_q(qv)
    d = np.asarray(divergences, dtype=float)
    counts = wald_eta_bar(eta) * weights.w / (qv * d)
    return float(counts.sum()) * (tbar_max + d_max)


def lower_bound_delay(
    q, weights: Weights, divergences: Sequence[float], tbar_min: float, eta: float
) -> float:
    """Lower bound eta_bar T_min sum_k w_k/(D_k q_k) on the average delay."""
    qv = np.asarray(q.q if isinstance(q, StationaryPolicy) else q, dtype=float)
    _check_q(qv)
    d = np.asarray(divergences, dtype=float)
    counts = wald_eta_bar(eta) * weights.w / (qv * d)
    return float(counts.sum()) * tbar_min


def theory_delay_report(
    q, env: Environment, model: ObservationModel, weights: Weights, eta: float
) -> DelayReport:
    """Theorem-based per-region counts/delays under a stationary policy."""
    qv = np.asarray(q.q if isinstance(q, StationaryPolicy) else q, dtype=float)
    _check_q(qv)
    counts = wald_eta_bar(eta) / (qv * model.divergences)
    delays = counts * _iteration_time(qv, env)
    avg = float(weights.w @ delays)
    return DelayReport(counts, delays, avg, "theory")


def global_lower_bounds(
    env: Environment, model: ObservationModel, m: int, eta: float, **min_kwargs
) -> BoundsReport:
    """Routing-independent lower bounds with m vehicles.

    Per region: eta_bar T_k^{m-smlst} / (m D_k). Average: eta_bar
    T_min^{m-smlst} / (m D_max).
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    eta_bar = wald_eta_bar(eta)
    d = model.divergences
    t_small = np.array(
        [expected_min_processing(dist, m, **min_kwargs) for dist in env.processing]
    )
    region = eta_bar * t_small / (m * d)
    average = eta_bar * float(t_small.min()) / (m * float(d.max()))
    return BoundsReport(region_lower=region, average_lower=average)


def multi_vehicle_lower_bound(
    policy: MultiVehiclePolicy, model: ObservationModel, tbar_one: float, eta: float, k: int
) -> float:
    """Per-region delay lower bound eta_bar T_one / (sum_r q_k^r D_k)."""
    total = float(sum(p.q[k] for p in policy.policies))
    if total <= 0:
        raise ValueError(f"region {k} is unreachable: no vehicle assigns it probability")
    return wald_eta_bar(eta) * tbar_one / (total * float(model.divergences[k]))


def partition_bounds(
    env: Environment,
    model: ObservationModel,
    weights: Weights,
    m: int,
    eta: float,
    tbar_one: Optional[float] = None,
) -> BoundsReport:
    """Performance envelope of the partitioned efficient policy.

    Upper bound on its average delay, the policy-independent lower
    bound, and the two optimality-factor certificates.
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    n = env.n
    eta_bar = wald_eta_bar(eta)
    d = model.divergences
    w = weights.w
    ceil_nm = math.ceil(n / m)
    tbar = env.mean_processing
    tmax_dmax = float(tbar.max()) + env.d_max
    if tbar_one is None:
        tbar_one = t_one(env, m)
    upper = m * ceil_nm**2 * float(w.max()) * eta_bar * tmax_dmax / float(d.min())
    lower = float(np.sqrt(w / d).sum()) ** 2 * eta_bar * tbar_one / m
    ratio_vs_optimal = (
        4.0 * float(w.max()) / float(w.min()) * tmax_dmax / tbar_one * float(d.max() / d.min())
    )
    t_small_min = min(
        expected_min_processing(dist, m) for dist in env.processing
    )
    ratio_vs_global = (
        m**2 * ceil_nm * tmax_dmax / t_small_min * float(d.max() / d.min())
    )
    return BoundsReport(
        average_lower=lower,
        average_upper=upper,
        ratio_vs_optimal=ratio_vs_optimal,
        ratio_vs_global=ratio_vs_global,
    )


def adaptive_delay_bound(
    env: Environment, model: ObservationModel, m: int, eta: float, k: int
) -> float:
    """Upper bound on the adaptive policy's expected delay at region k.

    Documented as very conservative: it assumes every other region's
    statistic sits at the threshold throughout.
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    d = model.divergences
    dk = float(d[k])
    dmin = float(d.min())
    eta_bar = wald_eta_bar(eta)
    r = math.ceil(env.n / m) - 1
    term1 = eta_bar / dk
    term2 = (
        2.0
        * r
        * math.exp(eta / 2.0)
        * math.sqrt(dk)
        * (-math.expm1(-eta_bar / 2.0))
        / (math.sqrt(dmin) * (-math.expm1(-dk / 2.0)))
    )
    term3 = (
        r
        * r
        * math.exp(eta)
        * dk
        * (-math.expm1(-eta_bar))
        / (dmin * (-math.expm1(-dk)))
    )
    tmax_dmax = float(env.mean_processing.max()) + env.d_max
    return (term1 + term2 + term3) * tmax_dmax


def efficient_policy_upper_bound(
    weights: Weights, divergences: Sequence[float], tbar_max: float, d_max: float, eta: float
) -> float:
    """Closed-form value of the upper bound at its minimizer:
    (sum_k sqrt(w_k/D_k))^2 eta_bar (T_max + d_max)."""
    d = np.asarray(divergences, dtype=float)
    s = float(np.sqrt(weights.w / d).sum())
    return s * s * wald_eta_bar(eta) * (tbar_max + d_max)


def full_report(
    q,
    env: Environment,
    model: ObservationModel,
    weights: Weights,
    eta: float,
    m: int = 1,
) -> dict:
    """All formulas and bounds for one scenario + stationary policy."""
    qv = np.asarray(q.q if isinstance(q, StationaryPolicy) else q, dtype=float)
    theory = theory_delay_report(qv, env, model, weights, eta)
    tbar = env.mean_processing
    q_dag = efficient_policy(weights, model.divergences)
    report = {
        "theory": theory.to_dict(),
        "upper_bound": upper_bound_delay(
            qv, weights, model.divergences, float(tbar.max()), env.d_max, eta
        ),
        "lower_bound": lower_bound_delay(qv, weights, model.divergences, float(tbar.min()), eta),
        "global_lower_bounds": global_lower_bounds(env, model, m, eta).to_dict(),
        "efficient_policy": q_dag.q.tolist(),
        "efficient_upper_bound": efficient_policy_upper_bound(
            weights, model.divergences, float(tbar.max()), env.d_max, eta
        ),
        "adaptive_bound": [adaptive_delay_bound(env, model, m, eta, k) for k in range(env.n)],
    }
    if m > 1:
        report["partition_bounds"] = partition_bounds(env, model, weights, m, eta).to_dict()
    return report
