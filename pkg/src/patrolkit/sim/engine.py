"""Event-driven Monte-Carlo engine for surveillance trials.

Lowers a scenario into flat arrays, derives counter-based per-trial
(and per-vehicle) random streams, dispatches to the kernel backend, and
aggregates trial records into delay reports. Trials are independent, so
ensembles can run on worker processes without changing any output.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Sequence, Union

import numpy as np

from ..analysis import DelayReport
from ..detection import wald_eta_bar
from ..envmodel import Gaussian, HypothesisFamily, MultivariateGaussian
from ..policy import (
    MarkovRoutingChain,
    MultiVehiclePolicy,
    Partition,
    StationaryPolicy,
    efficient_policy,
)
from ._backend import BACKEND, kernels

__all__ = [
    "AdaptiveRouting",
    "TrialConfig",
    "TrialRecord",
    "EnsembleResult",
    "run_trial",
    "run_ensemble",
    "run_multi_vehicle",
    "run_markov_routing",
    "write_trials_csv",
    "write_detection_log",
    "BACKEND",
]


@dataclass(frozen=True)
class AdaptiveRouting:
    """Marker policy: selection vector recomputed from the detector bank.

    With a partition, each vehicle adapts over its own subset. With an
    edge set (single vehicle), each step walks a Metropolis-Hastings
    chain rebuilt toward the current target; the mean total-variation
    gap between transition row and target is reported per trial.
    """

    partition: Optional[Partition] = None
    edges: Optional[tuple] = None

    def __post_init__(self):
        if self.partition is not None and self.edges is not None:
            raise ValueError("adaptive routing supports a partition or a topology, not both")
        if self.edges is not None:
            object.__setattr__(self, "edges", tuple((int(i), int(j)) for i, j in self.edges))


PolicySpec = Union[StationaryPolicy, MarkovRoutingChain, MultiVehiclePolicy, AdaptiveRouting]


@dataclass(frozen=True)
class TrialConfig:
    """Everything one simulation campaign needs, reproducibly."""

    scenario: "Scenario"
    policy: PolicySpec
    trials: int = 1
    master_seed: int = 0
    eta: Optional[float] = None
    horizon: Optional[float] = None
    record_events: bool = False
    stop_when_all_detected: bool = True
    workers: int = 1

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trial count must be at least 1")
        if self.workers < 1:
            raise ValueError("worker count must be at least 1")
        horizon = self.resolved_horizon()
        max_app = self.scenario.schedule.max_appearance
        if horizon <= max_app:
            raise ValueError(
                f"horizon {horizon} must exceed the last anomaly appearance {max_app}"
            )

    @property
    def resolved_eta(self) -> float:
        return self.scenario.eta if self.eta is None else self.eta

    def resolved_horizon(self) -> float:
        if self.horizon is not None:
            return self.horizon
        if self.scenario.horizon is not None:
            return self.scenario.horizon
        return _auto_horizon(self)


@dataclass(frozen=True)
class TrialRecord:
    """Outcome of one trial; arrays are indexed by region."""

    trial: int
    detected: np.ndarray
    detect_time: np.ndarray
    delay: np.ndarray
    observations: np.ndarray
    false_alarms: np.ndarray
    censored: np.ndarray
    events: int
    end_time: float
    chain_mismatch: float = math.nan
    hypothesis: Optional[np.ndarray] = None
    event_log: Optional[list] = None


@dataclass(frozen=True)
class EnsembleResult:
    report: DelayReport
    records: tuple
    backend: str = BACKEND

    @property
    def trials(self) -> int:
        return len(self.records)


# ── Scenario lowering ───────────────────────────────────────────────


@dataclass
class LoweredScenario:
    """Flat-array view of a scenario, consumed directly by the kernels."""

    n: int
    travel: np.ndarray
    proc_kind: np.ndarray
    proc_param: np.ndarray
    appearance: np.ndarray
    divergences: np.ndarray
    eta: float
    horizon: float
    remove_on_detect: bool
    stop_when_done: bool
    obs_mode: int
    # mode 0: univariate Gaussian pairs
    u_mu0: Optional[np.ndarray] = None
    u_s0: Optional[np.ndarray] = None
    u_mu1: Optional[np.ndarray] = None
    u_s1: Optional[np.ndarray] = None
    u_c: Optional[np.ndarray] = None
    u_a0: Optional[np.ndarray] = None
    u_a1: Optional[np.ndarray] = None
    # mode 1: multivariate Gaussian pairs
    d: int = 0
    m_mu0: Optional[np.ndarray] = None
    m_L0: Optional[np.ndarray] = None
    m_A0: Optional[np.ndarray] = None
    m_logdet0: Optional[np.ndarray] = None
    m_mu1: Optional[np.ndarray] = None
    m_L1: Optional[np.ndarray] = None
    m_A1: Optional[np.ndarray] = None
    m_logdet1: Optional[np.ndarray] = None
    # mode 2: GLR hypothesis families
    g_mu0: Optional[np.ndarray] = None
    g_L0: Optional[np.ndarray] = None
    g_A0: Optional[np.ndarray] = None
    g_logdet0: Optional[np.ndarray] = None
    hyp_ptr: Optional[np.ndarray] = None
    hyp_mu: Optional[np.ndarray] = None
    hyp_L: Optional[np.ndarray] = None
    hyp_A: Optional[np.ndarray] = None
    hyp_logdet: Optional[np.ndarray] = None
    true_hyp: Optional[np.ndarray] = None


_PROC_CODE = {"deterministic": 0, "exponential": 1, "half_normal": 2}


def _as_mv(density) -> MultivariateGaussian:
    if isinstance(density, MultivariateGaussian):
        return density
    return MultivariateGaussian(np.array([density.mean]), np.array([[density.var]]))


def lower_scenario(scenario, eta: float, horizon: float, stop_when_done: bool) -> LoweredScenario:
    env = scenario.env
    model = scenario.model
    schedule = scenario.schedule
    n = env.n
    appearance = np.array(
        [-1.0 if a is None else a for a in schedule.appearance], dtype=float
    )
    low = LoweredScenario(
        n=n,
        travel=np.ascontiguousarray(env.travel, dtype=float),
        proc_kind=np.array([_PROC_CODE[p.kind] for p in env.processing], dtype=np.int32),
        proc_param=np.array([p.param for p in env.processing], dtype=float),
        appearance=appearance,
        divergences=np.ascontiguousarray(model.divergences, dtype=float),
        eta=eta,
        horizon=horizon,
        remove_on_detect=schedule.remove_on_detection,
        stop_when_done=stop_when_done,
        obs_mode=0,
    )
    pairs = model.pairs
    if model.is_glr:
        low.obs_mode = 2
        families = []
        for k, p in enumerate(pairs):
            if isinstance(p, HypothesisFamily):
                families.append(p)
            else:
                families.append(HypothesisFamily(p.f0, (p.f1,), 0))
        f0s = [_as_mv(f.f0) for f in families]
        dims = {f.dim for f in f0s}
        comps = [[_as_mv(c) for c in f.components] for f in families]
        for row in comps:
            dims.update(c.dim for c in row)
        if len(dims) != 1:
            raise ValueError("all GLR densities must share one observation dimension")
        d = dims.pop()
        if d > 64:
            raise ValueError("observation dimension above 64 is not supported")
        low.d = d
        low.g_mu0 = np.stack([f.mean for f in f0s])
        low.g_L0 = np.stack([f.chol for f in f0s])
        low.g_A0 = np.stack([f.inv for f in f0s])
        low.g_logdet0 = np.array([f.logdet for f in f0s])
        ptr = [0]
        mu, chol, inv, logdet = [], [], [], []
        for row in comps:
            for c in row:
                mu.append(c.mean)
                chol.append(c.chol)
                inv.append(c.inv)
                logdet.append(c.logdet)
            ptr.append(len(mu))
        low.hyp_ptr = np.array(ptr, dtype=np.int32)
        low.hyp_mu = np.stack(mu)
        low.hyp_L = np.stack(chol)
        low.hyp_A = np.stack(inv)
        low.hyp_logdet = np.array(logdet)
        true = []
        for k, f in enumerate(families):
            if f.true_index is None:
                if appearance[k] >= 0:
                    raise ValueError(
                        f"region {k} has a scheduled anomaly but no true hypothesis"
                    )
                true.append(-1)
            else:
                true.append(ptr[k] + f.true_index)
        low.true_hyp = np.array(true, dtype=np.int32)
        return low
    if all(isinstance(p.f0, Gaussian) for p in pairs):
        low.obs_mode = 0
        low.u_mu0 = np.array([p.f0.mean for p in pairs], dtype=float)
        low.u_s0 = np.array([p.f0.std for p in pairs], dtype=float)
        low.u_mu1 = np.array([p.f1.mean for p in pairs], dtype=float)
        low.u_s1 = np.array([p.f1.std for p in pairs], dtype=float)
        low.u_c = np.array([math.log(p.f0.std / p.f1.std) for p in pairs], dtype=float)
        low.u_a0 = np.array([1.0 / (2.0 * p.f0.var) for p in pairs], dtype=float)
        low.u_a1 = np.array([1.0 / (2.0 * p.f1.var) for p in pairs], dtype=float)
        return low
    low.obs_mode = 1
    f0s = [_as_mv(p.f0) for p in pairs]
    f1s = [_as_mv(p.f1) for p in pairs]
    dims = {f.dim for f in f0s} | {f.dim for f in f1s}
    if len(dims) != 1:
        raise ValueError("all observation densities must share one dimension")
    low.d = dims.pop()
    if low.d > 64:
        raise ValueError("observation dimension above 64 is not supported")
    low.m_mu0 = np.stack([f.mean for f in f0s])
    low.m_L0 = np.stack([f.chol for f in f0s])
    low.m_A0 = np.stack([f.inv for f in f0s])
    low.m_logdet0 = np.array([f.logdet for f in f0s])
    low.m_mu1 = np.stack([f.mean for f in f1s])
    low.m_L1 = np.stack([f.chol for f in f1s])
    low.m_A1 = np.stack([f.inv for f in f1s])
    low.m_logdet1 = np.array([f.logdet for f in f1s])
    return low


def _auto_horizon(config: TrialConfig) -> float:
    """Default horizon: appearance span plus 10x the slowest theoretical delay."""
    scenario = config.scenario
    eta = config.resolved_eta
    policy = config.policy
    env = scenario.env
    divergences = scenario.model.divergences
    if isinstance(policy, StationaryPolicy):
        vectors = [policy.q]
    elif isinstance(policy, MarkovRoutingChain):
        vectors = [policy.target]
    elif isinstance(policy, MultiVehiclePolicy):
        vectors = [p.q for p in policy.policies]
    elif policy.partition is None:
        # Adaptive policies only outperform the efficient stationary
        # one; its theory delay is a safe horizon scale.
        vectors = [efficient_policy(scenario.weights, divergences).q]
    else:
        vectors = []
        for subset in policy.partition.subsets:
            q = np.zeros(env.n)
            idx = np.array(subset)
            w = scenario.weights.w[idx]
            s = np.sqrt((w / w.sum()) / divergences[idx])
            q[idx] = s / s.sum()
            vectors.append(q)
    eta_bar = wald_eta_bar(eta)
    tbar = env.mean_processing
    worst = 0.0
    for q in vectors:
        iteration = float(q @ tbar + q @ env.travel @ q)
        for k in np.nonzero(q > 0)[0]:
            if scenario.schedule.appearance[k] is not None:
                worst = max(worst, eta_bar / (q[k] * divergences[k]) * iteration)
    if worst == 0.0:
        # No scheduled anomalies (false-alarm study): fall back to a
        # generous fixed span unless the caller set a horizon.
        return scenario.schedule.max_appearance + 10_000.0
    return scenario.schedule.max_appearance + 10.0 * worst


# ── Trial execution ─────────────────────────────────────────────────


def _streams(master_seed: int, trial: int, m: int) -> list:
    return [
        np.random.Generator(np.random.Philox(np.random.SeedSequence((master_seed, trial, r))))
        for r in range(m)
    ]


def _kernel_policy(config: TrialConfig):
    """Translate the policy spec into kernel arguments."""
    policy = config.policy
    scenario = config.scenario
    n = scenario.env.n
    if isinstance(policy, StationaryPolicy):
        return "single", ("stationary", np.ascontiguousarray(policy.q))
    if isinstance(policy, MarkovRoutingChain):
        return "single", (
            "markov",
            np.ascontiguousarray(policy.transition),
            np.ascontiguousarray(policy.target),
        )
    if isinstance(policy, MultiVehiclePolicy):
        owner = policy.partition.owner if policy.partition is not None else None
        return "multi", (
            "stationary",
            np.ascontiguousarray(policy.stacked()),
            None if owner is None else np.ascontiguousarray(owner),
        )
    if isinstance(policy, AdaptiveRouting):
        if policy.partition is not None:
            return "multi", ("adaptive", np.ascontiguousarray(policy.partition.owner))
        if policy.edges is not None:
            nbrs = [[] for _ in range(n)]
            for i, j in policy.edges:
                if i != j:
                    nbrs[i].append(j)
                    nbrs[j].append(i)
            nbrs = [sorted(set(s)) for s in nbrs]
            ptr = np.zeros(n + 1, dtype=np.int32)
            idx = []
            for i, s in enumerate(nbrs):
                idx.extend(s)
                ptr[i + 1] = len(idx)
            return "single", ("adaptive_chain", (np.array(idx, dtype=np.int32), ptr))
        return "single", ("adaptive", None)
    raise TypeError(f"unsupported policy spec {type(policy).__name__}")


def _vehicle_count(config: TrialConfig) -> int:
    policy = config.policy
    if isinstance(policy, MultiVehiclePolicy):
        return policy.m
    if isinstance(policy, AdaptiveRouting) and policy.partition is not None:
        return policy.partition.m
    return 1


def run_trial(config: TrialConfig, trial: int = 0) -> TrialRecord:
    """Simulate one trial; deterministic given (master_seed, trial)."""
    low = lower_scenario(
        config.scenario,
        config.resolved_eta,
        config.resolved_horizon(),
        config.stop_when_all_detected,
    )
    return _run_lowered(config, low, trial)


def _run_lowered(config: TrialConfig, low: LoweredScenario, trial: int) -> TrialRecord:
    mode, kernel_policy = _kernel_policy(config)
    m = _vehicle_count(config)
    gens = _streams(config.master_seed, trial, m)
    record = [] if config.record_events else None
    if mode == "multi":
        out = kernels.run_cusum_multi(low, kernel_policy, gens, record)
    elif low.obs_mode == 2:
        out = kernels.run_glr_single(low, kernel_policy, gens[0], record)
    else:
        out = kernels.run_cusum_single(low, kernel_policy, gens[0], record)
    scheduled = low.appearance >= 0.0
    censored = scheduled & (out["detected"] == 0)
    return TrialRecord(
        trial=trial,
        detected=out["detected"].astype(bool),
        detect_time=out["detect_time"],
        delay=out["delay"],
        observations=out["obs_count"],
        false_alarms=out["false_alarms"],
        censored=censored,
        events=int(out["events"]),
        end_time=float(out["end_time"]),
        chain_mismatch=float(out["mismatch"]),
        hypothesis=out["hyp"] if low.obs_mode == 2 else None,
        event_log=record,
    )


def _run_range(config: TrialConfig, start: int, stop: int) -> list:
    low = lower_scenario(
        config.scenario,
        config.resolved_eta,
        config.resolved_horizon(),
        config.stop_when_all_detected,
    )
    return [_run_lowered(config, low, t) for t in range(start, stop)]


def run_ensemble(config: TrialConfig) -> EnsembleResult:
    """Run all trials and aggregate per-region delay statistics.

    Results are identical for any worker count: trials use per-trial
    derived streams and are aggregated in trial order.
    """
    trials = config.trials
    if config.workers == 1 or trials < 4:
        records = _run_range(config, 0, trials)
    else:
        workers = min(config.workers, trials)
        bounds = np.linspace(0, trials, workers + 1).astype(int)
        serial_config = replace(config, workers=1)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = pool.map(
                _run_range,
                [serial_config] * workers,
                bounds[:-1].tolist(),
                bounds[1:].tolist(),
            )
            records = [rec for chunk in chunks for rec in chunk]
    return EnsembleResult(_aggregate(config, records), tuple(records))


def run_multi_vehicle(config: TrialConfig) -> EnsembleResult:
    """Ensemble wrapper that requires a multi-vehicle policy."""
    if _vehicle_count(config) < 2:
        raise ValueError("multi-vehicle run needs a partitioned or stacked policy")
    return run_ensemble(config)


def run_markov_routing(config: TrialConfig, chain: Optional[MarkovRoutingChain] = None) -> EnsembleResult:
    """Ensemble wrapper for Markov-chain routing."""
    if chain is not None:
        config = replace(config, policy=chain)
    if not isinstance(config.policy, MarkovRoutingChain):
        raise ValueError("markov routing needs a MarkovRoutingChain policy")
    return run_ensemble(config)


def _aggregate(config: TrialConfig, records: Sequence[TrialRecord]) -> DelayReport:
    scenario = config.scenario
    n = scenario.env.n
    delays = np.vstack([r.delay for r in records])
    obs = np.vstack([r.observations for r in records]).astype(float)
    detected = np.vstack([~np.isnan(r.delay) for r in records])
    censored = np.vstack([r.censored for r in records])
    false_alarms = np.vstack([r.false_alarms for r in records])
    mean_delay = np.full(n, math.nan)
    se_delay = np.full(n, math.nan)
    mean_obs = np.full(n, math.nan)
    se_obs = np.full(n, math.nan)
    counts = detected.sum(axis=0)
    for k in range(n):
        if counts[k] == 0:
            continue
        dk = delays[detected[:, k], k]
        ok = obs[detected[:, k], k]
        mean_delay[k] = dk.mean()
        mean_obs[k] = ok.mean()
        if counts[k] > 1:
            se_delay[k] = dk.std(ddof=1) / math.sqrt(counts[k])
            se_obs[k] = ok.std(ddof=1) / math.sqrt(counts[k])
    w = scenario.weights.w
    have = ~np.isnan(mean_delay)
    average = float((w[have] / w[have].sum()) @ mean_delay[have]) if have.any() else math.nan
    return DelayReport(
        observations=mean_obs,
        delays=mean_delay,
        average=average,
        source="simulation",
        delay_stderr=se_delay,
        observation_stderr=se_obs,
        detected_trials=counts,
        censored_trials=censored.sum(axis=0),
        false_alarms=false_alarms.sum(axis=0),
        trials=len(records),
    )


def write_trials_csv(path, result: EnsembleResult) -> None:
    """Per-trial, per-region rows: trial, region, delay, observations, censored."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["trial", "region", "delay", "observations", "censored"])
        for rec in result.records:
            for k in range(rec.delay.size):
                delay = rec.delay[k]
                writer.writerow(
                    [
                        rec.trial,
                        k + 1,
                        "" if math.isnan(delay) else repr(float(delay)),
                        int(rec.observations[k]),
                        int(bool(rec.censored[k])),
                    ]
                )


def write_detection_log(path, result: EnsembleResult, schedule) -> None:
    """CSV export of true-detection events across all trials.

    Columns: trial, region, detection_time, appearance_time, delay,
    observations_used.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            [
                "trial",
                "region",
                "detection_time",
                "appearance_time",
                "delay",
                "observations_used",
            ]
        )
        for rec in result.records:
            for k in range(rec.delay.size):
                if not rec.detected[k] or math.isnan(rec.delay[k]):
                    continue
                writer.writerow(
                    [
                        rec.trial,
                        k + 1,
                        repr(float(rec.detect_time[k])),
                        repr(float(schedule.appearance[k])),
                        repr(float(rec.delay[k])),
                        int(rec.observations[k]),
                    ]
                )
