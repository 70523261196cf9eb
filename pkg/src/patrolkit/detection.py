"""Sequential anomaly detectors.

Per-region CUSUM statistics, the bank of parallel CUSUMs updated one
region at a time, and the finite-hypothesis GLR variant. The update
operations are deterministic functions of (state, input) so simulated
runs can be replayed exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .envmodel import HypothesisFamily, ObservationModel

__all__ = [
    "CusumState",
    "DetectionEvent",
    "DetectorBank",
    "GlrState",
    "cusum_update",
    "ensemble_update",
    "glr_update",
    "wald_eta_bar",
    "wald_false_alarm_mean",
]


def wald_eta_bar(eta: float) -> float:
    """Detection-side Wald numerator: e^{-eta} + eta - 1."""
    if eta <= 0:
        raise ValueError("threshold must be positive")
    return eta + math.expm1(-eta)


def wald_false_alarm_mean(eta: float, divergence: float) -> float:
    """Mean observations between false alarms: (e^eta - eta - 1)/D(f0, f1)."""
    if eta <= 0:
        raise ValueError("threshold must be positive")
    if divergence <= 0:
        raise ValueError("divergence must be positive")
    return (math.expm1(eta) - eta) / divergence


@dataclass
class CusumState:
    """One region's running CUSUM statistic against threshold ``eta``."""

    eta: float
    statistic: float = 0.0
    iteration: int = 0

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("threshold must be positive")


def cusum_update(state: CusumState, llr: float) -> bool:
    """Positive-part CUSUM step; returns True and resets on crossing."""
    if not math.isfinite(llr):
        raise ValueError(f"non-finite log-likelihood ratio {llr}")
    value = state.statistic + llr
    if value < 0.0:
        value = 0.0
    state.iteration += 1
    if value > state.eta:
        state.statistic = 0.0
        return True
    state.statistic = value
    return False


@dataclass(frozen=True)
class DetectionEvent:
    region: int
    time: float
    statistic: float


@dataclass
class DetectorBank:
    """Parallel per-region CUSUMs; one statistic updated per observation."""

    states: list
    log: list = field(default_factory=list)

    @classmethod
    def uniform(cls, n: int, eta: float) -> "DetectorBank":
        return cls([CusumState(eta) for _ in range(n)])

    @property
    def statistics(self) -> np.ndarray:
        return np.array([s.statistic for s in self.states])


def ensemble_update(
    bank: DetectorBank,
    region: int,
    observation,
    model: ObservationModel,
    time: Optional[float] = None,
) -> Optional[DetectionEvent]:
    """Route one observation to its region's CUSUM; others stay untouched."""
    if not (0 <= region < len(bank.states)):
        raise IndexError(f"region {region} out of range for bank of {len(bank.states)}")
    state = bank.states[region]
    llr = model.pairs[region].llr(observation)
    crossing = state.statistic + llr
    detected = cusum_update(state, llr)
    if detected:
        event = DetectionEvent(
            region, time if time is not None else float(state.iteration), crossing
        )
        bank.log.append(event)
        return event
    return None


@dataclass
class GlrState:
    """Finite-hypothesis GLR detector for one region.

    Tracks one CUSUM-style recursion per hypothesis; the reported
    statistic is the clamped maximum over hypotheses, which equals the
    max over change points of the cumulative log-likelihood ratio. With
    a single hypothesis this reproduces the plain CUSUM trace.
    """

    family: HypothesisFamily
    eta: float
    scores: np.ndarray = field(init=False)
    iteration: int = 0

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("threshold must be positive")
        self.scores = np.zeros(len(self.family.components))

    @property
    def statistic(self) -> float:
        return max(0.0, float(self.scores.max()))

    @property
    def likelihoods(self) -> np.ndarray:
        """Normalized per-hypothesis likelihoods exp(score)/sum."""
        s = self.scores - self.scores.max()
        e = np.exp(s)
        return e / e.sum()


def glr_update(state: GlrState, observation) -> tuple:
    """One GLR step. Returns (detected, likelihood vector).

    Each hypothesis h keeps S_h <- max(S_h, 0) + llr_h(y); the change is
    declared when max_h S_h crosses the threshold, after which all
    scores reset to zero.
    """
    f0 = state.family.f0
    l0 = f0.logpdf(observation)
    for h, comp in enumerate(state.family.components):
        llr = comp.logpdf(observation) - l0
        if not math.isfinite(llr):
            raise ValueError(f"non-finite log-likelihood ratio {llr}")
        base = state.scores[h]
        if base < 0.0:
            base = 0.0
        state.scores[h] = base + llr
    state.iteration += 1
    likelihoods = state.likelihoods
    if state.statistic > state.eta:
        state.scores[:] = 0.0
        return True, likelihoods
    return False, likelihoods


