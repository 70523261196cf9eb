"""Surveillance environment model.

Holds the scenario data every other module consumes: regions with
travel times, processing-time distributions, observation density pairs
(nominal vs anomalous), prior anomaly probabilities, and the anomaly
schedule. Also provides the information-theoretic helpers built on top
of them (KL divergence, expected minimum processing times).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from typing import Optional, Sequence, Union

import numpy as np
from scipy import integrate

__all__ = [
    "Gaussian",
    "MultivariateGaussian",
    "DensityPair",
    "HypothesisFamily",
    "ObservationModel",
    "ProcessingDistribution",
    "Environment",
    "AnomalySchedule",
    "Weights",
    "kl_divergence",
    "kl_divergence_quadrature",
    "weights_from_priors",
    "expected_min_processing",
    "mc_expected_min",
    "t_one",
]

T_ONE_MULTISET_CAP = 1_000_000


# ── Densities ───────────────────────────────────────────────────────


@dataclass(frozen=True)
class Gaussian:
    """Univariate normal density."""

    mean: float
    var: float

    def __post_init__(self):
        if not (self.var > 0 and math.isfinite(self.var)):
            raise ValueError(f"variance must be finite and positive, got {self.var}")

    @property
    def std(self) -> float:
        return math.sqrt(self.var)

    def logpdf(self, y: float) -> float:
        dy = y - self.mean
        return -0.5 * math.log(2.0 * math.pi * self.var) - dy * dy / (2.0 * self.var)

    def sample(self, rng: np.random.Generator) -> float:
        return self.mean + self.std * float(rng.standard_normal())


@dataclass(frozen=True)
class MultivariateGaussian:
    """Multivariate normal density with cached Cholesky/inverse factors."""

    mean: np.ndarray
    cov: np.ndarray
    chol: np.ndarray = field(init=False, repr=False, compare=False)
    inv: np.ndarray = field(init=False, repr=False, compare=False)
    logdet: float = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        cov = np.asarray(self.cov, dtype=float)
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"cov shape {cov.shape} does not match mean size {mean.size}")
        if not np.allclose(cov, cov.T):
            raise ValueError("covariance must be symmetric")
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise ValueError("covariance must be positive definite") from exc
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "chol", chol)
        object.__setattr__(self, "inv", np.linalg.inv(cov))
        object.__setattr__(self, "logdet", 2.0 * float(np.sum(np.log(np.diag(chol)))))

    @property
    def dim(self) -> int:
        return self.mean.size

    def logpdf(self, y: Sequence[float]) -> float:
        dy = np.asarray(y, dtype=float) - self.mean
        quad = float(dy @ self.inv @ dy)
        return -0.5 * (self.dim * math.log(2.0 * math.pi) + self.logdet + quad)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        z = rng.standard_normal(self.dim)
        return self.mean + self.chol @ z


Density = Union[Gaussian, MultivariateGaussian]


def kl_divergence(f1: Density, f0: Density) -> float:
    """Kullback-Leibler divergence D(f1, f0) = E_f1[log f1/f0].

    Closed form for matching Gaussian kinds; falls back to adaptive
    quadrature for other univariate densities exposing ``logpdf``.
    """
    if isinstance(f1, Gaussian) and isinstance(f0, Gaussian):
        dm = f1.mean - f0.mean
        return 0.5 * (math.log(f0.var / f1.var) + (f1.var + dm * dm) / f0.var - 1.0)
    if isinstance(f1, MultivariateGaussian) and isinstance(f0, MultivariateGaussian):
        if f1.dim != f0.dim:
            raise ValueError("densities must share the same support dimension")
        dm = f1.mean - f0.mean
        trace = float(np.trace(f0.inv @ f1.cov))
        quad = float(dm @ f0.inv @ dm)
        return 0.5 * (f0.logdet - f1.logdet + trace + quad - f1.dim)
    if type(f1) is not type(f0):
        raise ValueError(f"unsupported density pair: {type(f1).__name__} vs {type(f0).__name__}")
    return kl_divergence_quadrature(f1, f0)


def kl_divergence_quadrature(f1, f0, rel_tol: float = 1e-10) -> float:
    """Quadrature evaluation of E_f1[log f1/f0] for univariate densities.

    Serves as the generic fallback (and independent cross-check) for
    density pairs without a closed form.
    """

    def integrand(y):
        l1 = f1.logpdf(y)
        return math.exp(l1) * (l1 - f0.logpdf(y))

    value, _ = integrate.quad(integrand, -np.inf, np.inf, epsrel=rel_tol, limit=200)
    return value


@dataclass(frozen=True)
class DensityPair:
    """Nominal/anomalous density pair for one region, with cached divergence."""

    f0: Density
    f1: Density
    kl: float = field(init=False, compare=False)

    def __post_init__(self):
        if type(self.f0) is not type(self.f1):
            raise ValueError("nominal and anomalous densities must be the same kind")
        kl = kl_divergence(self.f1, self.f0)
        if not (kl > 0 and math.isfinite(kl)):
            raise ValueError(
                f"KL divergence must be finite and positive, got {kl} "
                "(densities must differ and share support)"
            )
        object.__setattr__(self, "kl", kl)

    def llr(self, y) -> float:
        """Log-likelihood ratio log f1(y)/f0(y), computed in log space."""
        if isinstance(self.f0, Gaussian):
            # Same quadratic form the simulation kernels use.
            dy0 = y - self.f0.mean
            dy1 = y - self.f1.mean
            c = math.log(self.f0.std / self.f1.std)
            return (
                c
                + dy0 * dy0 / (2.0 * self.f0.var)
                - dy1 * dy1 / (2.0 * self.f1.var)
            )
        return self.f1.logpdf(y) - self.f0.logpdf(y)


@dataclass(frozen=True)
class HypothesisFamily:
    """Finite anomalous hypothesis family for the GLR detector.

    ``true_index`` selects which component generates observations when
    the simulated anomaly is active; it may be None for regions that
    never become anomalous.
    """

    f0: Density
    components: tuple
    true_index: Optional[int] = None
    kl: float = field(init=False, compare=False)

    def __post_init__(self):
        if len(self.components) == 0:
            raise ValueError("hypothesis family must not be empty")
        components = tuple(self.components)
        if self.true_index is not None and not (0 <= self.true_index < len(components)):
            raise ValueError(f"true_index {self.true_index} out of range")
        # Detection difficulty of the region: the least favorable hypothesis.
        kls = [kl_divergence(c, self.f0) for c in components]
        object.__setattr__(self, "components", components)
        object.__setattr__(self, "kl", min(kls))

    @property
    def f1(self) -> Density:
        if self.true_index is None:
            raise ValueError("family has no designated true hypothesis")
        return self.components[self.true_index]


@dataclass(frozen=True)
class ObservationModel:
    """Per-region observation densities (pairs or GLR families)."""

    pairs: tuple

    def __post_init__(self):
        object.__setattr__(self, "pairs", tuple(self.pairs))

    @property
    def n(self) -> int:
        return len(self.pairs)

    @property
    def divergences(self) -> np.ndarray:
        return np.array([p.kl for p in self.pairs])

    @property
    def is_glr(self) -> bool:
        return any(isinstance(p, HypothesisFamily) for p in self.pairs)


# ── Processing times ────────────────────────────────────────────────


@dataclass(frozen=True)
class ProcessingDistribution:
    """Time to collect one informative observation at a region.

    Kinds: ``deterministic`` (fixed duration), ``exponential``
    (parameter = mean), ``half_normal`` (parameter = scale sigma of the
    underlying zero-mean normal; mean = sigma * sqrt(2/pi)).
    """

    kind: str
    param: float

    KINDS = ("deterministic", "exponential", "half_normal")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown processing kind {self.kind!r}")
        if not (self.param > 0 and math.isfinite(self.param)):
            raise ValueError(f"processing parameter must be finite and positive, got {self.param}")

    @classmethod
    def deterministic(cls, value: float) -> "ProcessingDistribution":
        return cls("deterministic", value)

    @classmethod
    def exponential(cls, mean: float) -> "ProcessingDistribution":
        return cls("exponential", mean)

    @classmethod
    def half_normal(cls, sigma: float) -> "ProcessingDistribution":
        return cls("half_normal", sigma)

    @property
    def mean(self) -> float:
        if self.kind == "deterministic":
            return self.param
        if self.kind == "exponential":
            return self.param
        return self.param * math.sqrt(2.0 / math.pi)

    def sample(self, rng: np.random.Generator) -> float:
        # Draw conventions shared with the simulation kernels.
        if self.kind == "deterministic":
            return self.param
        if self.kind == "exponential":
            return -self.param * math.log1p(-rng.random())
        return abs(self.param * float(rng.standard_normal()))


def expected_min_processing(
    dist: ProcessingDistribution,
    m: int,
    rng: Optional[np.random.Generator] = None,
    samples: int = 200_000,
) -> float:
    """Expected minimum of m i.i.d. processing-time draws.

    Closed form for deterministic (the value itself) and exponential
    (mean/m); Monte-Carlo estimate for half-normal (see
    ``mc_expected_min`` for the standard error).
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    if dist.kind == "deterministic":
        return dist.param
    if dist.kind == "exponential":
        return dist.param / m
    value, _ = mc_expected_min([dist] * m, rng=rng, samples=samples)
    return value


def mc_expected_min(
    dists: Sequence[ProcessingDistribution],
    rng: Optional[np.random.Generator] = None,
    samples: int = 200_000,
) -> tuple:
    """Monte-Carlo estimate of E[min of one draw from each dist].

    Returns ``(mean, standard_error)``. Uses a fixed internal seed when
    no generator is supplied so results are reproducible.
    """
    if rng is None:
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(0x5EED)))
    draws = np.empty((len(dists), samples))
    for i, d in enumerate(dists):
        if d.kind == "deterministic":
            draws[i] = d.param
        elif d.kind == "exponential":
            draws[i] = rng.exponential(d.param, size=samples)
        else:
            draws[i] = np.abs(d.param * rng.standard_normal(samples))
    mins = draws.min(axis=0)
    return float(mins.mean()), float(mins.std(ddof=1) / math.sqrt(samples))


def _exact_min_mean(dists: Sequence[ProcessingDistribution]) -> Optional[float]:
    """Closed-form E[min] for any mix of deterministic and exponential.

    With c = min of the deterministic values and X the minimum of the
    exponentials (rate = sum of rates), E[min(c, X)] = (1 - e^{-rc})/r.
    Returns None when a half-normal is present.
    """
    c = math.inf
    rate = 0.0
    for d in dists:
        if d.kind == "deterministic":
            c = min(c, d.param)
        elif d.kind == "exponential":
            rate += 1.0 / d.param
        else:
            return None
    if rate == 0.0:
        return c
    if math.isinf(c):
        return 1.0 / rate
    return -math.expm1(-rate * c) / rate


# ── Environment ─────────────────────────────────────────────────────


@dataclass(frozen=True)
class Environment:
    """Regions with travel times, processing distributions, and priors."""

    travel: np.ndarray
    processing: tuple
    priors: tuple

    def __post_init__(self):
        travel = np.asarray(self.travel, dtype=float)
        processing = tuple(self.processing)
        priors = tuple(float(p) for p in self.priors)
        n = len(processing)
        if travel.shape != (n, n):
            raise ValueError(f"travel matrix must be {n}x{n}, got {travel.shape}")
        if np.any(np.diag(travel) != 0.0):
            raise ValueError("travel matrix diagonal must be zero")
        if np.any(travel < 0.0) or not np.all(np.isfinite(travel)):
            raise ValueError("travel times must be finite and nonnegative")
        if len(priors) != n:
            raise ValueError("one prior per region required")
        for p in priors:
            if not (0.0 < p < 1.0):
                raise ValueError(f"priors must lie strictly inside (0,1), got {p}")
        object.__setattr__(self, "travel", travel)
        object.__setattr__(self, "processing", processing)
        object.__setattr__(self, "priors", priors)

    @classmethod
    def from_coordinates(
        cls,
        coords: Sequence[Sequence[float]],
        processing: Sequence[ProcessingDistribution],
        priors: Sequence[float],
        speed: float = 1.0,
    ) -> "Environment":
        """Euclidean travel-time matrix from planar coordinates at given speed."""
        pts = np.asarray(coords, dtype=float)
        diff = pts[:, None, :] - pts[None, :, :]
        travel = np.sqrt((diff * diff).sum(axis=-1)) / speed
        return cls(travel, tuple(processing), tuple(priors))

    @property
    def n(self) -> int:
        return len(self.processing)

    @property
    def mean_processing(self) -> np.ndarray:
        return np.array([d.mean for d in self.processing])

    @property
    def d_max(self) -> float:
        return float(self.travel.max())


@dataclass(frozen=True)
class AnomalySchedule:
    """Per-region anomaly appearance times; None means never.

    ``remove_on_detection`` mirrors the simulated experiment behavior:
    once detected, the anomaly is removed and the statistic reset.
    """

    appearance: tuple
    remove_on_detection: bool = True

    def __post_init__(self):
        appearance = tuple(None if a is None else float(a) for a in self.appearance)
        for a in appearance:
            if a is not None and a < 0:
                raise ValueError(f"appearance times must be nonnegative, got {a}")
        object.__setattr__(self, "appearance", appearance)

    @classmethod
    def never(cls, n: int) -> "AnomalySchedule":
        return cls((None,) * n)

    @property
    def max_appearance(self) -> float:
        times = [a for a in self.appearance if a is not None]
        return max(times) if times else 0.0


@dataclass(frozen=True)
class Weights:
    """Normalized anomaly-prior weights w_k = pi_k / sum_j pi_j."""

    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        if np.any(w <= 0):
            raise ValueError("weights must be strictly positive")
        if abs(float(w.sum()) - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1, got {w.sum()}")
        object.__setattr__(self, "w", w)

    def __len__(self) -> int:
        return self.w.size


def weights_from_priors(priors: Sequence[float]) -> Weights:
    """Normalize prior anomaly probabilities into detection-delay weights."""
    pr = [float(p) for p in priors]
    for p in pr:
        if not (0.0 < p < 1.0):
            raise ValueError(f"priors must lie strictly inside (0,1), got {p}")
    total = sum(pr)
    return Weights(np.array([p / total for p in pr]))


def t_one(
    env: Environment,
    m: int,
    rng: Optional[np.random.Generator] = None,
    samples: int = 200_000,
) -> float:
    """Best-case expected minimum processing time over m vehicle placements.

    Minimizes E[min of the m processing times] over all size-m multisets
    of regions (order is irrelevant to the minimum). Exact for
    deterministic/exponential mixes, Monte-Carlo when half-normals are
    involved. Refuses above ``T_ONE_MULTISET_CAP`` multisets.
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    n = env.n
    count = math.comb(n + m - 1, m)
    if count > T_ONE_MULTISET_CAP:
        raise ValueError(
            f"t_one enumeration over {count} multisets exceeds cap {T_ONE_MULTISET_CAP}"
        )
    cache: dict = {}
    best = math.inf
    for combo in combinations_with_replacement(range(n), m):
        key = tuple(sorted((env.processing[i].kind, env.processing[i].param) for i in combo))
        if key in cache:
            value = cache[key]
        else:
            dists = [env.processing[i] for i in combo]
            value = _exact_min_mean(dists)
            if value is None:
                value, _ = mc_expected_min(dists, rng=rng, samples=samples)
            cache[key] = value
        best = min(best, value)
    return best
