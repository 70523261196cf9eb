"""Environment-model tests: divergences, weights, processing-time minima."""
import math

import numpy as np
import pytest
from scipy import integrate

from patrolkit.envmodel import (
    AnomalySchedule,
    DensityPair,
    Environment,
    Gaussian,
    HypothesisFamily,
    MultivariateGaussian,
    ProcessingDistribution,
    expected_min_processing,
    kl_divergence,
    kl_divergence_quadrature,
    mc_expected_min,
    t_one,
    weights_from_priors,
)


def quad_kl(f1, f0):
    """Independent quadrature oracle for E_f1[log f1/f0]."""

    def integrand(y):
        l1 = f1.logpdf(y)
        return math.exp(l1) * (l1 - f0.logpdf(y))

    value, _ = integrate.quad(integrand, -50, 50, epsrel=1e-12, limit=300)
    return value


class TestKlDivergence:
    def test_unit_mean_shift(self):
        # Gaussian mean shift N(1,s2) vs N(0,s2) has divergence 1/(2 s2)
        assert kl_divergence(Gaussian(1, 1), Gaussian(0, 1)) == pytest.approx(0.5, abs=1e-14)

    def test_identical_densities_zero(self):
        assert kl_divergence(Gaussian(0.3, 1.7), Gaussian(0.3, 1.7)) == 0.0

    def test_variance_two_matches_quadrature_oracle(self):
        f1, f0 = Gaussian(1, 2), Gaussian(0, 2)
        oracle = quad_kl(f1, f0)
        assert oracle == pytest.approx(0.25, abs=1e-9)
        assert kl_divergence(f1, f0) == pytest.approx(oracle, abs=1e-9)

    def test_closed_form_vs_quadrature_sweep(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            f1 = Gaussian(rng.normal(), rng.uniform(0.3, 3.0))
            f0 = Gaussian(rng.normal(), rng.uniform(0.3, 3.0))
            assert kl_divergence(f1, f0) == pytest.approx(quad_kl(f1, f0), rel=1e-8)
            assert kl_divergence(f1, f0) >= 0.0

    def test_quadrature_fallback_function(self):
        f1, f0 = Gaussian(0.5, 1.2), Gaussian(0.0, 0.8)
        assert kl_divergence_quadrature(f1, f0) == pytest.approx(
            kl_divergence(f1, f0), rel=1e-8
        )

    def test_multivariate_reduces_to_univariate(self):
        f1 = MultivariateGaussian([1.0], [[2.0]])
        f0 = MultivariateGaussian([0.0], [[2.0]])
        assert kl_divergence(f1, f0) == pytest.approx(0.25, abs=1e-12)

    def test_multivariate_known_value(self):
        # KL = 0.5 (tr(S0^-1 S1) + dm' S0^-1 dm - d + ln det S0/det S1)
        f1 = MultivariateGaussian([1, 0, 0], [[2, 1, 0], [1, 1.5, 0], [0, 0, 1]])
        f0 = MultivariateGaussian([0, 0, 0], np.eye(3))
        expected = 0.5 * (4.5 + 1.0 - 3.0 - math.log(2.0))
        assert kl_divergence(f1, f0) == pytest.approx(expected, abs=1e-12)

    def test_mixed_kinds_rejected(self):
        with pytest.raises(ValueError):
            kl_divergence(Gaussian(0, 1), MultivariateGaussian([0.0], [[1.0]]))

    def test_pair_requires_positive_divergence(self):
        with pytest.raises(ValueError):
            DensityPair(Gaussian(0, 1), Gaussian(0, 1))


class TestHypothesisFamily:
    def test_divergence_is_minimum_over_components(self):
        f0 = Gaussian(0, 1)
        family = HypothesisFamily(f0, (Gaussian(2, 1), Gaussian(0.5, 1)), true_index=0)
        assert family.kl == pytest.approx(kl_divergence(Gaussian(0.5, 1), f0))
        assert family.f1 is family.components[0]

    def test_true_index_validated(self):
        with pytest.raises(ValueError):
            HypothesisFamily(Gaussian(0, 1), (Gaussian(1, 1),), true_index=3)

    def test_empty_family_rejected(self):
        with pytest.raises(ValueError):
            HypothesisFamily(Gaussian(0, 1), ())


class TestWeights:
    def test_equal_priors(self):
        w = weights_from_priors((0.5, 0.5, 0.5, 0.5))
        assert np.allclose(w.w, 0.25, atol=1e-15)

    def test_single_region(self):
        assert weights_from_priors((0.7,)).w[0] == 1.0

    def test_normalization(self):
        w = weights_from_priors((0.2, 0.6))
        assert np.allclose(w.w, [0.25, 0.75], atol=1e-15)

    def test_prior_outside_unit_interval(self):
        with pytest.raises(ValueError):
            weights_from_priors((0.2, 1.0))
        with pytest.raises(ValueError):
            weights_from_priors((0.0, 0.5))

    def test_common_scaling_leaves_weights_unchanged(self):
        base = (0.12, 0.31, 0.52)
        scaled = tuple(0.5 * p for p in base)
        assert np.allclose(
            weights_from_priors(base).w, weights_from_priors(scaled).w, atol=1e-15
        )


class TestExpectedMinProcessing:
    def test_deterministic(self):
        dist = ProcessingDistribution.deterministic(3.0)
        assert expected_min_processing(dist, 5) == 3.0

    def test_single_draw_is_mean(self):
        for dist in (
            ProcessingDistribution.deterministic(3.0),
            ProcessingDistribution.exponential(2.0),
        ):
            assert expected_min_processing(dist, 1) == pytest.approx(dist.mean)

    def test_exponential_closed_form_vs_mc_oracle(self):
        dist = ProcessingDistribution.exponential(2.0)
        assert expected_min_processing(dist, 2) == pytest.approx(1.0)
        rng = np.random.default_rng(11)
        draws = rng.exponential(2.0, size=(2, 1_000_000)).min(axis=0)
        assert draws.mean() == pytest.approx(1.0, abs=4 * draws.std() / 1000.0)

    def test_half_normal_mc_vs_quadrature_oracle(self):
        sigma = 2.0
        m = 3
        dist = ProcessingDistribution.half_normal(sigma)
        # E[min of m half-normals] = int_0^inf erfc(t/(sigma sqrt 2))^m dt
        oracle, _ = integrate.quad(
            lambda t: math.erfc(t / (sigma * math.sqrt(2))) ** m, 0, np.inf
        )
        rng = np.random.default_rng(13)
        value = expected_min_processing(dist, m, rng=rng, samples=400_000)
        assert value == pytest.approx(oracle, rel=0.01)
        _, se = mc_expected_min([dist] * m, rng=np.random.default_rng(5), samples=400_000)
        assert se > 0

    def test_nonincreasing_in_m(self):
        for dist in (
            ProcessingDistribution.exponential(2.0),
            ProcessingDistribution.half_normal(1.5),
            ProcessingDistribution.deterministic(2.5),
        ):
            rng = np.random.default_rng(17)
            values = [
                expected_min_processing(dist, m, rng=rng, samples=150_000)
                for m in (1, 2, 4, 8)
            ]
            assert all(a >= b - 0.02 for a, b in zip(values, values[1:]))

    def test_zero_vehicles_rejected(self):
        with pytest.raises(ValueError):
            expected_min_processing(ProcessingDistribution.deterministic(1.0), 0)

    def test_half_normal_mean(self):
        dist = ProcessingDistribution.half_normal(10.0)
        assert dist.mean == pytest.approx(10.0 * math.sqrt(2.0 / math.pi))


def make_env(processing, coords=None):
    n = len(processing)
    if coords is None:
        travel = np.zeros((n, n))
        return Environment(travel, tuple(processing), (0.5,) * n)
    return Environment.from_coordinates(coords, processing, (0.5,) * n)


class TestTOne:
    def test_deterministic_best_singleton(self):
        env = make_env([ProcessingDistribution.deterministic(v) for v in (1, 2, 3, 4)])
        assert t_one(env, 2) == 1.0

    def test_single_vehicle_is_min_mean(self):
        env = make_env(
            [
                ProcessingDistribution.exponential(2.0),
                ProcessingDistribution.deterministic(1.5),
            ]
        )
        assert t_one(env, 1) == pytest.approx(1.5)

    def test_exponential_pair_enumeration_oracle(self):
        env = make_env(
            [ProcessingDistribution.exponential(2.0), ProcessingDistribution.exponential(4.0)]
        )
        # multisets of size 2: {1,1} mean 1; {1,2} mean 1/(1/2+1/4)=4/3; {2,2} mean 2
        assert t_one(env, 2) == pytest.approx(1.0)
        rng = np.random.default_rng(3)
        mins = np.minimum(
            rng.exponential(2.0, 500_000), rng.exponential(2.0, 500_000)
        )
        assert mins.mean() == pytest.approx(1.0, rel=0.01)

    def test_never_above_best_single_region(self):
        env = make_env(
            [
                ProcessingDistribution.exponential(2.0),
                ProcessingDistribution.deterministic(3.0),
                ProcessingDistribution.half_normal(2.0),
            ]
        )
        rng = np.random.default_rng(23)
        for m in (1, 2, 3):
            bound = min(
                expected_min_processing(d, m, rng=np.random.default_rng(29), samples=150_000)
                for d in env.processing
            )
            assert t_one(env, m, rng=rng, samples=150_000) <= bound + 0.02

    def test_enumeration_cap(self):
        env = make_env([ProcessingDistribution.deterministic(1.0)] * 60)
        with pytest.raises(ValueError, match="cap"):
            t_one(env, 6)


class TestEnvironment:
    def test_from_coordinates(self):
        env = make_env(
            [ProcessingDistribution.deterministic(1.0)] * 4,
            coords=[(10, 0), (5, 0), (0, 5), (0, 10)],
        )
        assert env.travel[0, 1] == pytest.approx(5.0)
        assert env.travel[0, 3] == pytest.approx(math.sqrt(200))
        assert np.allclose(env.travel, env.travel.T)
        assert np.all(np.diag(env.travel) == 0)
        assert env.d_max == pytest.approx(math.sqrt(200))

    def test_invalid_travel_rejected(self):
        bad = np.array([[0.0, -1.0], [1.0, 0.0]])
        with pytest.raises(ValueError):
            Environment(bad, (ProcessingDistribution.deterministic(1.0),) * 2, (0.5, 0.5))

    def test_nonzero_diagonal_rejected(self):
        bad = np.array([[0.5, 1.0], [1.0, 0.0]])
        with pytest.raises(ValueError):
            Environment(bad, (ProcessingDistribution.deterministic(1.0),) * 2, (0.5, 0.5))

    def test_prior_bounds(self):
        with pytest.raises(ValueError):
            Environment(
                np.zeros((1, 1)), (ProcessingDistribution.deterministic(1.0),), (1.0,)
            )


class TestAnomalySchedule:
    def test_negative_appearance_rejected(self):
        with pytest.raises(ValueError):
            AnomalySchedule((-1.0, None))

    def test_never(self):
        sched = AnomalySchedule.never(3)
        assert sched.appearance == (None, None, None)
        assert sched.max_appearance == 0.0
