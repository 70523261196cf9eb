"""Randomized uniqueness-certificate tests."""
import math

import numpy as np
import pytest

from patrolkit.policy import minimize_average_delay
from patrolkit.scenario import (
    CertificateReport,
    ScenarioSampleConfig,
    sample_instance,
    uniqueness_certificate,
)


def rng(seed=0):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


class TestSampleInstance:
    def test_region_count_range(self):
        g = rng(1)
        sizes = {sample_instance(g).n for _ in range(300)}
        assert sizes <= set(range(3, 13))
        assert {3, 12} <= sizes

    def test_travel_matrix_euclidean(self):
        g = rng(2)
        for _ in range(20):
            inst = sample_instance(g)
            assert np.allclose(inst.travel, inst.travel.T)
            assert np.all(np.diag(inst.travel) == 0)
            assert np.all(inst.travel >= 0)

    def test_start_point_on_simplex(self):
        g = rng(3)
        for _ in range(50):
            inst = sample_instance(g)
            assert inst.q0.sum() == pytest.approx(1.0)
            assert np.all(inst.q0 >= 0)

    def test_processing_means_half_normal(self):
        # sigma = 10 underlying normal: mean = 10 sqrt(2/pi) = 7.9788
        g = rng(4)
        samples = np.concatenate([sample_instance(g).tbar for _ in range(3000)])
        expected = 10.0 * math.sqrt(2.0 / math.pi)
        se = samples.std(ddof=1) / math.sqrt(samples.size)
        assert samples.mean() == pytest.approx(expected, abs=5 * se)

    def test_weights_in_unit_interval(self):
        g = rng(5)
        for _ in range(50):
            inst = sample_instance(g)
            assert np.all((inst.v > 0) & (inst.v < 1))


class TestSampleSizeCondition:
    def test_paper_parameters_satisfy_condition(self):
        config = ScenarioSampleConfig(n1=1000, mu1=0.01, nu1=1e-4)
        assert config.required_samples() == 922  # ceil(9.2103/0.01)
        assert config.n1 >= config.required_samples()

    def test_undersized_run_rejected(self):
        with pytest.raises(ValueError, match="scenario bound"):
            ScenarioSampleConfig(n1=900, mu1=0.01, nu1=1e-4)

    def test_parameter_ranges(self):
        with pytest.raises(ValueError):
            ScenarioSampleConfig(n1=10, mu1=0.0, nu1=0.5)


class TestCertificate:
    def test_small_run_reports(self):
        config = ScenarioSampleConfig(n1=40, mu1=0.2, nu1=0.01, seed=6)
        report = uniqueness_certificate(config, keep_gaps=True)
        assert report.gamma_hat >= 0.0
        assert report.gamma_hat <= 1e-4
        assert report.failures == 0
        assert report.gaps.shape == (40,)
        assert report.worst_instance in range(40)
        payload = report.to_dict()
        assert payload["confidence"] == pytest.approx(0.99)
        assert payload["coverage"] == pytest.approx(0.8)

    def test_gamma_monotone_in_descent_tolerance(self):
        loose = uniqueness_certificate(
            ScenarioSampleConfig(n1=30, mu1=0.2, nu1=0.01, seed=7, grad_tol=1e-3)
        )
        tight = uniqueness_certificate(
            ScenarioSampleConfig(n1=30, mu1=0.2, nu1=0.01, seed=7, grad_tol=1e-9)
        )
        assert tight.gamma_hat <= loose.gamma_hat + 1e-12

    def test_deterministic_given_seed(self):
        config = ScenarioSampleConfig(n1=25, mu1=0.2, nu1=0.01, seed=8)
        a = uniqueness_certificate(config)
        b = uniqueness_certificate(config)
        assert a.gamma_hat == b.gamma_hat
        assert a.worst_instance == b.worst_instance

    def test_deadline_abort(self):
        import time

        config = ScenarioSampleConfig(n1=1000, mu1=0.01, nu1=1e-4, seed=9)
        with pytest.raises(TimeoutError):
            uniqueness_certificate(config, deadline=time.monotonic() - 1.0)

    def test_two_region_instances_agree_at_solver_tolerance(self):
        # One-dimensional problems: any two starts land on the same point.
        g = rng(10)
        for _ in range(20):
            v = g.random(2)
            tbar = np.abs(10 * g.standard_normal(2))
            travel = np.array([[0.0, 5.0], [5.0, 0.0]])
            a = minimize_average_delay(v, tbar, travel, g.dirichlet(np.ones(2)))
            b = minimize_average_delay(v, tbar, travel, np.array([0.5, 0.5]))
            assert a.converged and b.converged
            assert np.abs(a.q - b.q).max() <= 1e-6
