"""Monte-Carlo engine tests: determinism, reductions to theory, frame
conditions, multi-vehicle structure, censoring, false alarms."""
import math
from dataclasses import replace

import numpy as np
import pytest

from patrolkit import analysis
from patrolkit.detection import CusumState, cusum_update, wald_eta_bar, wald_false_alarm_mean
from patrolkit.envmodel import (
    AnomalySchedule,
    DensityPair,
    Environment,
    Gaussian,
    ObservationModel,
    ProcessingDistribution,
)
from patrolkit.policy import (
    StationaryPolicy,
    complete_edges,
    metropolis_hastings_chain,
    partition_regions,
    partitioned_efficient_policy,
)
from patrolkit.scenariofile import Scenario, builtin_scenario
from patrolkit.sim.engine import (
    AdaptiveRouting,
    TrialConfig,
    run_ensemble,
    run_markov_routing,
    run_multi_vehicle,
    run_trial,
)


def single_region_scenario(appearance=0.0, eta=5.0, horizon=None):
    env = Environment(
        np.zeros((1, 1)), (ProcessingDistribution.deterministic(1.0),), (0.5,)
    )
    model = ObservationModel((DensityPair(Gaussian(0, 1), Gaussian(1, 1)),))
    return Scenario(
        name="unit",
        env=env,
        model=model,
        schedule=AnomalySchedule((appearance,)),
        eta=eta,
        horizon=horizon,
    )


class TestDeterminism:
    def test_identical_records_for_identical_seed(self):
        sc = builtin_scenario("example1")
        cfg = TrialConfig(scenario=sc, policy=StationaryPolicy.uniform(4), master_seed=3)
        a = run_trial(cfg, 5)
        b = run_trial(cfg, 5)
        assert np.array_equal(a.delay, b.delay, equal_nan=True)
        assert np.array_equal(a.observations, b.observations)
        assert a.events == b.events
        assert a.end_time == b.end_time

    def test_different_trials_differ(self):
        sc = builtin_scenario("example1")
        cfg = TrialConfig(scenario=sc, policy=StationaryPolicy.uniform(4), master_seed=3)
        a = run_trial(cfg, 0)
        b = run_trial(cfg, 1)
        assert not np.array_equal(a.delay, b.delay, equal_nan=True)

    def test_worker_count_does_not_change_results(self):
        sc = builtin_scenario("example1")
        base = TrialConfig(
            scenario=sc, policy=StationaryPolicy.uniform(4), trials=24, master_seed=9
        )
        serial = run_ensemble(base)
        parallel = run_ensemble(replace(base, workers=3))
        for a, b in zip(serial.records, parallel.records):
            assert a.trial == b.trial
            assert np.array_equal(a.delay, b.delay, equal_nan=True)
            assert np.array_equal(a.observations, b.observations)
        assert serial.report.average == parallel.report.average


class TestSingleRegionReduction:
    def test_matches_independent_oracle(self):
        # One region, unit deterministic processing, zero travel, anomaly
        # at t=0: the trial delay equals the plain CUSUM run length. The
        # Wald expression is its lower-side approximation.
        sc = single_region_scenario()
        cfg = TrialConfig(
            scenario=sc, policy=StationaryPolicy(np.array([1.0])), trials=4000,
            master_seed=17,
        )
        report = run_ensemble(cfg).report
        rng = np.random.default_rng(100)
        runs = 20_000
        oracle = np.empty(runs)
        for r in range(runs):
            state = CusumState(eta=5.0)
            n = 0
            while True:
                n += 1
                if cusum_update(state, rng.standard_normal() + 0.5):
                    break
            oracle[r] = n
        se = math.hypot(
            float(report.delay_stderr[0]),
            float(oracle.std(ddof=1) / math.sqrt(runs)),
        )
        assert report.delays[0] == pytest.approx(oracle.mean(), abs=4 * se)
        assert report.delays[0] >= wald_eta_bar(5.0) / 0.5  # lower-side theory

    def test_observation_count_equals_delay_here(self):
        # Unit processing and zero travel: delay and observation count
        # coincide up to the partial first interval.
        sc = single_region_scenario()
        cfg = TrialConfig(
            scenario=sc, policy=StationaryPolicy(np.array([1.0])), trials=500,
            master_seed=23,
        )
        for rec in run_ensemble(cfg).records:
            assert rec.observations[0] == pytest.approx(rec.delay[0], abs=1.0)


class TestSchedulesAndCensoring:
    def test_no_anomalies_high_threshold_no_detections(self):
        sc = single_region_scenario()
        sc = replace(sc, schedule=AnomalySchedule((None,)), eta=200.0, horizon=500.0)
        cfg = TrialConfig(scenario=sc, policy=StationaryPolicy(np.array([1.0])), trials=20)
        for rec in run_ensemble(cfg).records:
            assert not rec.detected.any()
            assert rec.false_alarms[0] == 0
            assert not rec.censored.any()

    def test_horizon_censoring(self):
        sc = single_region_scenario(appearance=1.0, horizon=3.0)
        cfg = TrialConfig(
            scenario=sc, policy=StationaryPolicy(np.array([1.0])), trials=50,
            master_seed=2, eta=50.0,
        )
        result = run_ensemble(cfg)
        assert int(result.report.censored_trials[0]) == 50
        assert all(math.isnan(rec.delay[0]) for rec in result.records)

    def test_pre_appearance_crossings_are_false_alarms(self):
        # Low threshold and late anomaly: nominal data trips the
        # detector; those crossings count as false alarms, not delays.
        sc = single_region_scenario(appearance=400.0, eta=0.5, horizon=500.0)
        cfg = TrialConfig(
            scenario=sc, policy=StationaryPolicy(np.array([1.0])), trials=30,
            master_seed=4,
        )
        result = run_ensemble(cfg)
        total_false = sum(int(rec.false_alarms[0]) for rec in result.records)
        assert total_false > 0
        for rec in result.records:
            if rec.detected[0]:
                assert rec.delay[0] >= 0.0

    def test_false_alarm_interarrival_wald_side(self):
        # Persistent-nominal study at eta=3: mean observations between
        # false alarms at the region stays above half the Wald value.
        eta = 3.0
        sc = single_region_scenario(eta=eta)
        sc = replace(sc, schedule=AnomalySchedule((None,)), horizon=40_000.0)
        cfg = TrialConfig(
            scenario=sc, policy=StationaryPolicy(np.array([1.0])), trials=30,
            master_seed=8,
        )
        result = run_ensemble(cfg)
        events = sum(rec.events for rec in result.records)
        alarms = sum(int(rec.false_alarms[0]) for rec in result.records)
        assert alarms > 0
        per_alarm = events / alarms
        wald = wald_false_alarm_mean(eta, 0.5)
        assert per_alarm >= 0.5 * wald

    def test_persistent_anomaly_mode(self):
        sc = single_region_scenario()
        sc = replace(sc, schedule=AnomalySchedule((0.0,), remove_on_detection=False))
        cfg = TrialConfig(
            scenario=sc, policy=StationaryPolicy(np.array([1.0])), trials=5,
            master_seed=6, horizon=200.0, stop_when_all_detected=False,
        )
        for rec in run_ensemble(cfg).records:
            assert rec.detected[0]
            assert rec.false_alarms[0] == 0  # post-detection crossings ignored
            assert rec.end_time == 200.0


class TestEventLogReplay:
    def test_kernel_matches_detection_module(self):
        # Replaying the logged log-likelihood ratios through the
        # detection module reproduces the kernel's statistic trace.
        sc = builtin_scenario("example1")
        cfg = TrialConfig(
            scenario=sc, policy=StationaryPolicy.uniform(4), master_seed=12,
            record_events=True,
        )
        rec = run_trial(cfg, 0)
        states = [CusumState(eta=5.0) for _ in range(4)]
        for t, region, llr, stat_after in rec.event_log:
            cusum_update(states[region], llr)
            assert states[region].statistic == pytest.approx(stat_after, abs=1e-12)

    def test_example1_lower_bound_behavior(self):
        # Heavily biased policy toward region 1: the MC delay still sits
        # above the theoretical expression (Wald lower side).
        sc = builtin_scenario("example1")
        q = StationaryPolicy(np.array([0.85, 0.05, 0.05, 0.05]))
        cfg = TrialConfig(scenario=sc, policy=q, trials=1500, master_seed=14)
        report = run_ensemble(cfg).report
        theory = analysis.expected_delay_single(q.q, sc.env, sc.model, 5.0, 0)
        assert report.delays[0] >= theory - 2 * report.delay_stderr[0]


class TestMultiVehicle:
    def test_partitioned_equals_independent_singles(self):
        # The partition decouples the system: vehicle r's trajectory and
        # detections match a single-vehicle run on its sub-scenario with
        # the same (master, trial, vehicle) stream.
        sc = builtin_scenario("example3")
        part = partition_regions(6, 3)
        multi_policy = partitioned_efficient_policy(
            sc.weights, sc.model.divergences, part
        )
        cfg = TrialConfig(
            scenario=sc, policy=multi_policy, trials=1, master_seed=77,
            horizon=5000.0,
        )
        rec = run_trial(cfg, 4)
        for r, subset in enumerate(part.subsets):
            idx = np.array(subset)
            sub_env = Environment(
                sc.env.travel[np.ix_(idx, idx)],
                tuple(sc.env.processing[i] for i in idx),
                tuple(sc.env.priors[i] for i in idx),
            )
            sub_model = ObservationModel(tuple(sc.model.pairs[i] for i in idx))
            sub_sched = AnomalySchedule(
                tuple(sc.schedule.appearance[i] for i in idx)
            )
            sub_scenario = Scenario(
                name=f"sub{r}", env=sub_env, model=sub_model, schedule=sub_sched,
                eta=sc.eta, horizon=5000.0,
            )
            sub_q = multi_policy.policies[r].q[idx]
            sub_cfg = TrialConfig(
                scenario=sub_scenario, policy=StationaryPolicy(sub_q),
                master_seed=77,
            )
            # Same stream as vehicle r: master_seed keyed on (seed, trial, r).
            from patrolkit.sim.engine import lower_scenario, _kernel_policy
            from patrolkit.sim._backend import kernels

            low = lower_scenario(sub_scenario, sc.eta, 5000.0, True)
            gen = np.random.Generator(
                np.random.Philox(np.random.SeedSequence((77, 4, r)))
            )
            out = kernels.run_cusum_single(
                low, ("stationary", np.ascontiguousarray(sub_q)), gen
            )
            assert np.array_equal(rec.delay[idx], out["delay"], equal_nan=True)
            assert np.array_equal(rec.observations[idx], out["obs_count"])

    def test_shared_policy_dominates_theorem4(self):
        sc = builtin_scenario("example3")
        base = StationaryPolicy.uniform(6)
        from patrolkit.policy import MultiVehiclePolicy

        policy = MultiVehiclePolicy((base, base, base))
        cfg = TrialConfig(scenario=sc, policy=policy, trials=800, master_seed=19)
        report = run_multi_vehicle(cfg).report
        from patrolkit.envmodel import t_one

        tone = t_one(sc.env, 3)
        for k in range(6):
            bound = analysis.multi_vehicle_lower_bound(policy, sc.model, tone, 5.0, k)
            assert bound <= report.delays[k] + 2 * report.delay_stderr[k]

    def test_multi_requires_multiple_vehicles(self):
        sc = builtin_scenario("example1")
        cfg = TrialConfig(scenario=sc, policy=StationaryPolicy.uniform(4))
        with pytest.raises(ValueError):
            run_multi_vehicle(cfg)


class TestMarkovRouting:
    def test_complete_chain_visit_frequencies(self):
        # Complete-graph chain with uniform target: long-run visit
        # frequencies match i.i.d. uniform sampling (chi-square test).
        from patrolkit.sim._backend import kernels
        from scipy import stats

        n = 4
        chain = metropolis_hastings_chain(complete_edges(n), np.full(n, 0.25))
        gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(55)))
        steps = 1_000_000
        counts = kernels.mh_walk(np.ascontiguousarray(chain.transition), steps, 0, gen)
        chi2 = float((((counts - steps / n) ** 2) / (steps / n)).sum())
        assert chi2 < stats.chi2.ppf(0.999, df=n - 1)

    def test_markov_policy_runs_and_detects(self):
        sc = builtin_scenario("example1")
        chain = metropolis_hastings_chain(
            [(0, 1), (1, 2), (2, 3)], np.full(4, 0.25)
        )
        cfg = TrialConfig(scenario=sc, policy=chain, trials=50, master_seed=33)
        result = run_markov_routing(cfg)
        assert result.report.detected_trials.sum() > 0

    def test_run_markov_requires_chain(self):
        sc = builtin_scenario("example1")
        cfg = TrialConfig(scenario=sc, policy=StationaryPolicy.uniform(4))
        with pytest.raises(ValueError):
            run_markov_routing(cfg)


class TestAdaptive:
    def test_adaptive_runs_and_detects_all(self):
        sc = builtin_scenario("example4")
        cfg = TrialConfig(scenario=sc, policy=AdaptiveRouting(), trials=100, master_seed=41)
        report = run_ensemble(cfg).report
        assert int(report.detected_trials.min()) == 100

    def test_adaptive_chain_reports_mismatch(self):
        sc = builtin_scenario("example4")
        from patrolkit.policy import ring_edges

        cfg = TrialConfig(
            scenario=sc,
            policy=AdaptiveRouting(edges=tuple(ring_edges(4))),
            trials=5,
            master_seed=43,
        )
        for rec in run_ensemble(cfg).records:
            assert math.isfinite(rec.chain_mismatch)
            assert 0.0 <= rec.chain_mismatch <= 1.0

    def test_partitioned_adaptive(self):
        sc = builtin_scenario("example3")
        part = partition_regions(6, 3)
        cfg = TrialConfig(
            scenario=sc, policy=AdaptiveRouting(partition=part), trials=60,
            master_seed=47,
        )
        report = run_ensemble(cfg).report
        assert int(report.detected_trials.min()) >= 55


class TestWaldConsistency:
    def test_observation_counts_within_wald_slack(self):
        # MC mean observation count sits in [1.0, 1.25]x of the
        # first-order expression at eta=5 wherever the per-observation
        # likelihood jumps are moderate (regions 2-4 of the four-region
        # golden; region 1's larger jumps push the overshoot to ~1.26,
        # measured and documented with the acceptance results).
        sc = builtin_scenario("example1")
        rep = run_ensemble(
            TrialConfig(scenario=sc, policy=StationaryPolicy.uniform(4),
                        trials=10_000, master_seed=71)
        ).report
        d = sc.model.divergences
        for k in range(4):
            theory = wald_eta_bar(5.0) / (0.25 * d[k])
            assert rep.observations[k] >= theory - 2 * rep.observation_stderr[k]
            if k >= 1:
                assert 1.0 <= rep.observations[k] / theory <= 1.25

    def test_partitioned_efficient_beats_shared_uniform(self):
        # Three vehicles on six regions: the partitioned efficient
        # policy clearly outperforms all vehicles patrolling uniformly.
        sc = builtin_scenario("example3")
        part = partition_regions(6, 3)
        pe = partitioned_efficient_policy(sc.weights, sc.model.divergences, part)
        from patrolkit.policy import MultiVehiclePolicy

        uniform = MultiVehiclePolicy(
            tuple(StationaryPolicy.uniform(6) for _ in range(3))
        )
        rep_pe = run_ensemble(
            TrialConfig(scenario=sc, policy=pe, trials=2000, master_seed=61)
        ).report
        rep_un = run_ensemble(
            TrialConfig(scenario=sc, policy=uniform, trials=2000, master_seed=61)
        ).report
        assert rep_pe.average < rep_un.average


class TestAggregation:
    def test_standard_error_shrinks_with_trials(self):
        sc = builtin_scenario("example1")
        small = run_ensemble(
            TrialConfig(scenario=sc, policy=StationaryPolicy.uniform(4), trials=400,
                        master_seed=51)
        ).report
        big = run_ensemble(
            TrialConfig(scenario=sc, policy=StationaryPolicy.uniform(4), trials=1600,
                        master_seed=51)
        ).report
        ratio = big.delay_stderr[0] / small.delay_stderr[0]
        assert ratio == pytest.approx(0.5, abs=0.15)

    def test_report_to_dict(self):
        sc = builtin_scenario("example1")
        report = run_ensemble(
            TrialConfig(scenario=sc, policy=StationaryPolicy.uniform(4), trials=10,
                        master_seed=53)
        ).report
        payload = report.to_dict()
        assert payload["source"] == "simulation"
        assert payload["trials"] == 10
        assert len(payload["delays"]) == 4
