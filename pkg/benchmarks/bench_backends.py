#!/usr/bin/env python3
"""Benchmark the compiled simulation kernels against the pure-Python twins.

Runs the same seeded workloads on both backends, checks the results are
bit-identical, and prints per-workload timings with the speedup.

Usage: python benchmarks/bench_backends.py [--trials N]
"""
import argparse
import time

import numpy as np

from patrolkit.policy import (
    StationaryPolicy,
    metropolis_hastings_chain,
    partition_regions,
    partitioned_efficient_policy,
    ring_edges,
)
from patrolkit.scenariofile import builtin_scenario
from patrolkit.sim import _kernels_py
from patrolkit.sim._backend import available_backends
from patrolkit.sim.engine import lower_scenario


def gen(seed):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def time_trials(kernels, runner, low, policy, trials, n_gens=1):
    started = time.perf_counter()
    digest = 0.0
    for t in range(trials):
        if n_gens == 1:
            out = getattr(kernels, runner)(low, policy, gen((4242, t)))
        else:
            out = getattr(kernels, runner)(
                low, policy, [gen((4242, t, r)) for r in range(n_gens)]
            )
        digest += float(np.nansum(out["delay"])) + out["events"]
    return time.perf_counter() - started, digest


def workloads(trials):
    sc1 = builtin_scenario("example1")
    low1 = lower_scenario(sc1, 5.0, 8000.0, True)
    yield (
        "example1 stationary CUSUM",
        "run_cusum_single",
        low1,
        ("stationary", np.ascontiguousarray(StationaryPolicy.uniform(4).q)),
        trials,
        1,
    )
    sc4 = builtin_scenario("example4")
    low4 = lower_scenario(sc4, 5.0, 8000.0, True)
    yield ("example4 adaptive CUSUM", "run_cusum_single", low4, ("adaptive", None), trials, 1)
    chain = metropolis_hastings_chain(ring_edges(4), np.full(4, 0.25))
    yield (
        "example1 ring Markov routing",
        "run_cusum_single",
        low1,
        (
            "markov",
            np.ascontiguousarray(chain.transition),
            np.ascontiguousarray(chain.target),
        ),
        trials,
        1,
    )
    sc3 = builtin_scenario("example3")
    low3 = lower_scenario(sc3, 5.0, 8000.0, True)
    part = partition_regions(6, 3)
    multi = partitioned_efficient_policy(sc3.weights, sc3.model.divergences, part)
    yield (
        "example3 three-vehicle partition",
        "run_cusum_multi",
        low3,
        (
            "stationary",
            np.ascontiguousarray(multi.stacked()),
            np.ascontiguousarray(part.owner),
        ),
        trials,
        3,
    )
    sc6 = builtin_scenario("example6")
    low6 = lower_scenario(sc6, 18.0, 3000.0, True)
    yield (
        "example6 adaptive GLR (7 hypotheses)",
        "run_glr_single",
        low6,
        ("adaptive", None),
        max(trials // 2, 1),
        1,
    )


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--trials", type=int, default=300)
    args = parser.parse_args()

    backends = available_backends()
    if "compiled" not in backends:
        print("compiled backend not built; nothing to compare")
        return
    compiled = backends["compiled"]

    print(f"{'workload':<38} {'pure (s)':>10} {'compiled (s)':>13} {'speedup':>9}")
    print("-" * 74)
    for name, runner, low, policy, trials, n_gens in workloads(args.trials):
        t_c, digest_c = time_trials(compiled, runner, low, policy, trials, n_gens)
        t_p, digest_p = time_trials(_kernels_py, runner, low, policy, trials, n_gens)
        assert digest_c == digest_p, f"backend results diverge on {name}"
        print(f"{name:<38} {t_p:>10.3f} {t_c:>13.4f} {t_p / t_c:>8.1f}x")
    print(f"\nper-workload trials: {args.trials} (results verified bit-identical)")


if __name__ == "__main__":
    main()
