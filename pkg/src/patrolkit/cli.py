"""Command-line interface.

Subcommands: design (policy construction), analyze (formulas and
bounds), simulate (Monte-Carlo trials to CSV/JSON), scenario-check (the
randomized uniqueness certificate). Every output embeds or sits beside
a run manifest. Exit codes: 0 success, 2 configuration error, 3
convergence failure, 4 runtime budget exceeded.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass, asdict

import numpy as np

from . import __version__, analysis, policy as policymod
from .scenario import ScenarioSampleConfig, uniqueness_certificate
from .scenariofile import Scenario, ScenarioError, load_scenario
from .sim import engine

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CONVERGENCE = 3
EXIT_BUDGET = 4


@dataclass
class RunManifest:
    subcommand: str
    config: dict
    seed: object
    version: str
    runtime_seconds: float


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_CONFIG):
        super().__init__(message)
        self.code = code


def _emit(payload: dict, out: str | None) -> None:
    text = json.dumps(payload, indent=2, allow_nan=True)
    if out is None:
        print(text)
    else:
        with open(out, "w") as fh:
            fh.write(text + "\n")


def _manifest(args: argparse.Namespace, subcommand: str, started: float, seed=None) -> dict:
    config = {k: v for k, v in vars(args).items() if k != "func" and not k.startswith("_")}
    return asdict(
        RunManifest(subcommand, config, seed, __version__, time.monotonic() - started)
    )


def _edges_for_topology(topology: str, n: int):
    if topology == "all":
        return None
    if topology == "line":
        return policymod.line_edges(n)
    if topology == "ring":
        return policymod.ring_edges(n)
    try:
        with open(topology) as fh:
            doc = json.load(fh)
        return [(int(i) - 1, int(j) - 1) for i, j in doc["edges"]]
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CliError(f"topology file {topology!r}: {exc}")


def _subset_optimal(scenario: Scenario, eta: float, subset, grad_tol=1e-9):
    idx = np.array(subset)
    w = scenario.weights.w[idx]
    w = w / w.sum()
    d = scenario.model.divergences[idx]
    v = w * analysis.wald_eta_bar(eta) / d
    tbar = scenario.env.mean_processing[idx]
    travel = scenario.env.travel[np.ix_(idx, idx)]
    s = np.sqrt(w / d)
    res = policymod.minimize_average_delay(v, tbar, travel, s / s.sum(), grad_tol=grad_tol)
    q = np.zeros(scenario.n)
    q[idx] = res.q
    return policymod.StationaryPolicy(q), res


def _resolve_policy(args: argparse.Namespace, scenario: Scenario, eta: float):
    """Translate --policy/--vehicles/--topology flags into a policy spec.

    Returns (policy, diagnostics dict).
    """
    name = args.policy
    m = args.vehicles
    n = scenario.n
    diagnostics: dict = {}
    edges = _edges_for_topology(args.topology, n) if hasattr(args, "topology") else None
    if edges is not None and m > 1:
        raise CliError("--topology line/ring is only supported for a single vehicle")

    if name == "adaptive":
        if m > 1:
            part = policymod.partition_regions(n, m)
            return engine.AdaptiveRouting(partition=part), diagnostics
        return engine.AdaptiveRouting(edges=edges), diagnostics

    if name == "uniform":
        base = policymod.StationaryPolicy.uniform(n)
        if m > 1:
            spec = policymod.MultiVehiclePolicy(tuple(base for _ in range(m)))
            return spec, diagnostics
    elif name == "efficient":
        if m > 1:
            part = policymod.partition_regions(n, m)
            spec = policymod.partitioned_efficient_policy(
                scenario.weights, scenario.model.divergences, part
            )
            return spec, diagnostics
        base = policymod.efficient_policy(scenario.weights, scenario.model.divergences)
    elif name == "optimal":
        if m > 1:
            part = policymod.partition_regions(n, m)
            policies = []
            for subset in part.subsets:
                pol, res = _subset_optimal(scenario, eta, subset)
                if not res.converged:
                    raise CliError(
                        f"optimal policy failed to converge on subset {subset}; "
                        f"gradient norm {res.grad_norm:.3e}",
                        EXIT_CONVERGENCE,
                    )
                policies.append(pol)
            return policymod.MultiVehiclePolicy(tuple(policies), part), diagnostics
        res = policymod.optimal_policy(scenario.env, scenario.model, scenario.weights, eta)
        diagnostics["optimal"] = {
            "converged": res.converged,
            "iterations": res.iterations,
            "grad_norm": res.grad_norm,
            "average_delay": res.average_delay,
        }
        if not res.converged:
            raise CliError(
                f"optimal policy failed to converge; gradient norm {res.grad_norm:.3e}",
                EXIT_CONVERGENCE,
            )
        base = res.policy
    else:
        # Policy file: {"q": [...]} or {"policies": [[...], ...]}.
        try:
            with open(name) as fh:
                doc = json.load(fh)
            if "policies" in doc:
                policies = tuple(
                    policymod.StationaryPolicy(np.asarray(row, dtype=float))
                    for row in doc["policies"]
                )
                part = None
                if "partition" in doc:
                    part = policymod.Partition(
                        tuple(tuple(int(k) - 1 for k in s) for s in doc["partition"]), n
                    )
                return policymod.MultiVehiclePolicy(policies, part), diagnostics
            base = policymod.StationaryPolicy(np.asarray(doc["q"], dtype=float))
        except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise CliError(f"policy file {name!r}: {exc}")
        if m > 1:
            return policymod.MultiVehiclePolicy(tuple(base for _ in range(m))), diagnostics

    if edges is not None:
        chain = policymod.metropolis_hastings_chain(edges, base.q)
        diagnostics["markov_chain"] = {"target": base.q.tolist()}
        return chain, diagnostics
    return base, diagnostics


# ── Subcommands ─────────────────────────────────────────────────────


def cmd_design(args: argparse.Namespace) -> int:
    started = time.monotonic()
    scenario = load_scenario(args.scenario)
    eta = scenario.eta if args.eta is None else args.eta
    weights = scenario.weights
    divergences = scenario.model.divergences
    q_dag = policymod.efficient_policy(weights, divergences)
    results: dict = {
        "efficient_policy": q_dag.q.tolist(),
        "weights": weights.w.tolist(),
        "divergences": divergences.tolist(),
        "eta": eta,
    }
    res = policymod.optimal_policy(scenario.env, scenario.model, weights, eta)
    results["optimal_policy"] = {
        "q": res.policy.q.tolist(),
        "average_delay": res.average_delay,
        "converged": res.converged,
        "iterations": res.iterations,
        "grad_norm": res.grad_norm,
    }
    if args.vehicles > 1:
        part = policymod.partition_regions(scenario.n, args.vehicles)
        multi = policymod.partitioned_efficient_policy(weights, divergences, part)
        results["partition"] = [[k + 1 for k in s] for s in part.subsets]
        results["partitioned_efficient_policy"] = [p.q.tolist() for p in multi.policies]
    matrix = None
    if args.topology != "all":
        edges = _edges_for_topology(args.topology, scenario.n)
        chain = policymod.metropolis_hastings_chain(edges, q_dag.q)
        matrix = chain.transition
        results["markov_chain"] = {
            "topology": args.topology,
            "target": q_dag.q.tolist(),
            "transition": matrix.tolist(),
        }
    if args.matrix_csv:
        if matrix is None:
            raise CliError("--matrix-csv requires --topology line/ring/FILE")
        np.savetxt(args.matrix_csv, matrix, delimiter=",")
    if not res.converged:
        raise CliError(
            f"optimal policy failed to converge; gradient norm {res.grad_norm:.3e}",
            EXIT_CONVERGENCE,
        )
    payload = {"manifest": _manifest(args, "design", started), "results": results}
    _emit(payload, args.out)
    return EXIT_OK


def cmd_analyze(args: argparse.Namespace) -> int:
    started = time.monotonic()
    scenario = load_scenario(args.scenario)
    eta = scenario.eta if args.eta is None else args.eta
    spec, diagnostics = _resolve_policy(args, scenario, eta)
    if isinstance(spec, policymod.MarkovRoutingChain):
        q = spec.target
    elif isinstance(spec, policymod.StationaryPolicy):
        q = spec.q
    elif isinstance(spec, engine.AdaptiveRouting) and spec.partition is None:
        # The adaptive policy has no stationary vector; report formulas
        # at the efficient policy it modulates, plus its own bound.
        q = policymod.efficient_policy(scenario.weights, scenario.model.divergences).q
    else:
        raise CliError("analyze reports single-vehicle stationary formulas; use --vehicles 1")
    results = analysis.full_report(
        q, scenario.env, scenario.model, scenario.weights, eta, m=args.vehicles
    )
    results["policy"] = q.tolist()
    results.update(diagnostics)
    payload = {"manifest": _manifest(args, "analyze", started), "results": results}
    _emit(payload, args.out)
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    started = time.monotonic()
    scenario = load_scenario(args.scenario)
    if args.seed is None:
        print("no --seed given; using fixed seed 0", file=sys.stderr)
        args.seed = 0
    eta = scenario.eta if args.eta is None else args.eta
    if args.persistent_anomalies:
        from dataclasses import replace

        scenario = replace(
            scenario,
            schedule=type(scenario.schedule)(scenario.schedule.appearance, False),
        )
    spec, diagnostics = _resolve_policy(args, scenario, eta)
    config = engine.TrialConfig(
        scenario=scenario,
        policy=spec,
        trials=args.trials,
        master_seed=args.seed,
        eta=eta,
        horizon=args.horizon,
        workers=args.workers,
    )
    result = engine.run_ensemble(config)
    elapsed = time.monotonic() - started
    if args.time_budget is not None and elapsed > args.time_budget:
        print(f"runtime {elapsed:.1f}s exceeded budget {args.time_budget}s", file=sys.stderr)
        return EXIT_BUDGET
    manifest = _manifest(args, "simulate", started, seed=args.seed)
    manifest["backend"] = result.backend
    if args.detections:
        engine.write_detection_log(args.detections, result, scenario.schedule)
    if args.out.endswith(".csv"):
        engine.write_trials_csv(args.out, result)
        with open(args.out + ".manifest.json", "w") as fh:
            json.dump({"manifest": manifest, "report": result.report.to_dict()}, fh, indent=2)
            fh.write("\n")
    else:
        payload = {
            "manifest": manifest,
            "report": result.report.to_dict(),
            "diagnostics": diagnostics,
        }
        _emit(payload, args.out)
    return EXIT_OK


def cmd_scenario_check(args: argparse.Namespace) -> int:
    started = time.monotonic()
    if args.seed is None:
        print("no --seed given; using fixed seed 0", file=sys.stderr)
        args.seed = 0
    try:
        config = ScenarioSampleConfig(
            n1=args.n1, mu1=args.mu1, nu1=args.nu1, seed=args.seed, grad_tol=args.grad_tol
        )
    except ValueError as exc:
        raise CliError(str(exc))
    deadline = None if args.time_budget is None else time.monotonic() + args.time_budget
    try:
        report = uniqueness_certificate(config, deadline=deadline)
    except TimeoutError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_BUDGET
    payload = {
        "manifest": _manifest(args, "scenario-check", started, seed=args.seed),
        "results": report.to_dict(),
    }
    _emit(payload, args.out)
    return EXIT_OK


# ── Parser ──────────────────────────────────────────────────────────


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="patrolkit",
        description="Routing-policy design and simulation for spatial quickest detection.",
    )
    parser.add_argument("--version", action="version", version=f"patrolkit {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def add_common(p, policy_flag=True):
        p.add_argument("--scenario", required=True, help="scenario JSON path or builtin name")
        p.add_argument("--eta", type=float, default=None, help="override detector threshold")
        p.add_argument("--vehicles", type=int, default=1, help="vehicle count")
        p.add_argument("--out", default=None, help="output path (default: stdout)")
        if policy_flag:
            p.add_argument(
                "--policy",
                default="efficient",
                help="efficient | uniform | optimal | adaptive | policy-file.json",
            )
            p.add_argument(
                "--topology",
                default="all",
                help="all | line | ring | edge-file.json (routing constrained to a graph)",
            )

    p = sub.add_parser("design", help="print the designed policies as JSON")
    add_common(p, policy_flag=False)
    p.add_argument("--topology", default="all", help="all | line | ring | edge-file.json")
    p.add_argument("--matrix-csv", default=None, help="also write the MH transition matrix as CSV")
    p.set_defaults(func=cmd_design)

    p = sub.add_parser("analyze", help="evaluate every delay formula and bound")
    add_common(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("simulate", help="run Monte-Carlo trials")
    add_common(p)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--horizon", type=float, default=None)
    p.add_argument("--persistent-anomalies", action="store_true")
    p.add_argument("--detections", default=None, help="also write a detection-event CSV here")
    p.add_argument("--time-budget", type=float, default=None, help="seconds; exit 4 if exceeded")
    p.set_defaults(func=cmd_simulate)
    # simulate writes CSV or JSON depending on --out suffix
    for action in p._actions:
        if action.dest == "out":
            action.required = True

    p = sub.add_parser("scenario-check", help="randomized uniqueness certificate")
    p.add_argument("--n1", type=int, default=1000)
    p.add_argument("--mu1", type=float, default=0.01)
    p.add_argument("--nu1", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--grad-tol", type=float, default=1e-9)
    p.add_argument("--out", default=None)
    p.add_argument("--time-budget", type=float, default=None)
    p.set_defaults(func=cmd_scenario_check)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
