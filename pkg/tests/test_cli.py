"""Command-line interface tests: outputs, determinism, exit codes."""
import json
import subprocess
import sys

import numpy as np
import pytest

from patrolkit.cli import main


def run_cli(args):
    return main(list(args))


class TestDesign:
    def test_example1_efficient_policy(self, tmp_path, capsys):
        out = tmp_path / "design.json"
        assert run_cli(["design", "--scenario", "example1", "--out", str(out)]) == 0
        payload = json.loads(out.read_text())
        q = payload["results"]["efficient_policy"]
        assert np.allclose(q, [0.2058, 0.2373, 0.2659, 0.2910], atol=1e-4)
        assert payload["results"]["optimal_policy"]["converged"]
        assert payload["manifest"]["subcommand"] == "design"

    def test_example3_partition(self, tmp_path):
        out = tmp_path / "design.json"
        assert (
            run_cli(
                [
                    "design",
                    "--scenario",
                    "example3",
                    "--vehicles",
                    "3",
                    "--out",
                    str(out),
                ]
            )
            == 0
        )
        payload = json.loads(out.read_text())
        assert payload["results"]["partition"] == [[1, 4], [2, 5], [3, 6]]

    def test_topology_matrix_csv(self, tmp_path):
        out = tmp_path / "design.json"
        csv_path = tmp_path / "matrix.csv"
        code = run_cli(
            [
                "design",
                "--scenario",
                "example1",
                "--topology",
                "ring",
                "--matrix-csv",
                str(csv_path),
                "--out",
                str(out),
            ]
        )
        assert code == 0
        matrix = np.loadtxt(csv_path, delimiter=",")
        assert matrix.shape == (4, 4)
        assert np.allclose(matrix.sum(axis=1), 1.0, atol=1e-12)
        payload = json.loads(out.read_text())
        target = np.array(payload["results"]["markov_chain"]["target"])
        flow = target[:, None] * matrix
        assert np.abs(flow - flow.T).max() <= 1e-12

    def test_malformed_scenario_exit_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{broken")
        assert run_cli(["design", "--scenario", str(bad)]) == 2

    def test_missing_scenario_exit_2(self, tmp_path):
        assert run_cli(["design", "--scenario", str(tmp_path / "nope.json")]) == 2


class TestAnalyze:
    def test_example1_uniform_delay(self, tmp_path):
        out = tmp_path / "analyze.json"
        code = run_cli(
            [
                "analyze",
                "--scenario",
                "example1",
                "--policy",
                "uniform",
                "--out",
                str(out),
            ]
        )
        assert code == 0
        payload = json.loads(out.read_text())
        delays = payload["results"]["theory"]["delays"]
        assert delays[0] == pytest.approx(294.8, abs=0.15)

    def test_stdout_when_no_out(self, capsys):
        assert run_cli(["analyze", "--scenario", "example1"]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert "results" in payload


class TestSimulate:
    def simulate(self, tmp_path, name, extra=()):
        out = tmp_path / name
        code = run_cli(
            [
                "simulate",
                "--scenario",
                "example1",
                "--policy",
                "uniform",
                "--trials",
                "6",
                "--seed",
                "7",
                "--out",
                str(out),
                *extra,
            ]
        )
        assert code == 0
        return out.read_bytes()

    def test_repeat_identical_csv_bytes(self, tmp_path):
        a = self.simulate(tmp_path, "a.csv")
        b = self.simulate(tmp_path, "b.csv")
        assert a == b

    def test_worker_count_invariance(self, tmp_path):
        a = self.simulate(tmp_path, "w1.csv", ("--workers", "1"))
        b = self.simulate(tmp_path, "w3.csv", ("--workers", "3"))
        assert a == b

    def test_manifest_sidecar(self, tmp_path):
        self.simulate(tmp_path, "run.csv")
        sidecar = json.loads((tmp_path / "run.csv.manifest.json").read_text())
        assert sidecar["manifest"]["seed"] == 7
        assert "report" in sidecar

    def test_json_output(self, tmp_path):
        out = tmp_path / "run.json"
        code = run_cli(
            [
                "simulate",
                "--scenario",
                "example4",
                "--policy",
                "adaptive",
                "--trials",
                "5",
                "--seed",
                "1",
                "--out",
                str(out),
            ]
        )
        assert code == 0
        payload = json.loads(out.read_text())
        assert payload["report"]["trials"] == 5

    def test_topology_with_vehicles_rejected(self, tmp_path):
        code = run_cli(
            [
                "simulate",
                "--scenario",
                "example3",
                "--policy",
                "efficient",
                "--vehicles",
                "3",
                "--topology",
                "ring",
                "--trials",
                "2",
                "--seed",
                "1",
                "--out",
                str(tmp_path / "x.csv"),
            ]
        )
        assert code == 2

    def test_time_budget_exceeded_exit_4(self, tmp_path):
        code = run_cli(
            [
                "simulate",
                "--scenario",
                "example1",
                "--policy",
                "uniform",
                "--trials",
                "50",
                "--seed",
                "2",
                "--time-budget",
                "1e-9",
                "--out",
                str(tmp_path / "x.csv"),
            ]
        )
        assert code == 4

    def test_optimal_policy_path(self, tmp_path):
        out = tmp_path / "opt.json"
        code = run_cli(
            [
                "simulate",
                "--scenario",
                "example1",
                "--policy",
                "optimal",
                "--trials",
                "5",
                "--seed",
                "4",
                "--out",
                str(out),
            ]
        )
        assert code == 0
        payload = json.loads(out.read_text())
        assert payload["diagnostics"]["optimal"]["converged"]

    def test_multi_vehicle_uniform_shared(self, tmp_path):
        out = tmp_path / "multi.csv"
        code = run_cli(
            [
                "simulate",
                "--scenario",
                "example3",
                "--policy",
                "uniform",
                "--vehicles",
                "3",
                "--trials",
                "4",
                "--seed",
                "5",
                "--out",
                str(out),
            ]
        )
        assert code == 0
        assert len(out.read_text().splitlines()) == 1 + 4 * 6

    def test_topology_edge_file(self, tmp_path):
        edges = tmp_path / "edges.json"
        edges.write_text(json.dumps({"edges": [[1, 2], [2, 3], [3, 4], [4, 1]]}))
        out = tmp_path / "topo.csv"
        code = run_cli(
            [
                "simulate",
                "--scenario",
                "example1",
                "--policy",
                "uniform",
                "--topology",
                str(edges),
                "--trials",
                "3",
                "--seed",
                "6",
                "--out",
                str(out),
            ]
        )
        assert code == 0

    def test_detection_log_export(self, tmp_path):
        out = tmp_path / "run.csv"
        log = tmp_path / "detections.csv"
        code = run_cli(
            [
                "simulate",
                "--scenario",
                "example1",
                "--policy",
                "uniform",
                "--trials",
                "4",
                "--seed",
                "9",
                "--detections",
                str(log),
                "--out",
                str(out),
            ]
        )
        assert code == 0
        lines = log.read_text().splitlines()
        assert lines[0] == (
            "trial,region,detection_time,appearance_time,delay,observations_used"
        )
        assert len(lines) == 1 + 4 * 4  # every region detected in each trial
        first = lines[1].split(",")
        assert float(first[2]) - float(first[3]) == pytest.approx(float(first[4]))

    def test_policy_file(self, tmp_path):
        policy_path = tmp_path / "policy.json"
        policy_path.write_text(json.dumps({"q": [0.85, 0.05, 0.05, 0.05]}))
        out = tmp_path / "run.csv"
        code = run_cli(
            [
                "simulate",
                "--scenario",
                "example1",
                "--policy",
                str(policy_path),
                "--trials",
                "3",
                "--seed",
                "3",
                "--out",
                str(out),
            ]
        )
        assert code == 0
        header = out.read_text().splitlines()[0]
        assert header == "trial,region,delay,observations,censored"


class TestScenarioCheck:
    def test_smoke_run(self, tmp_path):
        out = tmp_path / "check.json"
        code = run_cli(
            [
                "scenario-check",
                "--n1",
                "40",
                "--mu1",
                "0.2",
                "--nu1",
                "0.01",
                "--seed",
                "5",
                "--out",
                str(out),
            ]
        )
        assert code == 0
        payload = json.loads(out.read_text())
        assert payload["results"]["gamma_hat"] <= 1e-3
        assert payload["results"]["failures"] == 0

    def test_condition_violation_exit_2(self):
        assert (
            run_cli(
                ["scenario-check", "--n1", "10", "--mu1", "0.01", "--nu1", "1e-4",
                 "--seed", "1"]
            )
            == 2
        )

    def test_budget_exceeded_exit_4(self, tmp_path):
        code = run_cli(
            [
                "scenario-check",
                "--n1",
                "1000",
                "--mu1",
                "0.01",
                "--nu1",
                "1e-4",
                "--seed",
                "1",
                "--time-budget",
                "1e-9",
                "--out",
                str(tmp_path / "x.json"),
            ]
        )
        assert code == 4


class TestEntryPoint:
    def test_module_invocation(self):
        proc = subprocess.run(
            [sys.executable, "-m", "patrolkit.cli", "--version"],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0
        assert "patrolkit" in proc.stdout
