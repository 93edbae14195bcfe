import json

import pandas as pd
import pytest

import main
from grid.commands import EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION


@pytest.fixture(autouse=True)
def _no_ledger(monkeypatch):
    monkeypatch.delenv("GRID_STATS_PATH", raising=False)


def _run(capsys, *argv):
    code = main.main([str(a) for a in argv])
    return code, json.loads(capsys.readouterr().out)


def _write_config(path, machines, edges, Q, comm, **extra):
    n = len(machines)
    data = {
        "machines": [{"preset": "round_rotor", "p_d": p} for p in machines],
        "edges": [{"from": a, "to": b, "xt": 0.4} for a, b in edges],
        "controller": {"Q": Q, "T": [1.0] * n, "K": [2.0] * n, "comm": [{"a": a, "b": b} for a, b in comm]},
        **extra,
    }
    path.write_text(json.dumps(data))
    return path


def test_registry_resolves():
    assert main._validate_registry() == []


def test_validate_passes_on_ring(capsys, scenario_dir):
    code, payload = _run(capsys, "validate", scenario_dir / "three_machine_ring.json")
    assert code == EXIT_OK
    assert payload["status"] == "ok"
    assert payload["structural"]["passed"]


def test_validate_flags_slow_damper(capsys, scenario_dir, tmp_path):
    code, payload = _run(capsys, "validate", scenario_dir / "slow_damper_violation.json", "--out", tmp_path)
    assert code == EXIT_VALIDATION
    failed = [c["path"] for c in payload["structural"]["checks"] if not c["passed"]]
    assert "machines[1].d_axis" in failed
    assert json.loads((tmp_path / "validate.json").read_text())["status"] == "validation_failed"


def test_validate_reports_violations(capsys, tmp_path):
    path = _write_config(tmp_path / "bad.json", [0.1, 0.1], [(1, 2)], [1.0, 2.0], [])
    code, payload = _run(capsys, "validate", path)
    assert code == EXIT_VALIDATION
    assert payload["status"] == "validation_failed"
    assert [v["path"] for v in payload["violations"]] == ["controller.comm"]


def test_parse_error_exit_code(capsys, tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{\n  "machines": [,\n}\n')
    code, payload = _run(capsys, "dispatch", path)
    assert code == EXIT_VALIDATION
    assert ":2:" in payload["violations"][0]["path"]


def test_dispatch_example(capsys, tmp_path):
    path = _write_config(tmp_path / "pair.json", [1.0, 2.0], [(1, 2)], [1.0, 2.0], [(1, 2)])
    code, payload = _run(capsys, "dispatch", path)
    assert code == EXIT_OK
    assert payload["scenario"] == "pair"
    assert payload["lambda"] == pytest.approx(2.0)
    assert payload["p_m"] == pytest.approx([2.0, 1.0])
    assert payload["mismatch"] == pytest.approx(0.0, abs=1e-12)


def test_dispatch_single_machine(capsys, tmp_path):
    path = _write_config(tmp_path / "solo.json", [0.6], [], [[2.0]], [])
    code, payload = _run(capsys, "dispatch", path)
    assert code == EXIT_OK
    assert payload["p_m"] == pytest.approx([0.6])
    assert payload["lambda"] == pytest.approx(1.2)


def test_steady_state_two_machine(capsys, scenario_dir):
    code, payload = _run(capsys, "steady-state", scenario_dir / "two_machine.json")
    assert code == EXIT_OK
    assert payload["success"]
    assert payload["residual"] < 1e-10
    assert payload["hessian_min_eig"] > 0.0
    assert payload["delta_rel"][0] == 0.0


def test_steady_state_infeasible(capsys, tmp_path):
    path = _write_config(
        tmp_path / "heavy.json", [50.0, 50.0], [(1, 2)], [1.0, 2.0], [(1, 2)], newton={"max_iter": 20}
    )
    code, payload = _run(capsys, "steady-state", path)
    assert code == EXIT_RUNTIME
    assert not payload["success"]
    assert payload["message"]


def test_simulate_writes_csv_and_report(capsys, scenario_dir, tmp_path):
    config = scenario_dir / "two_machine.json"
    args = ("simulate", config, "--out", tmp_path, "--method", "rk4", "--dt", "1e-3", "--t-end", "1")
    code, payload = _run(capsys, *args)
    assert code == EXIT_OK
    csv_path = tmp_path / "trajectory.csv"
    assert payload["csv"] == str(csv_path)
    frame = pd.read_csv(csv_path)
    assert frame.shape == (101, 20)
    assert frame["t"].iloc[-1] == pytest.approx(1.0)

    report = json.loads((tmp_path / "report.json").read_text())
    assert report["command"] == "simulate"
    assert report["scenario"] == "two_machine"
    assert set(report) >= {"structural", "steady_state", "dispatch", "verification", "monitors"}

    first = csv_path.read_bytes()
    assert _run(capsys, *args)[0] == EXIT_OK
    assert csv_path.read_bytes() == first


def test_simulate_require_converged(capsys, scenario_dir, tmp_path):
    config = scenario_dir / "two_machine.json"
    args = ("simulate", config, "--out", tmp_path, "--method", "rk4", "--dt", "1e-2", "--t-end", "1")
    code, payload = _run(capsys, *args)
    assert code == EXIT_OK
    assert not payload["verification"]["passed"]

    code, _ = _run(capsys, *args, "--require-converged")
    assert code == EXIT_RUNTIME


def test_simulate_refuses_violating_machine(capsys, scenario_dir, tmp_path):
    code, payload = _run(capsys, "simulate", scenario_dir / "slow_damper_violation.json", "--out", tmp_path)
    assert code == EXIT_VALIDATION
    assert [v["path"] for v in payload["violations"]] == ["machines[1].d_axis"]
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["status"] == "validation_failed"
    assert not (tmp_path / "trajectory.csv").exists()


def test_simulate_bad_override(capsys, scenario_dir, tmp_path):
    code, payload = _run(capsys, "simulate", scenario_dir / "two_machine.json", "--out", tmp_path, "--dt", "-1")
    assert code == EXIT_VALIDATION
    assert payload["violations"][0]["path"] == "integrator.dt"


def test_basin_probe(capsys, scenario_dir, tmp_path):
    code, payload = _run(capsys, "basin", scenario_dir / "two_machine.json", "--magnitudes", "0.01", "--out", tmp_path)
    assert code == EXIT_OK
    assert payload["basin"][0]["magnitude"] == 0.01
    assert payload["basin"][0]["converged"]
    assert (tmp_path / "basin.json").exists()


def test_batch_reports_each_scenario(capsys, scenario_dir, tmp_path):
    broken = _write_config(tmp_path / "broken.json", [0.1, 0.1], [(1, 2)], [1.0, -2.0], [(1, 2)])
    out = tmp_path / "out"
    code, payload = _run(
        capsys,
        "batch",
        scenario_dir / "two_machine.json",
        broken,
        "--out",
        out,
        "--method",
        "rk4",
        "--dt",
        "1e-2",
        "--t-end",
        "0.5",
    )
    assert code == EXIT_VALIDATION
    rows = {row["scenario"]: row for row in payload["results"]}
    assert rows["broken"]["status"] == "validation_failed"
    assert rows["two_machine"]["status"] == "ok"
    assert (out / "two_machine" / "trajectory.csv").exists()


def test_batch_rejects_duplicate_names(capsys, scenario_dir, tmp_path):
    twin = tmp_path / "twin.json"
    twin.write_text((scenario_dir / "two_machine.json").read_text())
    out = tmp_path / "out"
    code, payload = _run(
        capsys,
        "batch",
        scenario_dir / "two_machine.json",
        twin,
        "--out",
        out,
        "--method",
        "rk4",
        "--dt",
        "1e-2",
        "--t-end",
        "0.5",
    )
    assert code == EXIT_VALIDATION
    rows = {row["scenario"]: row for row in payload["results"]}
    assert rows["two_machine"]["status"] == "ok"
    assert rows["twin"]["status"] == "validation_failed"
    assert [v["path"] for v in rows["twin"]["violations"]] == ["name"]
    assert "twin.json" in rows["twin"]["violations"][0]["message"]


def test_negative_seed_exits_with_validation(capsys, tmp_path):
    initial = {"mode": "equilibrium", "perturbation": 0.01, "seed": -1}
    path = _write_config(tmp_path / "seeded.json", [0.1, 0.1], [(1, 2)], [1.0, 2.0], [(1, 2)], initial=initial)
    code, payload = _run(capsys, "simulate", path, "--out", tmp_path, "--method", "rk4", "--t-end", "0.1")
    assert code == EXIT_VALIDATION
    assert [v["path"] for v in payload["violations"]] == ["initial.seed"]


def test_runs_are_recorded(capsys, monkeypatch, scenario_dir, tmp_path):
    ledger = tmp_path / "runs.json"
    monkeypatch.setenv("GRID_STATS_PATH", str(ledger))
    _run(capsys, "dispatch", scenario_dir / "three_machine_ring.json")
    _run(capsys, "validate", scenario_dir / "slow_damper_violation.json")
    runs = json.loads(ledger.read_text())["runs"]
    assert runs["three_machine_ring"]["latest"]["status"] == "ok"
    assert runs["slow_damper_violation"]["latest"]["status"] == "validation_failed"


def test_unknown_command_exits():
    with pytest.raises(SystemExit) as excinfo:
        main.main(["frobnicate"])
    assert excinfo.value.code == 2
