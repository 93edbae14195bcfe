import json
from dataclasses import replace

import numpy as np
import pandas as pd
import pytest

from grid.report import (
    HISTORY_LIMIT,
    RunReport,
    load_run_stats,
    record_run_stats,
    scenario_report,
    structural_section,
    trajectory_frame,
    write_report,
    write_trajectory_csv,
)
from grid.scenario import build, load_config, load_setup, with_integrator
from grid.simulation import run_scenario


@pytest.fixture
def short_run(scenario_dir):
    config = with_integrator(load_config(scenario_dir / "two_machine.json"), method="rk4", dt=0.01, t_end=0.5)
    setup = build(config)
    return setup, run_scenario(setup)


def test_report_nan_becomes_null():
    report = RunReport(
        command="steady-state",
        scenario="x",
        steady_state={"residual": float("nan"), "trace": [1.0, np.inf]},
        monitors={"flag": np.bool_(True), "count": np.int64(3)},
    )
    payload = json.loads(report.to_json())
    assert payload["steady_state"]["residual"] is None
    assert payload["steady_state"]["trace"] == [1.0, None]
    assert payload["monitors"] == {"flag": True, "count": 3}
    assert list(payload)[:3] == ["command", "scenario", "status"]


def test_trajectory_frame_columns(short_run):
    setup, result = short_run
    frame = trajectory_frame(result.trajectory, setup.loop)
    assert frame.shape == (len(result.trajectory), 1 + 8 * 2 + 3)
    assert list(frame.columns[:9]) == [
        "t",
        "omega_1",
        "delta_1_rel",
        "Eqp_1",
        "Edp_1",
        "Eqpp_1",
        "Edpp_1",
        "Pm_1",
        "Pe_1",
    ]
    assert list(frame.columns[-3:]) == ["H", "H_shifted", "sumPe"]
    np.testing.assert_array_equal(frame["delta_1_rel"], 0.0)
    assert np.all(np.abs(frame["sumPe"]) < 1e-9)


def test_csv_matches_frame(short_run, tmp_path):
    setup, result = short_run
    path = write_trajectory_csv(tmp_path / "nested" / "traj.csv", result.trajectory, setup.loop)
    loaded = pd.read_csv(path, float_precision="round_trip")
    expected = trajectory_frame(result.trajectory, setup.loop)
    assert list(loaded.columns) == list(expected.columns)
    np.testing.assert_array_equal(loaded.to_numpy(), expected.to_numpy())


def test_scenario_report_sections(short_run, tmp_path):
    setup, result = short_run
    report = scenario_report("simulate", result, setup)
    path = write_report(tmp_path / "report.json", report)
    payload = json.loads(path.read_text())
    assert payload["structural"]["passed"]
    assert payload["dispatch"]["lambda"] == pytest.approx(0.2 / 1.5)
    assert set(payload["monitors"]) >= {"max_abs_sum_pe", "max_shifted_uptick", "endpoint_drift"}
    assert payload["failure"] is None


def test_structural_section_flags_slow_damper(scenario_dir):
    _, setup = load_setup(scenario_dir / "slow_damper_violation.json")
    section = structural_section(setup, None)
    assert not section["passed"]
    failed = {c["path"] for c in section["checks"] if not c["passed"]}
    assert failed == {"machines[1].d_axis", "machines"}
    psd = next(c for c in section["checks"] if c["name"] == "dissipation_psd")
    assert psd["value"] == pytest.approx(-0.0346, abs=5e-4)


def test_structural_section_checks_electrical_connectivity(scenario_dir):
    _, setup = load_setup(scenario_dir / "three_machine_ring.json")
    wired = next(c for c in structural_section(setup, None)["checks"] if c["name"] == "electrical_connected")
    assert wired["passed"]
    assert wired["value"] == 3.0

    plant = setup.loop.plant
    cut = replace(plant, topology=replace(plant.topology, edges=plant.topology.edges[:1]))
    section = structural_section(replace(setup, loop=replace(setup.loop, plant=cut)), None)
    assert not section["passed"]
    failed = [c["name"] for c in section["checks"] if not c["passed"]]
    assert failed == ["electrical_connected"]


def test_ledger_disabled_without_path(monkeypatch):
    monkeypatch.delenv("GRID_STATS_PATH", raising=False)
    assert record_run_stats("simulate", "ring", 1.0, "ok") is None
    assert load_run_stats() == {}


def test_ledger_history_is_capped(monkeypatch, tmp_path):
    path = tmp_path / "stats" / "runs.json"
    monkeypatch.setenv("GRID_STATS_PATH", str(path))
    for k in range(HISTORY_LIMIT + 5):
        record_run_stats("simulate", "ring", float(k), "ok")
    record_run_stats("validate", "other", 0.5, "validation_failed", "machines[1].d_axis")

    data = json.loads(path.read_text())
    ring = data["runs"]["ring"]
    assert len(ring["history"]) == HISTORY_LIMIT
    assert ring["history"][0]["runtime"] == 5.0
    assert ring["latest"]["runtime"] == float(HISTORY_LIMIT + 4)
    assert data["runs"]["other"]["latest"]["failure_reason"] == "machines[1].d_axis"


def test_ledger_survives_corrupt_file(monkeypatch, tmp_path):
    path = tmp_path / "runs.json"
    path.write_text("{not json")
    monkeypatch.setenv("GRID_STATS_PATH", str(path))
    data = record_run_stats("dispatch", "ring", 0.1, "ok")
    assert list(data["runs"]) == ["ring"]
    assert json.loads(path.read_text())["runs"]["ring"]["latest"]["command"] == "dispatch"
