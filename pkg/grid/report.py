"""Run reports, trajectory CSV files and the optional JSON run ledger."""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from grid.controller import ClosedLoopModel
from grid.dynamics import check_subtransient_condition
from grid.network_model import is_connected
from grid.shared import PSD_TOL, log, min_eigenvalue
from grid.simulation import ScenarioResult, SimulationSetup, SteadyStateResult, Trajectory

HISTORY_LIMIT = 100


# ---------------- REPORT ----------------


@dataclass
class RunReport:
    command: str
    scenario: str
    status: str = "ok"
    structural: Optional[Dict[str, Any]] = None
    steady_state: Optional[Dict[str, Any]] = None
    dispatch: Optional[Dict[str, Any]] = None
    verification: Optional[Dict[str, Any]] = None
    monitors: Optional[Dict[str, Any]] = None
    basin: Optional[List[Dict[str, Any]]] = None
    failure: Optional[Dict[str, Any]] = None

    def to_dict(self) -> Dict[str, Any]:
        """Fixed key order; NaN and inf become null."""
        return _clean(
            {
                "command": self.command,
                "scenario": self.scenario,
                "status": self.status,
                "structural": self.structural,
                "steady_state": self.steady_state,
                "dispatch": self.dispatch,
                "verification": self.verification,
                "monitors": self.monitors,
                "basin": self.basin,
                "failure": self.failure,
            }
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _clean(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        return value if math.isfinite(value) else None
    return obj


def structural_section(setup: SimulationSetup, steady: Optional[SteadyStateResult]) -> Dict[str, Any]:
    """Pass/fail for every structural condition; `passed` is their conjunction."""
    loop: ClosedLoopModel = setup.loop
    plant, controller = loop.plant, loop.controller
    checks: List[Dict[str, Any]] = []

    sub = check_subtransient_condition(plant.machines)
    for idx in range(plant.n):
        for axis, margin in (("d", sub.d_margin[idx]), ("q", sub.q_margin[idx])):
            checks.append(
                {
                    "name": "subtransient_dissipation",
                    "path": f"machines[{idx}].{axis}_axis",
                    "passed": bool(margin > 0),
                    "value": float(margin),
                }
            )

    r_min = plant.dissipation_min_eigenvalue()
    q_min = min_eigenvalue(controller.Q)
    lam2 = controller.comm.algebraic_connectivity
    checks.append({"name": "dissipation_psd", "path": "machines", "passed": bool(r_min >= -PSD_TOL), "value": r_min})
    wired = is_connected(plant.n, [(e.positive_end, e.negative_end) for e in plant.topology.edges])
    checks.append({"name": "electrical_connected", "path": "edges", "passed": wired, "value": float(plant.topology.m)})
    checks.append({"name": "comm_connected", "path": "controller.comm", "passed": bool(plant.n == 1 or lam2 > 0), "value": lam2})
    checks.append({"name": "cost_positive_definite", "path": "controller.Q", "passed": bool(q_min > 0), "value": q_min})
    if steady is not None:
        checks.append({"name": "steady_state_found", "path": "steady_state", "passed": steady.success, "value": steady.residual})
        checks.append(
            {
                "name": "hessian_positive",
                "path": "steady_state",
                "passed": steady.hessian_positive,
                "value": steady.hessian_min_eig,
            }
        )

    return {"passed": all(c["passed"] for c in checks), "checks": checks}


def scenario_report(command: str, result: ScenarioResult, setup: SimulationSetup) -> RunReport:
    return RunReport(
        command=command,
        scenario=result.name,
        status="ok",
        structural=structural_section(setup, result.steady_state),
        steady_state=result.steady_state.to_dict(),
        dispatch=result.dispatch.to_dict(setup.p_d),
        verification=result.verification.to_dict(),
        monitors=result.summary.to_dict(),
    )


# ---------------- FILES ----------------


def trajectory_frame(traj: Trajectory, loop: ClosedLoopModel) -> pd.DataFrame:
    """t, then per machine omega, delta_rel, Eqp, Edp, Eqpp, Edpp, Pm, Pe, then H, H_shifted, sumPe."""
    layout = loop.plant.layout
    mon = traj.monitors
    columns: Dict[str, np.ndarray] = {"t": traj.t}
    blocks = {
        "Eqp": traj.x[:, layout.eqp],
        "Edp": traj.x[:, layout.edp],
        "Eqpp": traj.x[:, layout.eqpp],
        "Edpp": traj.x[:, layout.edpp],
    }
    for i in range(layout.n):
        k = i + 1
        columns[f"omega_{k}"] = mon["omega"][:, i]
        columns[f"delta_{k}_rel"] = mon["delta_rel"][:, i]
        for name, block in blocks.items():
            columns[f"{name}_{k}"] = block[:, i]
        columns[f"Pm_{k}"] = mon["Pm"][:, i]
        columns[f"Pe_{k}"] = mon["Pe"][:, i]
    columns["H"] = mon["H"]
    columns["H_shifted"] = mon["H_shifted"]
    columns["sumPe"] = mon["sumPe"]
    return pd.DataFrame(columns)


def write_trajectory_csv(path, traj: Trajectory, loop: ClosedLoopModel) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    trajectory_frame(traj, loop).to_csv(path, index=False, float_format="%.17g", na_rep="nan")
    return path


def write_report(path, report: RunReport) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report.to_json() + "\n")
    return path


# ---------------- RUN LEDGER ----------------


def _stats_path() -> Optional[str]:
    return os.getenv("GRID_STATS_PATH") or None


def load_run_stats() -> Dict[str, Any]:
    path = _stats_path()
    if not path:
        return {}
    try:
        if os.path.exists(path):
            with open(path, "r") as f:
                data = json.load(f)
                if isinstance(data, dict):
                    return data
    except Exception as e:
        log("record_run_stats", f"failed to read stats file: {e}")
    return {}


def _save_run_stats(path: str, data: Dict[str, Any]) -> None:
    try:
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        tmp_path = f"{path}.tmp"
        with open(tmp_path, "w") as f:
            json.dump(data, f)
        os.replace(tmp_path, path)
    except Exception as e:
        log("record_run_stats", f"failed to write stats file: {e}")


def record_run_stats(
    command: str,
    scenario: str,
    runtime_seconds: float,
    status: str,
    failure_reason: Optional[str] = None,
) -> Optional[Dict[str, Any]]:
    """Append one run to the ledger at GRID_STATS_PATH (no-op when unset)."""
    path = _stats_path()
    if not path:
        return None

    finished = datetime.now(timezone.utc)
    entry = {
        "command": str(command),
        "scenario": str(scenario),
        "runtime": float(runtime_seconds),
        "status": str(status),
        "finished_at": finished.isoformat(),
        "failure_reason": failure_reason,
    }

    data = load_run_stats()
    runs = data.setdefault("runs", {})
    prev = runs.get(scenario) or {}
    history = [h for h in prev.get("history", []) if isinstance(h, dict)] if isinstance(prev, dict) else []
    history.append(entry)
    if len(history) > HISTORY_LIMIT:
        history = history[-HISTORY_LIMIT:]

    runs[scenario] = {"latest": entry, "history": history}
    _save_run_stats(path, data)
    return data
