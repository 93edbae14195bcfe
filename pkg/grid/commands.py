"""Command implementations behind main.py.

Each command takes the parsed argparse namespace, writes its JSON result
to stdout, logs to stderr and returns the process exit code.
"""

from __future__ import annotations

import asyncio
import json
import time
import traceback
from pathlib import Path
from typing import Callable, List, Optional, Tuple

import numpy as np

from grid.controller import optimal_dispatch
from grid.network_model import reconstruct_angles
from grid.report import (
    RunReport,
    record_run_stats,
    scenario_report,
    structural_section,
    write_report,
    write_trajectory_csv,
)
from grid.scenario import ScenarioConfig, build, load_config, with_integrator
from grid.shared import (
    DimensionError,
    GridError,
    IntegrationError,
    ParameterError,
    ScenarioParseError,
    ScenarioValidationError,
    StructuralCheckError,
    TopologyError,
    Violation,
    debug,
    log,
)
from grid.simulation import (
    SimulationSetup,
    probe_basin,
    run_batch,
    run_scenario,
    solve_closed_loop_equilibrium,
)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2

VALIDATION_ERRORS = (
    ScenarioParseError,
    ScenarioValidationError,
    StructuralCheckError,
    TopologyError,
    ParameterError,
    DimensionError,
)

DEFAULT_BASIN_MAGNITUDES = (0.01, 0.05, 0.1, 0.2, 0.5)


def _emit(payload) -> None:
    print(json.dumps(payload, indent=2))


def _violation_payload(exc: Exception) -> dict:
    violations = getattr(exc, "violations", None)
    if violations:
        items = [{"path": v.path, "message": v.message} for v in violations]
    elif isinstance(exc, ScenarioParseError):
        items = [{"path": f"{exc.source}:{exc.line}:{exc.column}", "message": str(exc)}]
    else:
        items = [{"path": "<config>", "message": str(exc)}]
    return {"status": "validation_failed", "violations": items}


def _guarded(command: str, config_path: str, body: Callable[[], Tuple[int, Optional[str]]]) -> int:
    """START/END logs, exception to exit-code mapping and the run ledger."""
    scenario = Path(config_path).stem
    start = time.perf_counter()
    log(command, f"scenario={scenario} action=START")
    try:
        code, reason = body()
    except VALIDATION_ERRORS as exc:
        payload = _violation_payload(exc)
        for item in payload["violations"]:
            log(command, f"scenario={scenario} violation {item['path']}: {item['message']}")
        _emit(payload)
        code, reason = EXIT_VALIDATION, str(exc)
    except GridError as exc:
        _emit({"status": "runtime_failed", "error": str(exc)})
        code, reason = EXIT_RUNTIME, str(exc)
    except Exception as exc:
        debug(command, traceback.format_exc())
        _emit({"status": "runtime_failed", "error": f"{type(exc).__name__}: {exc}"})
        code, reason = EXIT_RUNTIME, f"{type(exc).__name__}: {exc}"

    runtime = time.perf_counter() - start
    status = {EXIT_OK: "ok", EXIT_VALIDATION: "validation_failed"}.get(code, "runtime_failed")
    log(command, f"scenario={scenario} action=END status={status} runtime={runtime:.2f}s")
    record_run_stats(command, scenario, runtime, status, reason)
    return code


# ---------------- validate ----------------


def cmd_validate(args) -> int:
    def body():
        config = load_config(args.config)
        setup = build(config)
        steady = solve_closed_loop_equilibrium(setup.loop, setup.p_d, config=setup.newton)
        structural = structural_section(setup, steady)
        status = "ok" if structural["passed"] else "validation_failed"
        report = RunReport(command="validate", scenario=config.name, status=status, structural=structural)
        if getattr(args, "out", None):
            write_report(Path(args.out) / "validate.json", report)
        _emit(report.to_dict())
        if structural["passed"]:
            return EXIT_OK, None
        failed = [c["path"] for c in structural["checks"] if not c["passed"]]
        return EXIT_VALIDATION, "structural checks failed: " + ", ".join(failed)

    return _guarded("validate", args.config, body)


# ---------------- dispatch ----------------


def cmd_dispatch(args) -> int:
    def body():
        config = load_config(args.config)
        solution = optimal_dispatch(np.array(config.controller.Q), config.p_d)
        _emit({"scenario": config.name, **solution.to_dict(config.p_d)})
        return EXIT_OK, None

    return _guarded("dispatch", args.config, body)


# ---------------- steady-state ----------------


def cmd_steady_state(args) -> int:
    def body():
        config = load_config(args.config)
        setup = build(config)
        guess = setup.initial.z if config.initial.mode == "explicit" else None
        result = solve_closed_loop_equilibrium(setup.loop, setup.p_d, z_guess=guess, config=setup.newton)
        payload = {"scenario": config.name, **result.to_dict()}
        layout = setup.loop.plant.layout
        payload["delta_rel"] = [float(v) for v in reconstruct_angles(setup.loop.plant.topology, result.x[layout.eta])]
        _emit(payload)
        if not result.success:
            for k, norm in enumerate(result.trace):
                log("steady-state", f"scenario={config.name} iter={k} residual={norm:.3e}")
            return EXIT_RUNTIME, result.message
        return EXIT_OK, None

    return _guarded("steady-state", args.config, body)


# ---------------- simulate ----------------


def _simulation_config(args) -> ScenarioConfig:
    config = load_config(args.config)
    return with_integrator(
        config,
        method=getattr(args, "method", None),
        dt=getattr(args, "dt", None),
        t_end=getattr(args, "t_end", None),
    )


def _simulate_to_disk(setup: SimulationSetup, out_dir: Path, csv_name: str, report_name: str) -> RunReport:
    """Run one scenario and write its CSV + JSON report; failures land in the report."""
    try:
        result = run_scenario(setup)
    except StructuralCheckError as exc:
        report = RunReport(
            command="simulate",
            scenario=setup.name,
            status="validation_failed",
            structural=structural_section(setup, None),
            failure={"message": str(exc), "t": None},
        )
        write_report(out_dir / report_name, report)
        raise
    except IntegrationError as exc:
        report = RunReport(
            command="simulate",
            scenario=setup.name,
            status="runtime_failed",
            failure={"message": str(exc), "t": exc.t},
        )
        write_report(out_dir / report_name, report)
        raise

    write_trajectory_csv(out_dir / csv_name, result.trajectory, setup.loop)
    report = scenario_report("simulate", result, setup)
    write_report(out_dir / report_name, report)
    return report


def cmd_simulate(args) -> int:
    def body():
        config = _simulation_config(args)
        setup = build(config)
        out_dir = Path(getattr(args, "out", None) or config.output.dir)
        report = _simulate_to_disk(setup, out_dir, config.output.csv, config.output.report)
        _emit(
            {
                "scenario": config.name,
                "csv": str(out_dir / config.output.csv),
                "report": str(out_dir / config.output.report),
                "verification": report.to_dict()["verification"],
            }
        )
        if getattr(args, "require_converged", False) and not report.verification["passed"]:
            return EXIT_RUNTIME, "endpoint failed steady-state verification"
        return EXIT_OK, None

    return _guarded("simulate", args.config, body)


# ---------------- basin ----------------


def cmd_basin(args) -> int:
    def body():
        config = load_config(args.config)
        setup = build(config)
        magnitudes = getattr(args, "magnitudes", None) or DEFAULT_BASIN_MAGNITUDES
        probes = probe_basin(setup, magnitudes, seed=config.initial.seed)
        report = RunReport(command="basin", scenario=config.name, basin=[p.to_dict() for p in probes])
        if getattr(args, "out", None):
            write_report(Path(args.out) / "basin.json", report)
        _emit(report.to_dict())
        return EXIT_OK, None

    return _guarded("basin", args.config, body)


# ---------------- batch ----------------


def cmd_batch(args) -> int:
    """Simulate several scenarios concurrently, each into <out>/<name>/."""
    out_root = Path(getattr(args, "out", None) or "out")
    rows: List[dict] = []
    setups: List[Tuple[SimulationSetup, ScenarioConfig]] = []
    code = EXIT_OK

    for path in args.configs:
        try:
            config = _simulation_config(_single_config_args(args, path))
            if any(seen.name == config.name for _, seen in setups):
                raise ScenarioValidationError([Violation("name", f"duplicate scenario name {config.name!r} ({path})")])
            setups.append((build(config), config))
        except VALIDATION_ERRORS as exc:
            payload = _violation_payload(exc)
            rows.append({"scenario": Path(path).stem, "status": "validation_failed", "violations": payload["violations"]})
            code = EXIT_VALIDATION

    by_name = {setup.name: config for setup, config in setups}

    def runner(setup: SimulationSetup) -> RunReport:
        config = by_name[setup.name]
        return _simulate_to_disk(setup, out_root / setup.name, config.output.csv, config.output.report)

    outcomes = asyncio.run(run_batch([s for s, _ in setups], runner=runner))
    for outcome in outcomes:
        row = {"scenario": outcome.name, "status": outcome.status, "runtime": round(outcome.runtime_seconds, 3)}
        if outcome.error:
            row["error"] = outcome.error
            if code == EXIT_OK:
                code = EXIT_RUNTIME
        else:
            row["converged"] = outcome.result.verification["passed"]
        record_run_stats("batch", outcome.name, outcome.runtime_seconds, outcome.status, outcome.error)
        rows.append(row)

    _emit({"results": rows})
    return code


def _single_config_args(args, config_path: str):
    """Copy of the batch namespace pointing at a single config."""
    values = dict(vars(args))
    values["config"] = config_path
    return type(args)(**values)
