"""Scenario files: JSON in, validated immutable config out, runnable setup built from it.

Every problem in a file is collected as a `Violation` naming the offending
machine, edge or field before anything is raised.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from grid.controller import assemble_closed_loop, build_controller, check_cost_matrix
from grid.dynamics import build_plant
from grid.energy import MachineParams, stack_machines
from grid.machine_presets import MACHINE_FIELDS, expand_machine
from grid.network_model import (
    CommEdge,
    EdgeSpec,
    angles_to_edges,
    build_comm_laplacian,
    build_topology,
    is_connected,
)
from grid.shared import (
    GridError,
    ScenarioParseError,
    ScenarioValidationError,
    Violation,
)
from grid.simulation import (
    InitialCondition,
    IntegratorConfig,
    NewtonConfig,
    SimulationSetup,
    flat_start,
)

INITIAL_MODES = ("flat", "equilibrium", "explicit")
OVERRIDE_FIELDS = ("omega", "delta", "eqp", "edp", "eqpp", "edpp", "vartheta")
TOP_LEVEL_KEYS = {"name", "machines", "edges", "controller", "integrator", "newton", "initial", "output"}


# ---------------- CONFIG TYPES ----------------


@dataclass(frozen=True)
class MachineSpec:
    params: MachineParams
    p_d: float  # constant demand at this node


@dataclass(frozen=True)
class ControllerSpec:
    Q: Tuple[Tuple[float, ...], ...]
    T: Tuple[float, ...]
    K: Tuple[float, ...]
    comm: Tuple[CommEdge, ...]


@dataclass(frozen=True)
class InitialSpec:
    mode: str = "flat"
    perturbation: float = 0.0
    seed: int = 0
    overrides: Tuple[Tuple[str, Tuple[float, ...]], ...] = ()


@dataclass(frozen=True)
class OutputSpec:
    dir: str = "out"
    csv: str = "trajectory.csv"
    report: str = "report.json"


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    machines: Tuple[MachineSpec, ...]
    edges: Tuple[EdgeSpec, ...]
    controller: ControllerSpec
    integrator: IntegratorConfig = IntegratorConfig()
    newton: NewtonConfig = NewtonConfig()
    initial: InitialSpec = InitialSpec()
    output: OutputSpec = field(default_factory=OutputSpec)

    @property
    def n(self) -> int:
        return len(self.machines)

    @property
    def p_d(self) -> np.ndarray:
        return np.array([m.p_d for m in self.machines], dtype=float)


# ---------------- PARSING HELPERS ----------------


class _Collector:
    def __init__(self) -> None:
        self.violations: List[Violation] = []

    def add(self, path: str, message: str) -> None:
        self.violations.append(Violation(path, message))

    def number(self, obj: Dict[str, Any], key: str, path: str, default: Any = None, required: bool = True):
        if key not in obj:
            if required and default is None:
                self.add(f"{path}.{key}", "missing")
            return default
        value = obj[key]
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.add(f"{path}.{key}", f"must be a number, got {value!r}")
            return default
        if not np.isfinite(value):
            self.add(f"{path}.{key}", "must be finite")
            return default
        return float(value)

    def integer(self, obj: Dict[str, Any], key: str, path: str, default: Optional[int] = None):
        if key not in obj:
            if default is None:
                self.add(f"{path}.{key}", "missing")
            return default
        value = obj[key]
        if isinstance(value, bool) or not isinstance(value, int):
            self.add(f"{path}.{key}", f"must be an integer, got {value!r}")
            return default
        return value

    def vector(self, value: Any, n: int, path: str) -> Optional[Tuple[float, ...]]:
        if not isinstance(value, list) or len(value) != n:
            self.add(path, f"must be a list of {n} numbers")
            return None
        out = []
        for idx, item in enumerate(value):
            if isinstance(item, bool) or not isinstance(item, (int, float)) or not np.isfinite(item):
                self.add(f"{path}[{idx}]", f"must be a finite number, got {item!r}")
                return None
            out.append(float(item))
        return tuple(out)

    def unknown_keys(self, obj: Dict[str, Any], allowed, path: str) -> None:
        for key in sorted(set(obj) - set(allowed)):
            self.add(f"{path}.{key}" if path else key, "unknown field")


def _parse_machines(raw: Any, c: _Collector) -> List[MachineSpec]:
    if not isinstance(raw, list) or not raw:
        c.add("machines", "must be a non-empty list")
        return []
    specs: List[MachineSpec] = []
    for idx, entry in enumerate(raw):
        path = f"machines[{idx}]"
        if not isinstance(entry, dict):
            c.add(path, "must be an object")
            continue
        try:
            merged = expand_machine(entry)
        except GridError as exc:
            c.add(f"{path}.preset", str(exc))
            continue
        c.unknown_keys(merged, MACHINE_FIELDS + ("p_d",), path)
        before = len(c.violations)
        values = {name: c.number(merged, name, path) for name in MACHINE_FIELDS}
        p_d = c.number(merged, "p_d", path, default=0.0, required=False)
        if len(c.violations) != before:
            continue
        params = MachineParams(**values)
        for v in params.violations(path):
            c.violations.append(v)
        specs.append(MachineSpec(params=params, p_d=p_d))
    return specs


def _parse_edges(raw: Any, n: int, c: _Collector, path: str, kind: str) -> list:
    """kind 'grid' -> EdgeSpec(from, to, xt); kind 'comm' -> CommEdge(a, b, weight)."""
    if not isinstance(raw, list):
        c.add(path, "must be a list")
        return []
    keys = ("from", "to", "xt") if kind == "grid" else ("a", "b", "weight")
    out = []
    for idx, entry in enumerate(raw):
        epath = f"{path}[{idx}]"
        if not isinstance(entry, dict):
            c.add(epath, "must be an object")
            continue
        c.unknown_keys(entry, keys, epath)
        a = c.integer(entry, keys[0], epath)
        b = c.integer(entry, keys[1], epath)
        third = c.number(entry, keys[2], epath, default=0.0 if kind == "grid" else 1.0, required=False)
        if a is None or b is None or third is None:
            continue
        ok = True
        for key, node in ((keys[0], a), (keys[1], b)):
            if not 1 <= node <= n:
                c.add(f"{epath}.{key}", f"node index out of range 1..{n}: {node}")
                ok = False
        if ok and a == b:
            c.add(f"{epath}.{keys[1]}", f"self-loop at node {a}")
            ok = False
        if kind == "grid" and third < 0:
            c.add(f"{epath}.xt", f"nonpositive reactance {third}")
            ok = False
        if kind == "comm" and not third > 0:
            c.add(f"{epath}.weight", f"must be > 0, got {third}")
            ok = False
        if ok:
            out.append(EdgeSpec(a, b, third) if kind == "grid" else CommEdge(a, b, third))
    return out


def _parse_controller(raw: Any, n: int, c: _Collector) -> Optional[ControllerSpec]:
    if not isinstance(raw, dict):
        c.add("controller", "must be an object")
        return None
    c.unknown_keys(raw, ("Q", "T", "K", "comm"), "controller")
    before = len(c.violations)

    Q = None
    q_raw = raw.get("Q")
    if isinstance(q_raw, list) and q_raw and all(isinstance(r, list) for r in q_raw):
        rows = [c.vector(r, n, f"controller.Q[{i}]") for i, r in enumerate(q_raw)]
        if len(rows) != n:
            c.add("controller.Q", f"must be {n}x{n}, got {len(rows)} rows")
        elif all(r is not None for r in rows):
            Q = tuple(rows)
    elif q_raw is not None:
        diag = c.vector(q_raw, n, "controller.Q")
        if diag is not None:
            Q = tuple(tuple(diag[i] if i == j else 0.0 for j in range(n)) for i in range(n))
    else:
        c.add("controller.Q", "missing")
    if Q is not None:
        try:
            check_cost_matrix(np.array(Q), n)
        except GridError as exc:
            c.add("controller.Q", str(exc).split(": ", 1)[-1])

    gains = {}
    for name in ("T", "K"):
        if name not in raw:
            c.add(f"controller.{name}", "missing")
            continue
        vec = c.vector(raw[name], n, f"controller.{name}")
        if vec is None:
            continue
        for idx, value in enumerate(vec):
            if not value > 0:
                c.add(f"controller.{name}[{idx}]", f"must be > 0, got {value}")
        gains[name] = vec

    comm = _parse_edges(raw.get("comm"), n, c, "controller.comm", "comm")
    if len(c.violations) == before and not is_connected(n, [(e.a, e.b) for e in comm]):
        c.add("controller.comm", "communication graph is not connected")

    if len(c.violations) != before:
        return None
    return ControllerSpec(Q=Q, T=gains["T"], K=gains["K"], comm=tuple(comm))


def _parse_initial(raw: Any, n: int, c: _Collector) -> InitialSpec:
    if raw is None:
        return InitialSpec()
    if not isinstance(raw, dict):
        c.add("initial", "must be an object")
        return InitialSpec()
    c.unknown_keys(raw, ("mode", "perturbation", "seed") + OVERRIDE_FIELDS, "initial")
    mode = raw.get("mode", "flat")
    if mode not in INITIAL_MODES:
        c.add("initial.mode", f"must be one of {INITIAL_MODES}, got {mode!r}")
        mode = "flat"
    perturbation = c.number(raw, "perturbation", "initial", default=0.0, required=False)
    if perturbation is not None and perturbation < 0:
        c.add("initial.perturbation", f"must be >= 0, got {perturbation}")
    seed = c.integer(raw, "seed", "initial", default=0)
    if seed is not None and seed < 0:
        c.add("initial.seed", f"must be >= 0, got {seed}")
    overrides = []
    for key in OVERRIDE_FIELDS:
        if key in raw:
            if mode != "explicit":
                c.add(f"initial.{key}", "state overrides need mode 'explicit'")
                continue
            vec = c.vector(raw[key], n, f"initial.{key}")
            if vec is not None:
                overrides.append((key, vec))
    return InitialSpec(mode=mode, perturbation=perturbation or 0.0, seed=seed or 0, overrides=tuple(overrides))


def _parse_section(raw: Any, cls, path: str, c: _Collector):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        c.add(path, "must be an object")
        return cls()
    names = [f.name for f in fields(cls)]
    c.unknown_keys(raw, names, path)
    defaults = cls()
    values = {}
    for f in fields(cls):
        if f.name not in raw:
            continue
        default = getattr(defaults, f.name)
        if isinstance(default, str):
            if not isinstance(raw[f.name], str):
                c.add(f"{path}.{f.name}", f"must be a string, got {raw[f.name]!r}")
                continue
            values[f.name] = raw[f.name]
        elif isinstance(default, int) and not isinstance(default, bool):
            value = c.integer(raw, f.name, path, default=default)
            values[f.name] = value
        else:
            values[f.name] = c.number(raw, f.name, path, default=default)
    return cls(**values)


# ---------------- LOAD / DUMP ----------------


def parse_config(data: Any, source: str = "<config>") -> ScenarioConfig:
    c = _Collector()
    if not isinstance(data, dict):
        raise ScenarioValidationError([Violation("<root>", "scenario must be a JSON object")])
    c.unknown_keys(data, TOP_LEVEL_KEYS, "")

    name = data.get("name", Path(source).stem)
    if not isinstance(name, str) or not name:
        c.add("name", "must be a non-empty string")
        name = Path(source).stem

    machines = _parse_machines(data.get("machines"), c)
    raw_machines = data.get("machines")
    n = len(raw_machines) if isinstance(raw_machines, list) else 0

    edges: List[EdgeSpec] = []
    controller = None
    initial = InitialSpec()
    if n:
        edges = _parse_edges(data.get("edges", []), n, c, "edges", "grid")
        edge_count = len(data.get("edges", [])) if isinstance(data.get("edges", []), list) else 0
        if len(edges) == edge_count and not is_connected(n, [(e.positive_end, e.negative_end) for e in edges]):
            c.add("edges", "electrical network is not connected")
        controller = _parse_controller(data.get("controller"), n, c)
        initial = _parse_initial(data.get("initial"), n, c)

    integrator = _parse_section(data.get("integrator"), IntegratorConfig, "integrator", c)
    c.violations.extend(integrator.violations())
    newton = _parse_section(data.get("newton"), NewtonConfig, "newton", c)
    c.violations.extend(newton.violations())
    output = _parse_section(data.get("output"), OutputSpec, "output", c)

    if c.violations:
        raise ScenarioValidationError(c.violations)
    return ScenarioConfig(
        name=name,
        machines=tuple(machines),
        edges=tuple(edges),
        controller=controller,
        integrator=integrator,
        newton=newton,
        initial=initial,
        output=output,
    )


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ScenarioParseError(str(path), 0, 0, f"cannot read file: {exc.strerror or exc}") from exc
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        head = raw[: exc.start]
        line = head.count(b"\n") + 1
        column = exc.start - (head.rfind(b"\n") + 1) + 1
        raise ScenarioParseError(str(path), line, column, f"invalid UTF-8 at byte {exc.start}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(str(path), exc.lineno, exc.colno, exc.msg) from exc
    return parse_config(data, str(path))


def config_to_dict(config: ScenarioConfig) -> Dict[str, Any]:
    """Inverse of parse_config: presets are written out field by field."""
    return {
        "name": config.name,
        "machines": [{**asdict(m.params), "p_d": m.p_d} for m in config.machines],
        "edges": [{"from": e.positive_end, "to": e.negative_end, "xt": e.xt} for e in config.edges],
        "controller": {
            "Q": [list(row) for row in config.controller.Q],
            "T": list(config.controller.T),
            "K": list(config.controller.K),
            "comm": [{"a": e.a, "b": e.b, "weight": e.weight} for e in config.controller.comm],
        },
        "integrator": asdict(config.integrator),
        "newton": asdict(config.newton),
        "initial": {
            "mode": config.initial.mode,
            "perturbation": config.initial.perturbation,
            "seed": config.initial.seed,
            **{key: list(vec) for key, vec in config.initial.overrides},
        },
        "output": asdict(config.output),
    }


def dump_config(config: ScenarioConfig, path) -> None:
    Path(path).write_text(json.dumps(config_to_dict(config), indent=2) + "\n")


def with_integrator(config: ScenarioConfig, **changes: Any) -> ScenarioConfig:
    """Copy of `config` with integrator fields replaced (CLI flags)."""
    values = {k: v for k, v in changes.items() if v is not None}
    if not values:
        return config
    integrator = replace(config.integrator, **values)
    problems = integrator.violations()
    if problems:
        raise ScenarioValidationError(problems)
    return replace(config, integrator=integrator)


# ---------------- BUILD ----------------


def build(config: ScenarioConfig) -> SimulationSetup:
    machines = stack_machines([m.params for m in config.machines])
    topology = build_topology(config.n, config.edges, machines.xdpp)
    plant = build_plant(topology, machines)
    comm = build_comm_laplacian(config.n, config.controller.comm)
    controller = build_controller(
        np.array(config.controller.Q), config.controller.T, config.controller.K, comm
    )
    loop = assemble_closed_loop(plant, controller)
    p_d = config.p_d

    init = config.initial
    if init.mode == "equilibrium":
        initial = InitialCondition(mode="equilibrium", perturbation=init.perturbation, seed=init.seed)
    else:
        x0 = flat_start(plant, p_d, controller)
        vartheta = np.zeros(config.n)
        layout = plant.layout
        for key, vec in init.overrides:
            vec = np.array(vec)
            if key == "omega":
                x0[layout.p] = machines.m * vec
            elif key == "delta":
                x0[layout.eta] = angles_to_edges(topology, vec)
            elif key == "vartheta":
                vartheta = vec
            else:
                x0[getattr(layout, key)] = vec
        initial = InitialCondition(mode="state", z=loop.join(x0, vartheta))

    return SimulationSetup(
        name=config.name,
        loop=loop,
        p_d=p_d,
        integrator=config.integrator,
        initial=initial,
        newton=config.newton,
    )


def load_setup(path) -> Tuple[ScenarioConfig, SimulationSetup]:
    config = load_config(path)
    return config, build(config)
