import sys
from pathlib import Path

import numpy as np
import pytest

# Ensure repository root is on sys.path for direct module imports
ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from grid.dynamics import build_plant  # noqa: E402
from grid.energy import MachineParams, layout_for, stack_machines  # noqa: E402
from grid.machine_presets import preset_params  # noqa: E402
from grid.network_model import EdgeSpec, build_topology  # noqa: E402

SCENARIOS = ROOT / "scenarios"


def random_machine(rng: np.random.Generator) -> MachineParams:
    """Round-rotor parameters that satisfy both dissipation conditions."""
    xpp = rng.uniform(0.15, 0.3)
    xdp = xpp + rng.uniform(0.03, 0.2)
    xqp = xpp + rng.uniform(0.1, 0.5)
    return MachineParams(
        m=rng.uniform(2.0, 8.0),
        xd=xdp + rng.uniform(0.8, 1.6),
        xdp=xdp,
        xdpp=xpp,
        xq=xqp + rng.uniform(0.5, 1.3),
        xqp=xqp,
        xqpp=xpp,
        tdp=rng.uniform(4.0, 10.0),
        tdpp=rng.uniform(0.02, 0.05),
        tqp=rng.uniform(0.5, 1.5),
        tqpp=rng.uniform(0.03, 0.06),
        ef=rng.uniform(1.0, 1.3),
    )


def random_edges(rng: np.random.Generator, n: int, extra: int = None):
    """Random spanning tree plus a few chords, no parallel edges."""
    edges = []
    pairs = set()
    for k in range(2, n + 1):
        parent = int(rng.integers(1, k))
        a, b = (parent, k) if rng.random() < 0.5 else (k, parent)
        edges.append(EdgeSpec(a, b, rng.uniform(0.1, 0.8)))
        pairs.add(frozenset((a, b)))
    extra = n // 2 if extra is None else extra
    for _ in range(extra):
        a, b = (int(v) for v in rng.choice(np.arange(1, n + 1), size=2, replace=False))
        if frozenset((a, b)) in pairs:
            continue
        pairs.add(frozenset((a, b)))
        edges.append(EdgeSpec(a, b, rng.uniform(0.1, 0.8)))
    return edges


def random_plant(rng: np.random.Generator, n: int):
    machines = stack_machines([random_machine(rng) for _ in range(n)])
    topology = build_topology(n, random_edges(rng, n), machines.xdpp)
    return build_plant(topology, machines)


def random_state(rng: np.random.Generator, topology) -> np.ndarray:
    """Random finite state with eta = D^T delta."""
    layout = layout_for(topology)
    n = topology.n
    x = np.empty(layout.size)
    x[layout.p] = rng.normal(0.0, 0.5, n)
    x[layout.eta] = topology.D.T @ rng.uniform(-np.pi, np.pi, n)
    x[layout.eqp] = rng.uniform(0.8, 1.4, n)
    x[layout.edp] = rng.uniform(-0.5, 0.5, n)
    x[layout.eqpp] = rng.uniform(0.8, 1.3, n)
    x[layout.edpp] = rng.uniform(-0.5, 0.5, n)
    return x


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def fixture_machine():
    """X_d=1.8, X_d'=0.3, X_d''=0.25, T_d'=8, T_d''=0.03 and the matching q-axis set."""
    return preset_params("round_rotor")


@pytest.fixture
def two_machine_plant(fixture_machine):
    """Two fixture machines on one line with B_12 = -0.5."""
    machines = stack_machines([fixture_machine, fixture_machine])
    topology = build_topology(2, [EdgeSpec(1, 2, 1.5)], machines.xdpp)
    return build_plant(topology, machines)


@pytest.fixture
def scenario_dir():
    return SCENARIOS
