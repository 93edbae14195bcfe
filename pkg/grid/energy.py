"""Stored energy of the network and its derivatives.

All energies carry units of power (they are scaled by the synchronous
frequency), so the Hamiltonian plugs directly into the port-Hamiltonian
dynamics. The state vector is ordered

    x = (p, eta, E_q', E_d', E_q'', E_d'')

with p the angular momenta (n), eta the edge angle differences (m) and the
four internal voltage vectors (n each).
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from grid.network_model import NetworkTopology
from grid.shared import FD_STEP, DimensionError, Violation, as_vector

ASSUMPTION_TOL = 1e-12


# ---------------- MACHINE PARAMETERS ----------------


@dataclass(frozen=True)
class MachineParams:
    m: float  # inertia M
    xd: float
    xdp: float
    xdpp: float
    xq: float
    xqp: float
    xqpp: float
    tdp: float
    tdpp: float
    tqp: float
    tqpp: float
    ef: float  # constant excitation E_f

    def violations(self, prefix: str = "machine") -> List[Violation]:
        out: List[Violation] = []
        if not self.m > 0:
            out.append(Violation(f"{prefix}.m", f"inertia must be > 0, got {self.m}"))
        if not (self.xd > self.xdp > self.xdpp > 0):
            field = "xd" if not self.xd > self.xdp else "xdp" if not self.xdp > self.xdpp else "xdpp"
            out.append(
                Violation(
                    f"{prefix}.{field}",
                    "reactance ordering X_d > X_d' > X_d'' > 0 violated "
                    f"({self.xd}, {self.xdp}, {self.xdpp})",
                )
            )
        if not (self.xq > self.xqp > self.xqpp > 0):
            field = "xq" if not self.xq > self.xqp else "xqp" if not self.xqp > self.xqpp else "xqpp"
            out.append(
                Violation(
                    f"{prefix}.{field}",
                    "reactance ordering X_q > X_q' > X_q'' > 0 violated "
                    f"({self.xq}, {self.xqp}, {self.xqpp})",
                )
            )
        if abs(self.xdpp - self.xqpp) > ASSUMPTION_TOL:
            out.append(
                Violation(
                    f"{prefix}.xqpp",
                    f"subtransient saliency not allowed: X_d''={self.xdpp} != X_q''={self.xqpp}",
                )
            )
        for name in ("tdp", "tdpp", "tqp", "tqpp"):
            value = getattr(self, name)
            if not value > 0:
                out.append(Violation(f"{prefix}.{name}", f"time constant must be > 0, got {value}"))
        for f in fields(self):
            if not np.isfinite(getattr(self, f.name)):
                out.append(Violation(f"{prefix}.{f.name}", "must be finite"))
        return out


@dataclass(frozen=True, eq=False)
class MachineArrays:
    """Per-machine parameters stacked into vectors (same field names as MachineParams)."""

    m: np.ndarray
    xd: np.ndarray
    xdp: np.ndarray
    xdpp: np.ndarray
    xq: np.ndarray
    xqp: np.ndarray
    xqpp: np.ndarray
    tdp: np.ndarray
    tdpp: np.ndarray
    tqp: np.ndarray
    tqpp: np.ndarray
    ef: np.ndarray

    @property
    def n(self) -> int:
        return int(self.m.shape[0])

    @property
    def xd_hat(self) -> np.ndarray:
        return self.xd - self.xdp

    @property
    def xdp_hat(self) -> np.ndarray:
        return self.xdp - self.xdpp

    @property
    def xq_hat(self) -> np.ndarray:
        return self.xq - self.xqp

    @property
    def xqp_hat(self) -> np.ndarray:
        return self.xqp - self.xqpp


def stack_machines(machines: Sequence[MachineParams]) -> MachineArrays:
    if not machines:
        raise DimensionError("machines: need at least one machine")
    columns = {
        f.name: np.array([getattr(mp, f.name) for mp in machines], dtype=float)
        for f in fields(MachineParams)
    }
    return MachineArrays(**columns)


# ---------------- STATE ----------------


@dataclass(frozen=True)
class StateLayout:
    n: int
    m: int

    @property
    def size(self) -> int:
        return 5 * self.n + self.m

    @property
    def p(self) -> slice:
        return slice(0, self.n)

    @property
    def eta(self) -> slice:
        return slice(self.n, self.n + self.m)

    @property
    def eqp(self) -> slice:
        base = self.n + self.m
        return slice(base, base + self.n)

    @property
    def edp(self) -> slice:
        base = 2 * self.n + self.m
        return slice(base, base + self.n)

    @property
    def eqpp(self) -> slice:
        base = 3 * self.n + self.m
        return slice(base, base + self.n)

    @property
    def edpp(self) -> slice:
        base = 4 * self.n + self.m
        return slice(base, base + self.n)

    @property
    def voltages(self) -> slice:
        """All four internal voltage blocks."""
        return slice(self.n + self.m, self.size)

    def check(self, x: np.ndarray, name: str = "x") -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.size,):
            raise DimensionError(f"{name}: expected shape ({self.size},), got {x.shape}")
        return x


@dataclass(frozen=True, eq=False)
class SystemState:
    p: np.ndarray
    eta: np.ndarray
    eqp: np.ndarray
    edp: np.ndarray
    eqpp: np.ndarray
    edpp: np.ndarray

    @classmethod
    def from_vector(cls, x: np.ndarray, layout: StateLayout) -> "SystemState":
        x = layout.check(x)
        return cls(
            p=x[layout.p],
            eta=x[layout.eta],
            eqp=x[layout.eqp],
            edp=x[layout.edp],
            eqpp=x[layout.eqpp],
            edpp=x[layout.edpp],
        )

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.p, self.eta, self.eqp, self.edp, self.eqpp, self.edpp])

    def omega(self, machines: MachineArrays) -> np.ndarray:
        return self.p / machines.m

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.to_vector())))


def layout_for(topology: NetworkTopology) -> StateLayout:
    return StateLayout(topology.n, topology.m)


# ---------------- ENERGY TERMS ----------------


@dataclass(frozen=True, eq=False)
class EnergyBreakdown:
    h_ed: np.ndarray
    h_eq: np.ndarray
    h_m: np.ndarray
    h_line: np.ndarray
    h_p: float
    h_c: float = 0.0

    @property
    def total(self) -> float:
        return self.h_p + self.h_c


def machine_electrical_energy(params, eqp, edp, eqpp, edpp) -> Tuple[np.ndarray, np.ndarray]:
    """Energy in the first two d- and q-axis reactances of each machine.

    `params` may be a single MachineParams or stacked MachineArrays.
    """
    h_ed = 0.5 * (
        (eqp - params.ef) ** 2 / (params.xd - params.xdp)
        + (eqp - eqpp) ** 2 / (params.xdp - params.xdpp)
    )
    h_eq = 0.5 * (
        edp ** 2 / (params.xq - params.xqp)
        + (edp - edpp) ** 2 / (params.xqp - params.xqpp)
    )
    return h_ed, h_eq


def kinetic_energy(p, M):
    return p ** 2 / (2.0 * M)


def line_energy(eta, ed_i, eq_i, ed_k, eq_k, b):
    """Energy of a lossless line (subtransient reactances included); b = B_ik < 0."""
    s, c = np.sin(eta), np.cos(eta)
    return -0.5 * b * (
        2.0 * (ed_i * eq_k - ed_k * eq_i) * s
        - 2.0 * (ed_i * ed_k + eq_i * eq_k) * c
        + ed_i ** 2
        + ed_k ** 2
        + eq_i ** 2
        + eq_k ** 2
    )


def _edge_voltages(state: SystemState, topology: NetworkTopology):
    heads, tails = topology.heads, topology.tails
    return state.edpp[heads], state.eqpp[heads], state.edpp[tails], state.eqpp[tails]


def total_hamiltonian(
    x: np.ndarray,
    topology: NetworkTopology,
    machines: MachineArrays,
    vartheta: Optional[np.ndarray] = None,
    T: Optional[np.ndarray] = None,
) -> EnergyBreakdown:
    """H_p, and H_c = 1/2 vartheta^T T^-1 vartheta when the controller state is supplied."""
    layout = layout_for(topology)
    if machines.n != topology.n:
        raise DimensionError(f"machines: expected {topology.n} machines, got {machines.n}")
    state = SystemState.from_vector(x, layout)

    h_ed, h_eq = machine_electrical_energy(machines, state.eqp, state.edp, state.eqpp, state.edpp)
    h_m = kinetic_energy(state.p, machines.m)
    ed_i, eq_i, ed_k, eq_k = _edge_voltages(state, topology)
    h_line = line_energy(state.eta, ed_i, eq_i, ed_k, eq_k, topology.edge_b)
    h_p = float(np.sum(h_ed) + np.sum(h_eq) + np.sum(h_m) + np.sum(h_line))

    h_c = 0.0
    if vartheta is not None:
        vartheta = as_vector(vartheta, topology.n, "vartheta")
        T = np.ones(topology.n) if T is None else as_vector(T, topology.n, "T")
        h_c = float(0.5 * np.dot(vartheta, vartheta / T))
    return EnergyBreakdown(h_ed=h_ed, h_eq=h_eq, h_m=h_m, h_line=h_line, h_p=h_p, h_c=h_c)


def hamiltonian(x: np.ndarray, topology: NetworkTopology, machines: MachineArrays) -> float:
    return total_hamiltonian(x, topology, machines).h_p


# ---------------- GRADIENT ----------------


def line_gradient(state: SystemState, topology: NetworkTopology):
    """Derivatives of the total line energy w.r.t. eta, E_q'' and E_d''."""
    ed_i, eq_i, ed_k, eq_k = _edge_voltages(state, topology)
    s, c = np.sin(state.eta), np.cos(state.eta)
    f = -0.5 * topology.edge_b

    d_eta = f * (2.0 * (ed_i * eq_k - ed_k * eq_i) * c + 2.0 * (ed_i * ed_k + eq_i * eq_k) * s)

    n = topology.n
    heads, tails = topology.heads, topology.tails
    d_edpp = np.zeros(n)
    d_eqpp = np.zeros(n)
    np.add.at(d_edpp, heads, f * (2.0 * eq_k * s - 2.0 * ed_k * c + 2.0 * ed_i))
    np.add.at(d_edpp, tails, f * (-2.0 * eq_i * s - 2.0 * ed_i * c + 2.0 * ed_k))
    np.add.at(d_eqpp, heads, f * (-2.0 * ed_k * s - 2.0 * eq_k * c + 2.0 * eq_i))
    np.add.at(d_eqpp, tails, f * (2.0 * ed_i * s - 2.0 * eq_i * c + 2.0 * eq_k))
    return d_eta, d_eqpp, d_edpp


def grad_hamiltonian(x: np.ndarray, topology: NetworkTopology, machines: MachineArrays) -> np.ndarray:
    layout = layout_for(topology)
    state = SystemState.from_vector(x, layout)
    d_eta, d_eqpp, d_edpp = line_gradient(state, topology)

    dq_split = (state.eqp - state.eqpp) / machines.xdp_hat
    qd_split = (state.edp - state.edpp) / machines.xqp_hat

    grad = np.empty(layout.size)
    grad[layout.p] = state.p / machines.m
    grad[layout.eta] = d_eta
    grad[layout.eqp] = (state.eqp - machines.ef) / machines.xd_hat + dq_split
    grad[layout.edp] = state.edp / machines.xq_hat + qd_split
    grad[layout.eqpp] = -dq_split + d_eqpp
    grad[layout.edpp] = -qd_split + d_edpp
    return grad


def hessian(
    x: np.ndarray,
    topology: NetworkTopology,
    machines: MachineArrays,
    step: float = FD_STEP,
    symmetrize: bool = True,
) -> np.ndarray:
    """Central finite differences of the analytic gradient."""
    return fd_jacobian(lambda z: grad_hamiltonian(z, topology, machines), x, step, symmetrize)


def fd_jacobian(
    fn: Callable[[np.ndarray], np.ndarray],
    x: np.ndarray,
    step: float = FD_STEP,
    symmetrize: bool = False,
) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    cols = []
    for j in range(x.shape[0]):
        dx = np.zeros_like(x)
        dx[j] = step
        cols.append((fn(x + dx) - fn(x - dx)) / (2.0 * step))
    jac = np.column_stack(cols) if cols else np.zeros((0, 0))
    if symmetrize:
        jac = 0.5 * (jac + jac.T)
    return jac


# ---------------- SHIFTED HAMILTONIAN ----------------


def shift_storage(
    h: Callable[[np.ndarray], float],
    grad: Callable[[np.ndarray], np.ndarray],
    x: np.ndarray,
    x_ref: np.ndarray,
) -> float:
    """H(x) - (x - x_ref)^T grad H(x_ref) - H(x_ref)."""
    x = np.asarray(x, dtype=float)
    x_ref = np.asarray(x_ref, dtype=float)
    if x.shape != x_ref.shape:
        raise DimensionError(f"reference: expected shape {x.shape}, got {x_ref.shape}")
    return float(h(x) - np.dot(x - x_ref, grad(x_ref)) - h(x_ref))


def shifted_hamiltonian(
    x: np.ndarray, x_ref: np.ndarray, topology: NetworkTopology, machines: MachineArrays
) -> float:
    return shift_storage(
        lambda z: hamiltonian(z, topology, machines),
        lambda z: grad_hamiltonian(z, topology, machines),
        x,
        x_ref,
    )


def shifted_gradient(
    x: np.ndarray, x_ref: np.ndarray, topology: NetworkTopology, machines: MachineArrays
) -> np.ndarray:
    return grad_hamiltonian(x, topology, machines) - grad_hamiltonian(x_ref, topology, machines)
