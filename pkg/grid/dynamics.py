"""Sixth-order multi-machine dynamics, written twice.

`direct_rhs` evaluates the machine equations row by row from the dq network
currents. `ph_rhs` evaluates the same vector field as
(J - R) grad H + g u with constant J, R, g from `assemble_ph`. The two are
kept side by side and cross-checked in the test suite.

Currents follow the "entering the machine" convention, so the line-energy
gradient is dH_L/dE_q'' = -I_d and dH_L/dE_d'' = I_q.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

import numpy as np

from grid.energy import (
    MachineArrays,
    StateLayout,
    SystemState,
    grad_hamiltonian,
    hamiltonian,
    layout_for,
)
from grid.network_model import NetworkTopology, pairwise_angles
from grid.shared import DimensionError, Violation, as_vector, min_eigenvalue

GradFn = Callable[[np.ndarray], np.ndarray]


# ---------------- NETWORK ALGEBRA ----------------


def dq_currents(state: SystemState, topology: NetworkTopology) -> Tuple[np.ndarray, np.ndarray]:
    """dq currents entering every machine, with delta_ik read from eta."""
    B = topology.B
    b_self = np.diag(B)
    b_off = B - np.diag(b_self)
    delta = pairwise_angles(topology, state.eta)
    bs = b_off * np.sin(delta)
    bc = b_off * np.cos(delta)

    i_d = b_self * state.eqpp - bs @ state.edpp - bc @ state.eqpp
    i_q = -b_self * state.edpp - bs @ state.eqpp + bc @ state.edpp
    return i_d, i_q


def electrical_power(edpp, eqpp, i_d, i_q) -> np.ndarray:
    return edpp * i_d + eqpp * i_q


def terminal_voltage(edpp, eqpp, i_d, i_q, xdpp) -> Tuple[np.ndarray, np.ndarray]:
    """(V_d, V_q) behind the subtransient reactance: E'' = V + j X'' I."""
    v_d = edpp + xdpp * i_q
    v_q = eqpp - xdpp * i_d
    return v_d, v_q


# ---------------- DIRECT FORM ----------------


def direct_rhs(
    x: np.ndarray,
    p_m: np.ndarray,
    p_d: np.ndarray,
    topology: NetworkTopology,
    machines: MachineArrays,
) -> np.ndarray:
    layout = layout_for(topology)
    state = SystemState.from_vector(x, layout)
    p_m = as_vector(p_m, topology.n, "p_m")
    p_d = as_vector(p_d, topology.n, "p_d")

    i_d, i_q = dq_currents(state, topology)
    p_e = electrical_power(state.edpp, state.eqpp, i_d, i_q)
    omega = state.omega(machines)

    dx = np.empty(layout.size)
    dx[layout.p] = p_m - p_d - p_e
    dx[layout.eta] = topology.D.T @ omega
    dx[layout.eqp] = (machines.ef - state.eqp + machines.xd_hat * i_d) / machines.tdp
    dx[layout.edp] = (-state.edp - machines.xq_hat * i_q) / machines.tqp
    dx[layout.eqpp] = (state.eqp - state.eqpp + machines.xdp_hat * i_d) / machines.tdpp
    dx[layout.edpp] = (state.edp - state.edpp - machines.xqp_hat * i_q) / machines.tqpp
    return dx


# ---------------- PORT-HAMILTONIAN FORM ----------------


@dataclass(frozen=True, eq=False)
class PHStructure:
    A: np.ndarray  # J - R
    J: np.ndarray
    R: np.ndarray
    g: np.ndarray
    layout: StateLayout


@dataclass(frozen=True, eq=False)
class PortVariables:
    u: np.ndarray
    y: np.ndarray

    @property
    def supply(self) -> float:
        return float(np.dot(self.y, self.u))


def assemble_ph(topology: NetworkTopology, machines: MachineArrays) -> PHStructure:
    layout = layout_for(topology)
    n = topology.n
    A = np.zeros((layout.size, layout.size))

    A[layout.p, layout.eta] = -topology.D
    A[layout.eta, layout.p] = topology.D.T

    d1 = np.diag(-machines.xd_hat / machines.tdp)
    q1 = np.diag(-machines.xq_hat / machines.tqp)
    A[layout.eqp, layout.eqp] = d1
    A[layout.eqp, layout.eqpp] = d1
    A[layout.edp, layout.edp] = q1
    A[layout.edp, layout.edpp] = q1
    A[layout.eqpp, layout.eqpp] = np.diag(-machines.xdp_hat / machines.tdpp)
    A[layout.edpp, layout.edpp] = np.diag(-machines.xqp_hat / machines.tqpp)

    J = 0.5 * (A - A.T)
    R = -0.5 * (A + A.T)
    g = np.zeros((layout.size, n))
    g[layout.p, :] = np.eye(n)
    return PHStructure(A=A, J=J, R=R, g=g, layout=layout)


def ph_rhs(
    x: np.ndarray, u: np.ndarray, ph: PHStructure, grad_fn: GradFn
) -> Tuple[np.ndarray, np.ndarray]:
    """(J - R) grad H + g u, and the output y = g^T grad H."""
    x = ph.layout.check(x)
    u = as_vector(u, ph.g.shape[1], "u")
    grad = grad_fn(x)
    if grad.shape != x.shape:
        raise DimensionError(f"grad: expected shape {x.shape}, got {grad.shape}")
    return ph.A @ grad + ph.g @ u, ph.g.T @ grad


# ---------------- SUBTRANSIENT DISSIPATION CONDITION ----------------


@dataclass(frozen=True, eq=False)
class SubtransientCheck:
    d_margin: np.ndarray  # 4(X_d'-X_d'')T_d' - (X_d-X_d')T_d''
    q_margin: np.ndarray

    @property
    def d_axis(self) -> np.ndarray:
        return self.d_margin > 0

    @property
    def q_axis(self) -> np.ndarray:
        return self.q_margin > 0

    @property
    def passed(self) -> bool:
        return bool(np.all(self.d_axis) and np.all(self.q_axis))

    def violations(self) -> List[Violation]:
        out: List[Violation] = []
        for idx in range(self.d_margin.shape[0]):
            for axis, margin in (("d_axis", self.d_margin[idx]), ("q_axis", self.q_margin[idx])):
                if not margin > 0:
                    out.append(
                        Violation(
                            f"machines[{idx}].{axis}",
                            f"dissipation condition fails, margin {margin:.6g} <= 0",
                        )
                    )
        return out


def check_subtransient_condition(machines: MachineArrays) -> SubtransientCheck:
    d = 4.0 * machines.xdp_hat * machines.tdp - machines.xd_hat * machines.tdpp
    q = 4.0 * machines.xqp_hat * machines.tqp - machines.xq_hat * machines.tqpp
    return SubtransientCheck(d_margin=d, q_margin=q)


# ---------------- PLANT ----------------


@dataclass(frozen=True, eq=False)
class PlantModel:
    topology: NetworkTopology
    machines: MachineArrays
    ph: PHStructure

    @property
    def layout(self) -> StateLayout:
        return self.ph.layout

    @property
    def n(self) -> int:
        return self.topology.n

    def hamiltonian(self, x: np.ndarray) -> float:
        return hamiltonian(x, self.topology, self.machines)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return grad_hamiltonian(x, self.topology, self.machines)

    def rhs(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return ph_rhs(x, u, self.ph, self.gradient)[0]

    def electrical_power(self, x: np.ndarray) -> np.ndarray:
        state = SystemState.from_vector(x, self.layout)
        i_d, i_q = dq_currents(state, self.topology)
        return electrical_power(state.edpp, state.eqpp, i_d, i_q)

    def dissipation_min_eigenvalue(self) -> float:
        return min_eigenvalue(self.ph.R)


def build_plant(topology: NetworkTopology, machines: MachineArrays) -> PlantModel:
    if machines.n != topology.n:
        raise DimensionError(f"machines: expected {topology.n} machines, got {machines.n}")
    return PlantModel(topology=topology, machines=machines, ph=assemble_ph(topology, machines))


def port_variables(x: np.ndarray, u: np.ndarray, plant: PlantModel) -> PortVariables:
    u = as_vector(u, plant.n, "u")
    return PortVariables(u=u, y=plant.ph.g.T @ plant.gradient(x))


def shifted_port_variables(
    x: np.ndarray, u: np.ndarray, x_ref: np.ndarray, u_ref: np.ndarray, plant: PlantModel
) -> PortVariables:
    """u - u_ref and y - y_ref, the port pair of the shifted storage."""
    here = port_variables(x, u, plant)
    ref = port_variables(x_ref, u_ref, plant)
    return PortVariables(u=here.u - ref.u, y=here.y - ref.y)


def dissipation_rate(
    grad_shifted: np.ndarray,
    ph: PHStructure,
    droop: Optional[np.ndarray] = None,
    comm_laplacian: Optional[np.ndarray] = None,
) -> float:
    """-grad^T blockdiag(R + R_K, L_c) grad for a shifted gradient.

    With `comm_laplacian` the gradient carries the controller block after the
    plant block; `droop` adds K on the momentum block.
    """
    size = ph.layout.size
    grad_shifted = np.asarray(grad_shifted, dtype=float)
    extra = 0 if comm_laplacian is None else comm_laplacian.shape[0]
    if grad_shifted.shape != (size + extra,):
        raise DimensionError(f"grad: expected shape ({size + extra},), got {grad_shifted.shape}")

    gp = grad_shifted[:size]
    rate = float(gp @ ph.R @ gp)
    if droop is not None:
        w = gp[ph.layout.p]
        rate += float(np.dot(w, as_vector(droop, ph.layout.n, "droop") * w))
    if comm_laplacian is not None:
        gc = grad_shifted[size:]
        rate += float(gc @ comm_laplacian @ gc)
    return -rate
