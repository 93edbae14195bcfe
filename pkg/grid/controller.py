"""Distributed optimal frequency controller and the closed loop it forms.

Every machine i integrates

    vartheta_i' = -sum_k L_c[i, k] theta_k - (Q^-1 omega)_i,  theta = T^-1 vartheta
    P_m,i       =  (Q^-1 theta)_i - K_i omega_i

so at steady state all theta_i agree on the marginal cost lambda* and the
injections solve min 1/2 P^T Q P subject to 1^T P = 1^T P_d.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, solve

from grid.dynamics import PlantModel, ph_rhs
from grid.energy import SystemState, shift_storage
from grid.network_model import CommGraph
from grid.shared import VERIFY_TOL, DimensionError, ParameterError, as_vector

SYMMETRY_TOL = 1e-12


# ---------------- CONFIG / STATE ----------------


@dataclass(frozen=True, eq=False)
class ControllerConfig:
    Q: np.ndarray
    T: np.ndarray  # diagonal of T
    K: np.ndarray  # diagonal of K
    comm: CommGraph
    q_inv: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return int(self.T.shape[0])

    @property
    def laplacian(self) -> np.ndarray:
        return self.comm.laplacian


def _factor_cost(Q: np.ndarray):
    try:
        return cho_factor(Q)
    except LinAlgError as exc:
        raise ParameterError(f"controller.Q: not positive definite ({exc})") from exc


def check_cost_matrix(Q, n: Optional[int] = None) -> np.ndarray:
    Q = np.asarray(Q, dtype=float)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
        raise DimensionError(f"controller.Q: expected a square matrix, got shape {Q.shape}")
    if n is not None and Q.shape[0] != n:
        raise DimensionError(f"controller.Q: expected {n}x{n}, got {Q.shape}")
    if not np.all(np.isfinite(Q)):
        raise ParameterError("controller.Q: entries must be finite")
    if np.max(np.abs(Q - Q.T), initial=0.0) > SYMMETRY_TOL * max(1.0, np.max(np.abs(Q))):
        raise ParameterError("controller.Q: not symmetric")
    _factor_cost(Q)
    return Q


def build_controller(Q, T, K, comm: CommGraph) -> ControllerConfig:
    n = comm.n
    Q = check_cost_matrix(Q, n)
    T = as_vector(T, n, "controller.T")
    K = as_vector(K, n, "controller.K")
    for name, values in (("T", T), ("K", K)):
        bad = np.flatnonzero(~(values > 0))
        if bad.size:
            raise ParameterError(
                f"controller.{name}[{int(bad[0])}]: must be > 0, got {values[bad[0]]}"
            )
    q_inv = cho_solve(_factor_cost(Q), np.eye(n))
    return ControllerConfig(Q=Q, T=T, K=K, comm=comm, q_inv=0.5 * (q_inv + q_inv.T))


@dataclass(frozen=True, eq=False)
class ControllerState:
    vartheta: np.ndarray

    def theta(self, config: ControllerConfig) -> np.ndarray:
        return self.vartheta / config.T

    def energy(self, config: ControllerConfig) -> float:
        return float(0.5 * np.dot(self.vartheta, self.vartheta / config.T))


# ---------------- OPTIMAL DISPATCH ----------------


@dataclass(frozen=True, eq=False)
class DispatchSolution:
    p_m: np.ndarray
    marginal_cost: float  # lambda*

    def mismatch(self, p_d) -> float:
        return float(np.sum(self.p_m) - np.sum(p_d))

    def to_dict(self, p_d) -> Dict:
        return {
            "lambda": self.marginal_cost,
            "p_m": [float(v) for v in self.p_m],
            "mismatch": self.mismatch(p_d),
        }


def optimal_dispatch(Q, p_d) -> DispatchSolution:
    """lambda* = 1^T P_d / 1^T Q^-1 1 and P_m* = Q^-1 1 lambda*."""
    Q = check_cost_matrix(Q)
    n = Q.shape[0]
    p_d = as_vector(p_d, n, "p_d")
    q_inv_ones = cho_solve(_factor_cost(Q), np.ones(n))
    lam = float(np.sum(p_d) / np.sum(q_inv_ones))
    return DispatchSolution(p_m=q_inv_ones * lam, marginal_cost=lam)


def solve_kkt(Q, p_d) -> DispatchSolution:
    """Same optimum from the full KKT block system [[Q, -1], [1^T, 0]]."""
    Q = check_cost_matrix(Q)
    n = Q.shape[0]
    p_d = as_vector(p_d, n, "p_d")
    kkt = np.zeros((n + 1, n + 1))
    kkt[:n, :n] = Q
    kkt[:n, n] = -1.0
    kkt[n, :n] = 1.0
    rhs = np.zeros(n + 1)
    rhs[n] = np.sum(p_d)
    sol = solve(kkt, rhs)
    return DispatchSolution(p_m=sol[:n], marginal_cost=float(sol[n]))


@dataclass(frozen=True)
class KKTResidual:
    stationarity: float  # ||Q P - 1 lambda||_inf
    feasibility: float  # |1^T P - 1^T P_d|


def kkt_residual(Q, p_d, solution: DispatchSolution) -> KKTResidual:
    Q = np.asarray(Q, dtype=float)
    p_d = as_vector(p_d, Q.shape[0], "p_d")
    stationarity = Q @ solution.p_m - solution.marginal_cost
    return KKTResidual(
        stationarity=float(np.max(np.abs(stationarity), initial=0.0)),
        feasibility=abs(solution.mismatch(p_d)),
    )


# ---------------- CONTROL LAW ----------------


def controller_output(config: ControllerConfig, vartheta, omega) -> np.ndarray:
    vartheta = as_vector(vartheta, config.n, "vartheta")
    omega = as_vector(omega, config.n, "omega")
    return config.q_inv @ (vartheta / config.T) - config.K * omega


def controller_rhs(config: ControllerConfig, vartheta, omega) -> np.ndarray:
    vartheta = as_vector(vartheta, config.n, "vartheta")
    omega = as_vector(omega, config.n, "omega")
    return -config.laplacian @ (vartheta / config.T) - config.q_inv @ omega


# ---------------- CLOSED LOOP ----------------


@dataclass(frozen=True, eq=False)
class ClosedLoopModel:
    plant: PlantModel
    controller: ControllerConfig
    A: np.ndarray  # J_cl - R_cl
    J: np.ndarray
    R: np.ndarray
    g: np.ndarray  # demand input map [g; 0]

    @property
    def size(self) -> int:
        return self.A.shape[0]

    @property
    def plant_size(self) -> int:
        return self.plant.layout.size

    def split(self, z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        z = np.asarray(z, dtype=float)
        if z.shape != (self.size,):
            raise DimensionError(f"z: expected shape ({self.size},), got {z.shape}")
        return z[: self.plant_size], z[self.plant_size :]

    def join(self, x: np.ndarray, vartheta: np.ndarray) -> np.ndarray:
        x = self.plant.layout.check(x)
        vartheta = as_vector(vartheta, self.controller.n, "vartheta")
        return np.concatenate([x, vartheta])

    def omega(self, z: np.ndarray) -> np.ndarray:
        x, _ = self.split(z)
        return x[self.plant.layout.p] / self.plant.machines.m

    def mechanical_power(self, z: np.ndarray) -> np.ndarray:
        _, vartheta = self.split(z)
        return controller_output(self.controller, vartheta, self.omega(z))


def assemble_closed_loop(plant: PlantModel, controller: ControllerConfig) -> ClosedLoopModel:
    if controller.n != plant.n:
        raise DimensionError(f"controller: expected {plant.n} nodes, got {controller.n}")
    layout = plant.layout
    size, n = layout.size, plant.n

    r_k = np.zeros((size, size))
    r_k[layout.p, layout.p] = np.diag(controller.K)
    G = np.zeros((n, size))
    G[:, layout.p] = controller.q_inv

    A = np.zeros((size + n, size + n))
    A[:size, :size] = plant.ph.A - r_k
    A[:size, size:] = G.T
    A[size:, :size] = -G
    A[size:, size:] = -controller.laplacian

    g = np.zeros((size + n, n))
    g[:size, :] = plant.ph.g
    return ClosedLoopModel(
        plant=plant,
        controller=controller,
        A=A,
        J=0.5 * (A - A.T),
        R=-0.5 * (A + A.T),
        g=g,
    )


def closed_loop_hamiltonian(z: np.ndarray, loop: ClosedLoopModel) -> float:
    """H_p + 1/2 vartheta^T T^-1 vartheta."""
    x, vartheta = loop.split(z)
    return loop.plant.hamiltonian(x) + ControllerState(vartheta).energy(loop.controller)


def closed_loop_gradient(z: np.ndarray, loop: ClosedLoopModel) -> np.ndarray:
    x, vartheta = loop.split(z)
    return np.concatenate([loop.plant.gradient(x), vartheta / loop.controller.T])


def closed_loop_rhs(z: np.ndarray, p_d, loop: ClosedLoopModel) -> np.ndarray:
    p_d = as_vector(p_d, loop.controller.n, "p_d")
    return loop.A @ closed_loop_gradient(z, loop) - loop.g @ p_d


def composed_rhs(z: np.ndarray, p_d, loop: ClosedLoopModel) -> np.ndarray:
    """Plant port-Hamiltonian rhs driven by the controller output, stacked with the controller rhs."""
    x, vartheta = loop.split(z)
    p_d = as_vector(p_d, loop.controller.n, "p_d")
    omega = loop.omega(z)
    p_m = controller_output(loop.controller, vartheta, omega)
    dx, _ = ph_rhs(x, p_m - p_d, loop.plant.ph, loop.plant.gradient)
    return np.concatenate([dx, controller_rhs(loop.controller, vartheta, omega)])


def shifted_closed_loop_hamiltonian(z: np.ndarray, z_ref: np.ndarray, loop: ClosedLoopModel) -> float:
    return shift_storage(
        lambda v: closed_loop_hamiltonian(v, loop),
        lambda v: closed_loop_gradient(v, loop),
        z,
        z_ref,
    )


# ---------------- STEADY-STATE VERIFICATION ----------------


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    value: float
    tol: float

    def to_dict(self) -> Dict:
        return {"name": self.name, "passed": self.passed, "value": self.value, "tol": self.tol}


@dataclass(frozen=True)
class SteadyStateReport:
    checks: Tuple[CheckResult, ...]
    marginal_cost: float
    consensus_spread: float

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def failed(self) -> List[str]:
        return [c.name for c in self.checks if not c.passed]

    def to_dict(self) -> Dict:
        return {
            "passed": self.passed,
            "marginal_cost": self.marginal_cost,
            "consensus_spread": self.consensus_spread,
            "checks": [c.to_dict() for c in self.checks],
        }


def verify_steady_state(
    x: np.ndarray,
    vartheta: np.ndarray,
    p_d,
    loop: ClosedLoopModel,
    tol: float = VERIFY_TOL,
) -> SteadyStateReport:
    """Pass/fail for every condition of an optimal closed-loop steady state."""
    controller, plant = loop.controller, loop.plant
    z = loop.join(x, vartheta)
    p_d = as_vector(p_d, controller.n, "p_d")
    dispatch = optimal_dispatch(controller.Q, p_d)

    state = SystemState.from_vector(x, plant.layout)
    omega = state.omega(plant.machines)
    theta = vartheta / controller.T
    p_m = controller_output(controller, vartheta, omega)
    grad_e = plant.gradient(x)[plant.layout.voltages]

    def _inf(v) -> float:
        return float(np.max(np.abs(v), initial=0.0))

    values = (
        ("rhs_residual", _inf(closed_loop_rhs(z, p_d, loop))),
        ("frequency", _inf(omega)),
        ("consensus", _inf(theta - dispatch.marginal_cost)),
        ("dispatch", _inf(p_m - dispatch.p_m)),
        ("voltage_gradient", _inf(grad_e)),
    )
    checks = tuple(CheckResult(name, bool(v < tol), v, tol) for name, v in values)
    return SteadyStateReport(
        checks=checks,
        marginal_cost=dispatch.marginal_cost,
        consensus_spread=float(np.max(theta) - np.min(theta)),
    )
