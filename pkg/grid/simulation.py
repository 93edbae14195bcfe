"""Time integration, steady-state search and scenario execution."""

from __future__ import annotations

import asyncio
import time
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import lstsq

from grid.controller import (
    ClosedLoopModel,
    DispatchSolution,
    SteadyStateReport,
    closed_loop_gradient,
    closed_loop_hamiltonian,
    closed_loop_rhs,
    controller_output,
    optimal_dispatch,
    shifted_closed_loop_hamiltonian,
    verify_steady_state,
)
from grid.dynamics import (
    PlantModel,
    SubtransientCheck,
    check_subtransient_condition,
    dissipation_rate,
    ph_rhs,
    port_variables,
)
from grid.energy import StateLayout, fd_jacobian, hessian, shifted_hamiltonian
from grid.network_model import NetworkTopology, reconstruct_angles
from grid.shared import (
    FD_STEP,
    MAX_CONCURRENCY,
    NEWTON_MAX_ITER,
    NEWTON_TOL,
    RK45_ATOL,
    RK45_RTOL,
    SCENARIO_TIMEOUT_SECONDS,
    VERIFY_TOL,
    IntegrationError,
    ParameterError,
    SteadyStateError,
    StructuralCheckError,
    Violation,
    as_vector,
    debug,
    log,
    min_eigenvalue,
)

METHODS = ("rk4", "rk45")
PASSIVITY_TOL = 1e-8


# ---------------- INTEGRATION ----------------


@dataclass(frozen=True)
class IntegratorConfig:
    method: str = "rk45"
    dt: float = 1e-3  # rk4 step; rk45 sample spacing is dt * record_stride
    t_end: float = 10.0
    record_stride: int = 1
    rtol: float = RK45_RTOL
    atol: float = RK45_ATOL

    def violations(self, prefix: str = "integrator") -> List[Violation]:
        out: List[Violation] = []
        if self.method not in METHODS:
            out.append(Violation(f"{prefix}.method", f"must be one of {METHODS}, got {self.method!r}"))
        for name in ("dt", "t_end", "rtol", "atol"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                out.append(Violation(f"{prefix}.{name}", f"must be > 0, got {value}"))
        if not (isinstance(self.record_stride, int) and self.record_stride >= 1):
            out.append(Violation(f"{prefix}.record_stride", f"must be an integer >= 1, got {self.record_stride}"))
        return out

    def check(self) -> None:
        problems = self.violations()
        if problems:
            raise ParameterError("; ".join(str(v) for v in problems))


@dataclass(frozen=True, eq=False)
class Trajectory:
    t: np.ndarray
    x: np.ndarray  # one row per recorded sample
    monitors: Dict[str, np.ndarray] = field(default_factory=dict)

    def __len__(self) -> int:
        return int(self.t.shape[0])

    @property
    def final(self) -> np.ndarray:
        return self.x[-1]


Rhs = Callable[[float, np.ndarray], np.ndarray]
Monitor = Callable[[float, np.ndarray], Dict[str, float]]


def _finite(v: np.ndarray) -> bool:
    return bool(np.all(np.isfinite(v)))


def _rk4_step(rhs: Rhs, t: float, x: np.ndarray, h: float) -> np.ndarray:
    k1 = rhs(t, x)
    k2 = rhs(t + 0.5 * h, x + 0.5 * h * k1)
    k3 = rhs(t + 0.5 * h, x + 0.5 * h * k2)
    k4 = rhs(t + h, x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _integrate_rk4(rhs: Rhs, x0: np.ndarray, config: IntegratorConfig):
    dt, t_end, stride = config.dt, config.t_end, config.record_stride
    n_full = int(np.floor(t_end / dt + 1e-9))
    remainder = t_end - n_full * dt
    if remainder < 1e-12 * max(1.0, t_end):
        remainder = 0.0

    times, samples = [0.0], [x0.copy()]
    x = x0
    for k in range(n_full):
        x = _rk4_step(rhs, k * dt, x, dt)
        if not _finite(x):
            raise IntegrationError("non-finite state", (k + 1) * dt)
        if (k + 1) % stride == 0:
            times.append((k + 1) * dt)
            samples.append(x.copy())

    if remainder > 0:
        x = _rk4_step(rhs, n_full * dt, x, remainder)
        if not _finite(x):
            raise IntegrationError("non-finite state", t_end)
        times.append(t_end)
        samples.append(x.copy())
    elif n_full % stride != 0:
        times.append(n_full * dt)
        samples.append(x.copy())
    return np.array(times), np.array(samples)


def sample_times(config: IntegratorConfig) -> np.ndarray:
    """Record grid of the adaptive integrator: multiples of dt * stride, plus t_end."""
    spacing = config.dt * config.record_stride
    k_max = int(np.floor(config.t_end / spacing + 1e-9))
    times = np.arange(k_max + 1) * spacing
    if config.t_end - times[-1] > 1e-12 * max(1.0, config.t_end):
        times = np.append(times, config.t_end)
    elif k_max >= 1:
        times[-1] = config.t_end
    return times


def _integrate_rk45(rhs: Rhs, x0: np.ndarray, config: IntegratorConfig):
    def fun(t, x):
        dx = rhs(t, x)
        if not (_finite(x) and _finite(dx)):
            raise IntegrationError("non-finite state", t)
        return dx

    sol = solve_ivp(
        fun,
        (0.0, config.t_end),
        x0,
        method="RK45",
        t_eval=sample_times(config),
        rtol=config.rtol,
        atol=config.atol,
    )
    if sol.status < 0:
        t_fail = float(sol.t[-1]) if sol.t.size else 0.0
        raise IntegrationError(f"adaptive step failed: {sol.message}", t_fail)
    return sol.t, sol.y.T


def integrate(
    rhs: Rhs,
    x0: np.ndarray,
    config: IntegratorConfig,
    monitor: Optional[Monitor] = None,
) -> Trajectory:
    config.check()
    x0 = np.array(x0, dtype=float)
    if not (_finite(x0) and _finite(rhs(0.0, x0))):
        raise IntegrationError("non-finite initial state", 0.0)

    if config.method == "rk4":
        t, xs = _integrate_rk4(rhs, x0, config)
    else:
        t, xs = _integrate_rk45(rhs, x0, config)

    monitors: Dict[str, np.ndarray] = {}
    if monitor is not None:
        rows = [monitor(ti, xi) for ti, xi in zip(t, xs)]
        monitors = {key: np.array([r[key] for r in rows]) for key in rows[0]}
    return Trajectory(t=t, x=xs, monitors=monitors)


# ---------------- STEADY STATE ----------------


@dataclass(frozen=True)
class NewtonConfig:
    tol: float = NEWTON_TOL
    max_iter: int = NEWTON_MAX_ITER
    fd_step: float = FD_STEP
    min_step: float = 1e-10  # smallest line-search factor
    rcond: float = 1e-12

    def violations(self, prefix: str = "newton") -> List[Violation]:
        out: List[Violation] = []
        for name in ("tol", "fd_step", "min_step"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                out.append(Violation(f"{prefix}.{name}", f"must be > 0, got {value}"))
        if not (isinstance(self.max_iter, int) and self.max_iter >= 1):
            out.append(Violation(f"{prefix}.max_iter", f"must be an integer >= 1, got {self.max_iter}"))
        if not (np.isfinite(self.rcond) and self.rcond >= 0):
            out.append(Violation(f"{prefix}.rcond", f"must be >= 0, got {self.rcond}"))
        return out


@dataclass(frozen=True, eq=False)
class SteadyStateResult:
    success: bool
    x: np.ndarray
    residual: float
    iterations: int
    trace: Tuple[float, ...]
    message: str
    vartheta: Optional[np.ndarray] = None
    hessian_min_eig: float = float("nan")

    @property
    def hessian_positive(self) -> bool:
        return bool(self.hessian_min_eig > 0)

    @property
    def z(self) -> np.ndarray:
        if self.vartheta is None:
            return self.x
        return np.concatenate([self.x, self.vartheta])

    def to_dict(self) -> Dict:
        out = {
            "success": self.success,
            "message": self.message,
            "iterations": self.iterations,
            "residual": self.residual,
            "hessian_min_eig": self.hessian_min_eig,
            "hessian_positive": self.hessian_positive,
            "trace": list(self.trace),
            "x": [float(v) for v in self.x],
        }
        if self.vartheta is not None:
            out["vartheta"] = [float(v) for v in self.vartheta]
        return out


class IdentityChart:
    def reduce(self, x: np.ndarray) -> np.ndarray:
        return np.array(x, dtype=float)

    def lift(self, y: np.ndarray) -> np.ndarray:
        return np.array(y, dtype=float)


@dataclass(frozen=True, eq=False)
class AngleChart:
    """Coordinates (p, delta_2..n, E, extra) with eta = D^T delta and delta_1 = 0.

    With `free_momentum=False` the momenta are pinned to zero and dropped.
    """

    topology: NetworkTopology
    extra: int = 0
    free_momentum: bool = True

    @property
    def layout(self) -> StateLayout:
        return StateLayout(self.topology.n, self.topology.m)

    def reduce(self, z: np.ndarray) -> np.ndarray:
        layout = self.layout
        z = np.asarray(z, dtype=float)
        x = z[: layout.size]
        delta = reconstruct_angles(self.topology, x[layout.eta])
        parts = [x[layout.p]] if self.free_momentum else []
        parts += [delta[1:], x[layout.voltages], z[layout.size :]]
        return np.concatenate(parts)

    def lift(self, y: np.ndarray) -> np.ndarray:
        n = self.topology.n
        pos = 0
        if self.free_momentum:
            p = y[:n]
            pos = n
        else:
            p = np.zeros(n)
        delta = np.concatenate([[0.0], y[pos : pos + n - 1]])
        pos += n - 1
        rest = y[pos:]
        return np.concatenate([p, self.topology.D.T @ delta, rest])


def find_steady_state(
    rhs: Callable[[np.ndarray], np.ndarray],
    x_guess: np.ndarray,
    config: Optional[NewtonConfig] = None,
    chart=None,
) -> SteadyStateResult:
    """Gauss-Newton on rhs(x) = 0 with a finite-difference Jacobian and backtracking.

    Failures come back as `success=False` with the residual trace.
    """
    config = config or NewtonConfig()
    chart = chart or IdentityChart()

    def residual(y: np.ndarray) -> np.ndarray:
        with np.errstate(all="ignore"):
            return rhs(chart.lift(y))

    y = chart.reduce(np.asarray(x_guess, dtype=float))
    f = residual(y)
    trace: List[float] = []

    def _result(success: bool, message: str, iterations: int) -> SteadyStateResult:
        norm = float(np.max(np.abs(f), initial=0.0)) if _finite(f) else float("inf")
        return SteadyStateResult(
            success=success,
            x=chart.lift(y),
            residual=norm,
            iterations=iterations,
            trace=tuple(trace),
            message=message,
        )

    if not _finite(f):
        return _result(False, "non-finite residual at initial guess", 0)

    norm = float(np.max(np.abs(f), initial=0.0))
    trace.append(norm)
    iterations = 0
    while norm >= config.tol:
        if iterations >= config.max_iter:
            return _result(False, f"no convergence after {iterations} iterations", iterations)

        jac = fd_jacobian(residual, y, config.fd_step)
        if not _finite(jac):
            return _result(False, "non-finite Jacobian", iterations)
        step, _, rank, _ = lstsq(jac, -f, cond=config.rcond)
        if rank == 0:
            return _result(False, "singular Jacobian", iterations)

        base = float(np.linalg.norm(f))
        mu = 1.0
        while True:
            y_try = y + mu * step
            f_try = residual(y_try)
            if _finite(f_try) and float(np.linalg.norm(f_try)) < base:
                break
            mu /= 4.0
            if mu < config.min_step:
                return _result(False, f"line search stalled at iteration {iterations}", iterations)

        y, f = y_try, f_try
        iterations += 1
        norm = float(np.max(np.abs(f), initial=0.0))
        trace.append(norm)
        debug("newton", f"iter={iterations} residual={norm:.3e} mu={mu:.3g} rank={rank}")

    return _result(True, "converged", iterations)


def dc_angle_guess(plant: PlantModel, injection: np.ndarray) -> np.ndarray:
    """Solve L_B delta = injection with delta_1 = 0, L_B weighted by -B_ik E_fi E_fk."""
    n = plant.n
    injection = as_vector(injection, n, "injection")
    if n == 1:
        return np.zeros(1)
    ef = plant.machines.ef
    weights = -plant.topology.B * np.outer(ef, ef)
    np.fill_diagonal(weights, 0.0)
    lap = np.diag(weights.sum(axis=1)) - weights
    solution, *_ = lstsq(lap[:, 1:], injection)
    return np.concatenate([[0.0], solution])


def flat_start(
    plant: PlantModel,
    p_d,
    controller=None,
    p_m: Optional[np.ndarray] = None,
) -> np.ndarray:
    """omega = 0, DC-style angles, E_q' = E_q'' = E_f, E_d' = E_d'' = 0.

    The angle guess uses the optimal dispatch when a controller is given,
    else `p_m` (zeros by default).
    """
    n = plant.n
    p_d = as_vector(p_d, n, "p_d")
    if controller is not None:
        p_m = optimal_dispatch(controller.Q, p_d).p_m
    elif p_m is None:
        p_m = np.zeros(n)
    delta = dc_angle_guess(plant, as_vector(p_m, n, "p_m") - p_d)

    layout = plant.layout
    x = np.zeros(layout.size)
    x[layout.eta] = plant.topology.D.T @ delta
    x[layout.eqp] = plant.machines.ef
    x[layout.eqpp] = plant.machines.ef
    return x


def solve_open_loop_equilibrium(
    plant: PlantModel,
    u,
    x_guess: Optional[np.ndarray] = None,
    config: Optional[NewtonConfig] = None,
) -> SteadyStateResult:
    """Equilibrium of the uncontrolled plant for a constant input u (omega pinned at 0)."""
    u = as_vector(u, plant.n, "u")
    if x_guess is None:
        x_guess = flat_start(plant, np.zeros(plant.n), p_m=u)
    chart = AngleChart(plant.topology, free_momentum=False)
    result = find_steady_state(lambda x: plant.rhs(x, u), x_guess, config, chart)
    hmin = float("nan")
    if result.success:
        hmin = min_eigenvalue(hessian(result.x, plant.topology, plant.machines))
    return replace(result, hessian_min_eig=hmin)


def solve_closed_loop_equilibrium(
    loop: ClosedLoopModel,
    p_d,
    z_guess: Optional[np.ndarray] = None,
    config: Optional[NewtonConfig] = None,
) -> SteadyStateResult:
    controller, plant = loop.controller, loop.plant
    p_d = as_vector(p_d, controller.n, "p_d")
    if z_guess is None:
        lam = optimal_dispatch(controller.Q, p_d).marginal_cost
        x0 = flat_start(plant, p_d, controller)
        z_guess = loop.join(x0, controller.T * lam)
    chart = AngleChart(plant.topology, extra=controller.n)
    result = find_steady_state(lambda z: closed_loop_rhs(z, p_d, loop), z_guess, config, chart)

    x, vartheta = loop.split(result.x)
    hmin = float("nan")
    if result.success:
        h_plant = min_eigenvalue(hessian(x, plant.topology, plant.machines))
        hmin = min(h_plant, float(np.min(1.0 / controller.T)))
    return replace(result, x=x, vartheta=vartheta, hessian_min_eig=hmin)


def perturb_state(
    chart: AngleChart, z_ref: np.ndarray, magnitude: float, rng: np.random.Generator
) -> np.ndarray:
    """Point at distance `magnitude` from z_ref in chart coordinates (keeps eta = D^T delta)."""
    y = chart.reduce(z_ref)
    direction = rng.standard_normal(y.shape[0])
    norm = np.linalg.norm(direction)
    if norm > 0:
        direction /= norm
    return chart.lift(y + magnitude * direction)


# ---------------- SCENARIO ----------------


@dataclass(frozen=True, eq=False)
class InitialCondition:
    mode: str = "state"  # "state" uses z; "equilibrium" perturbs the solved steady state
    z: Optional[np.ndarray] = None
    perturbation: float = 0.0
    seed: int = 0


@dataclass(frozen=True, eq=False)
class SimulationSetup:
    name: str
    loop: ClosedLoopModel
    p_d: np.ndarray
    integrator: IntegratorConfig
    initial: InitialCondition
    newton: NewtonConfig = NewtonConfig()
    verify_tol: float = VERIFY_TOL


@dataclass(frozen=True)
class MonitorSummary:
    max_abs_sum_pe: float
    max_shifted_uptick: float
    max_dissipation_rate: float
    final_max_omega: float
    endpoint_drift: float  # |d/dt| of eta and theta over the last two samples

    def to_dict(self) -> Dict:
        return {
            "max_abs_sum_pe": self.max_abs_sum_pe,
            "max_shifted_uptick": self.max_shifted_uptick,
            "max_dissipation_rate": self.max_dissipation_rate,
            "final_max_omega": self.final_max_omega,
            "endpoint_drift": self.endpoint_drift,
        }


@dataclass(frozen=True, eq=False)
class ScenarioResult:
    name: str
    trajectory: Trajectory
    steady_state: SteadyStateResult
    verification: SteadyStateReport
    structural: SubtransientCheck
    dispatch: DispatchSolution
    summary: MonitorSummary


def trajectory_monitors(
    traj: Trajectory, loop: ClosedLoopModel, p_d: np.ndarray, z_ref: Optional[np.ndarray]
) -> Dict[str, np.ndarray]:
    plant, controller = loop.plant, loop.controller
    layout = plant.layout
    grad_ref = closed_loop_gradient(z_ref, loop) if z_ref is not None else None

    cols: Dict[str, List] = {k: [] for k in ("H", "H_shifted", "dissipation", "sumPe", "omega", "Pm", "Pe", "delta_rel")}
    for z in traj.x:
        x, vartheta = loop.split(z)
        omega = x[layout.p] / plant.machines.m
        p_e = plant.electrical_power(x)
        cols["H"].append(closed_loop_hamiltonian(z, loop))
        if grad_ref is None:
            cols["H_shifted"].append(np.nan)
            cols["dissipation"].append(np.nan)
        else:
            cols["H_shifted"].append(shifted_closed_loop_hamiltonian(z, z_ref, loop))
            cols["dissipation"].append(
                dissipation_rate(
                    closed_loop_gradient(z, loop) - grad_ref,
                    plant.ph,
                    droop=controller.K,
                    comm_laplacian=controller.laplacian,
                )
            )
        cols["sumPe"].append(float(np.sum(p_e)))
        cols["omega"].append(omega)
        cols["Pm"].append(controller_output(controller, vartheta, omega))
        cols["Pe"].append(p_e)
        cols["delta_rel"].append(reconstruct_angles(plant.topology, x[layout.eta]))
    return {k: np.array(v) for k, v in cols.items()}


def summarize_monitors(traj: Trajectory, loop: ClosedLoopModel) -> MonitorSummary:
    mon = traj.monitors
    h_bar = mon["H_shifted"]
    uptick = float(np.max(np.diff(h_bar), initial=0.0)) if np.all(np.isfinite(h_bar)) else float("nan")
    diss = mon["dissipation"]
    drift = 0.0
    if len(traj) >= 2:
        layout = loop.plant.layout
        span = float(traj.t[-1] - traj.t[-2])
        last, prev = traj.x[-1], traj.x[-2]
        eta_rate = (last[layout.eta] - prev[layout.eta]) / span
        theta_rate = (last[layout.size :] - prev[layout.size :]) / (span * loop.controller.T)
        drift = float(np.max(np.abs(np.concatenate([eta_rate, theta_rate])), initial=0.0))
    return MonitorSummary(
        max_abs_sum_pe=float(np.max(np.abs(mon["sumPe"]))),
        max_shifted_uptick=max(uptick, 0.0) if np.isfinite(uptick) else uptick,
        max_dissipation_rate=float(np.max(diss)) if np.all(np.isfinite(diss)) else float("nan"),
        final_max_omega=float(np.max(np.abs(mon["omega"][-1]))),
        endpoint_drift=drift,
    )


def initial_state(setup: SimulationSetup, steady: SteadyStateResult) -> np.ndarray:
    init = setup.initial
    if init.mode == "equilibrium":
        if not steady.success:
            raise SteadyStateError(f"{setup.name}: no steady state to start from ({steady.message})")
        chart = AngleChart(setup.loop.plant.topology, extra=setup.loop.controller.n)
        return perturb_state(chart, steady.z, init.perturbation, np.random.default_rng(init.seed))
    if init.z is None:
        x0 = flat_start(setup.loop.plant, setup.p_d, setup.loop.controller)
        return setup.loop.join(x0, np.zeros(setup.loop.controller.n))
    return np.array(init.z, dtype=float)


def run_scenario(setup: SimulationSetup) -> ScenarioResult:
    """Gate, solve the reference steady state, simulate, then verify the endpoint."""
    loop = setup.loop
    structural = check_subtransient_condition(loop.plant.machines)
    if not structural.passed:
        raise StructuralCheckError(structural.violations())

    steady = solve_closed_loop_equilibrium(loop, setup.p_d, config=setup.newton)
    if not steady.success:
        log("simulate", f"scenario={setup.name} action=WARN reason=\"{steady.message}\" shifted monitors disabled")
    z_ref = steady.z if steady.success else None

    z0 = initial_state(setup, steady)
    traj = integrate(lambda t, z: closed_loop_rhs(z, setup.p_d, loop), z0, setup.integrator)
    traj = replace(traj, monitors=trajectory_monitors(traj, loop, setup.p_d, z_ref))

    x_end, vartheta_end = loop.split(traj.final)
    verification = verify_steady_state(x_end, vartheta_end, setup.p_d, loop, setup.verify_tol)
    return ScenarioResult(
        name=setup.name,
        trajectory=traj,
        steady_state=steady,
        verification=verification,
        structural=structural,
        dispatch=optimal_dispatch(loop.controller.Q, setup.p_d),
        summary=summarize_monitors(traj, loop),
    )


# ---------------- PASSIVITY ----------------


@dataclass(frozen=True, eq=False)
class PassivityReport:
    t: np.ndarray
    h_shifted: np.ndarray
    supply: np.ndarray  # integral of y~^T u~ from 0
    max_violation: float
    tol: float = PASSIVITY_TOL

    @property
    def passed(self) -> bool:
        return bool(self.max_violation <= self.tol)


def passivity_check(
    plant: PlantModel,
    x_ref: np.ndarray,
    u_ref,
    u,
    perturbation: float = 0.05,
    seed: int = 0,
    t_end: float = 5.0,
    sample_dt: float = 0.05,
    rtol: float = 1e-10,
    atol: float = 1e-12,
) -> PassivityReport:
    """Open-loop run at constant u from a perturbation of the steady state x_ref (for u_ref).

    The supply rate is co-integrated as an extra state, and the report holds
    max over t1 < t2 of H~(t2) - H~(t1) - (supply(t2) - supply(t1)).
    """
    u = as_vector(u, plant.n, "u")
    u_ref = as_vector(u_ref, plant.n, "u_ref")
    chart = AngleChart(plant.topology)
    x0 = perturb_state(chart, x_ref, perturbation, np.random.default_rng(seed))
    y_ref = port_variables(x_ref, u_ref, plant).y
    u_tilde = u - u_ref

    def rhs(_t, w):
        dx, y = ph_rhs(w[:-1], u, plant.ph, plant.gradient)
        return np.append(dx, np.dot(y - y_ref, u_tilde))

    config = IntegratorConfig(method="rk45", dt=sample_dt, t_end=t_end, rtol=rtol, atol=atol)
    traj = integrate(rhs, np.append(x0, 0.0), config)
    h_bar = np.array([shifted_hamiltonian(w[:-1], x_ref, plant.topology, plant.machines) for w in traj.x])
    supply = traj.x[:, -1]

    budget = h_bar - supply
    worst = -np.inf
    for j in range(1, budget.shape[0]):
        worst = max(worst, float(budget[j] - np.min(budget[:j])))
    return PassivityReport(t=traj.t, h_shifted=h_bar, supply=supply, max_violation=worst)


# ---------------- BASIN PROBES ----------------


@dataclass(frozen=True)
class BasinProbe:
    magnitude: float
    converged: bool
    final_max_omega: float
    error: Optional[str] = None

    def to_dict(self) -> Dict:
        return {
            "magnitude": self.magnitude,
            "converged": self.converged,
            "final_max_omega": self.final_max_omega,
            "error": self.error,
        }


def probe_basin(setup: SimulationSetup, magnitudes: Sequence[float], seed: int = 0) -> List[BasinProbe]:
    """Converged yes/no for perturbations of growing size along one seeded direction."""
    loop = setup.loop
    steady = solve_closed_loop_equilibrium(loop, setup.p_d, config=setup.newton)
    if not steady.success:
        raise SteadyStateError(f"{setup.name}: steady state not found ({steady.message})")
    chart = AngleChart(loop.plant.topology, extra=loop.controller.n)

    probes: List[BasinProbe] = []
    for magnitude in magnitudes:
        z0 = perturb_state(chart, steady.z, float(magnitude), np.random.default_rng(seed))
        try:
            traj = integrate(lambda t, z: closed_loop_rhs(z, setup.p_d, loop), z0, setup.integrator)
        except IntegrationError as exc:
            probes.append(BasinProbe(float(magnitude), False, float("nan"), str(exc)))
            continue
        x_end, vartheta_end = loop.split(traj.final)
        report = verify_steady_state(x_end, vartheta_end, setup.p_d, loop, setup.verify_tol)
        probes.append(BasinProbe(float(magnitude), report.passed, report.check("frequency").value))
        debug("basin", f"scenario={setup.name} magnitude={magnitude} converged={report.passed}")
    return probes


# ---------------- BATCH ----------------


@dataclass(frozen=True, eq=False)
class BatchOutcome:
    name: str
    status: str  # ok | failed | timeout
    runtime_seconds: float
    result: Any = None
    error: Optional[str] = None


async def run_batch(
    setups: Sequence[SimulationSetup],
    runner: Callable[[SimulationSetup], Any] = run_scenario,
    max_concurrency: int = MAX_CONCURRENCY,
    timeout: float = SCENARIO_TIMEOUT_SECONDS,
) -> List[BatchOutcome]:
    """Run independent scenarios on worker threads; one failure never stops the rest."""
    semaphore = asyncio.Semaphore(max(1, max_concurrency))

    async def _one(setup: SimulationSetup) -> BatchOutcome:
        async with semaphore:
            start = time.perf_counter()
            log("batch", f"scenario={setup.name} action=START")
            result, error, status = None, None, "ok"
            try:
                result = await asyncio.wait_for(asyncio.to_thread(runner, setup), timeout=timeout)
            except asyncio.TimeoutError:
                status, error = "timeout", f"timed out after {timeout}s"
            except Exception as exc:
                status, error = "failed", f"{type(exc).__name__}: {exc}"
            runtime = time.perf_counter() - start
            log("batch", f"scenario={setup.name} action=END status={status} runtime={runtime:.2f}s")
            return BatchOutcome(setup.name, status, runtime, result, error)

    return list(await asyncio.gather(*(_one(s) for s in setups)))
