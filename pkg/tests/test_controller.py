import numpy as np
import pytest

from conftest import random_edges, random_plant, random_state
from grid.controller import (
    ControllerState,
    assemble_closed_loop,
    build_controller,
    check_cost_matrix,
    closed_loop_hamiltonian,
    closed_loop_rhs,
    composed_rhs,
    controller_output,
    controller_rhs,
    kkt_residual,
    optimal_dispatch,
    solve_kkt,
    verify_steady_state,
)
from grid.dynamics import build_plant
from grid.energy import stack_machines
from grid.machine_presets import preset_params
from grid.network_model import CommEdge, build_comm_laplacian, build_topology
from grid.shared import DimensionError, ParameterError
from grid.simulation import solve_closed_loop_equilibrium


def _random_cost(rng, n, diagonal):
    if diagonal:
        return np.diag(rng.uniform(0.5, 3.0, n))
    a = rng.normal(size=(n, n))
    return a @ a.T / n + rng.uniform(0.5, 2.0) * np.eye(n)


def _projected_gradient(Q, p_d, iterations=20000):
    """Minimise 1/2 P^T Q P over 1^T P = 1^T P_d by projected gradient descent."""
    n = Q.shape[0]
    proj = np.eye(n) - np.ones((n, n)) / n
    step = 1.0 / np.linalg.eigvalsh(Q)[-1]
    p = np.full(n, np.sum(p_d) / n)
    for _ in range(iterations):
        nxt = p - step * (proj @ (Q @ p))
        if np.max(np.abs(nxt - p)) < 1e-16:
            return nxt
        p = nxt
    return p


def _comm_ring(n):
    if n == 2:
        return build_comm_laplacian(2, [CommEdge(1, 2)])
    return build_comm_laplacian(n, [CommEdge(k, k % n + 1) for k in range(1, n + 1)])


def test_dispatch_example():
    solution = optimal_dispatch(np.diag([1.0, 2.0]), [1.0, 2.0])
    assert solution.marginal_cost == pytest.approx(2.0)
    np.testing.assert_allclose(solution.p_m, [2.0, 1.0])
    payload = solution.to_dict([1.0, 2.0])
    assert payload["lambda"] == pytest.approx(2.0)
    assert payload["mismatch"] == pytest.approx(0.0, abs=1e-12)


def test_dispatch_identity_cost_splits_uniformly(rng):
    p_d = rng.uniform(0.0, 1.0, 5)
    solution = optimal_dispatch(np.eye(5), p_d)
    np.testing.assert_allclose(solution.p_m, np.full(5, p_d.sum() / 5))


def test_dispatch_zero_demand():
    solution = optimal_dispatch(np.diag([1.0, 4.0, 2.0]), np.zeros(3))
    assert solution.marginal_cost == 0.0
    np.testing.assert_array_equal(solution.p_m, 0.0)


def test_dispatch_single_machine_carries_load():
    solution = optimal_dispatch([[2.5]], [0.7])
    np.testing.assert_allclose(solution.p_m, [0.7])


@pytest.mark.parametrize("diagonal", [True, False])
def test_dispatch_matches_projected_gradient(rng, diagonal):
    for n in range(1, 11):
        Q = _random_cost(rng, n, diagonal)
        p_d = rng.uniform(0.0, 1.0, n)
        solution = optimal_dispatch(Q, p_d)
        np.testing.assert_allclose(solution.p_m, _projected_gradient(Q, p_d), atol=1e-10)
        assert abs(solution.mismatch(p_d)) < 1e-12
        np.testing.assert_allclose(solution.p_m, np.linalg.solve(Q, np.ones(n)) * solution.marginal_cost, atol=1e-12)


def test_kkt_block_system_agrees(rng):
    Q = _random_cost(rng, 6, diagonal=False)
    p_d = rng.uniform(0.0, 1.0, 6)
    closed_form = optimal_dispatch(Q, p_d)
    block = solve_kkt(Q, p_d)
    np.testing.assert_allclose(block.p_m, closed_form.p_m, atol=1e-12)
    assert block.marginal_cost == pytest.approx(closed_form.marginal_cost, abs=1e-12)
    residual = kkt_residual(Q, p_d, closed_form)
    assert residual.stationarity < 1e-12
    assert residual.feasibility < 1e-12


@pytest.mark.parametrize(
    "Q, error",
    [
        (np.array([[1.0, 2.0], [2.0, 1.0]]), ParameterError),
        (np.array([[1.0, 0.5], [0.0, 1.0]]), ParameterError),
        (np.zeros((2, 2)), ParameterError),
        (np.ones((2, 3)), DimensionError),
    ],
)
def test_cost_matrix_rejected(Q, error):
    with pytest.raises(error):
        check_cost_matrix(Q)


def test_build_controller_rejects_nonpositive_gains():
    comm = _comm_ring(2)
    with pytest.raises(ParameterError, match="controller.K\\[1\\]"):
        build_controller(np.eye(2), [1.0, 1.0], [2.0, 0.0], comm)
    with pytest.raises(ParameterError, match="controller.T\\[0\\]"):
        build_controller(np.eye(2), [-1.0, 1.0], [2.0, 2.0], comm)


def test_controller_output_examples():
    config = build_controller([[1.0]], [1.0], [2.0], build_comm_laplacian(1, []))
    assert controller_output(config, [3.0], [0.1])[0] == pytest.approx(2.8)

    config = build_controller(np.diag([1.0, 2.0]), [2.0, 1.0], [2.0, 2.0], _comm_ring(2))
    np.testing.assert_allclose(controller_output(config, [2.0, 3.0], [0.0, 0.0]), [1.0, 1.5])
    np.testing.assert_array_equal(controller_output(config, [0.0, 0.0], [0.0, 0.0]), 0.0)


def test_controller_rhs_examples():
    config = build_controller(np.eye(2), [1.0, 1.0], [2.0, 2.0], _comm_ring(2))
    np.testing.assert_allclose(controller_rhs(config, [1.0, 2.0], [0.0, 0.0]), [1.0, -1.0])
    np.testing.assert_allclose(controller_rhs(config, [0.4, 0.4], [0.0, 0.0]), 0.0, atol=1e-15)
    np.testing.assert_allclose(controller_rhs(config, [0.4, 0.4], [0.1, -0.1]), [-0.1, 0.1], atol=1e-15)


def test_consensus_is_invariant(rng):
    n = 6
    edges = [CommEdge(e.positive_end, e.negative_end, rng.uniform(0.5, 2.0)) for e in random_edges(rng, n)]
    T = rng.uniform(0.5, 2.0, n)
    config = build_controller(_random_cost(rng, n, False), T, np.ones(n), build_comm_laplacian(n, edges))
    vartheta = T * 0.37
    np.testing.assert_allclose(controller_rhs(config, vartheta, np.zeros(n)), 0.0, atol=1e-14)


def test_controller_state_energy():
    config = build_controller(np.eye(2), [2.0, 0.5], [1.0, 1.0], _comm_ring(2))
    state = ControllerState(np.array([2.0, 1.0]))
    np.testing.assert_allclose(state.theta(config), [1.0, 2.0])
    assert state.energy(config) == pytest.approx(0.5 * (4.0 / 2.0 + 1.0 / 0.5))


def _random_loop(rng, n):
    plant = random_plant(rng, n)
    T = rng.uniform(0.5, 2.0, n)
    K = rng.uniform(0.5, 3.0, n)
    controller = build_controller(_random_cost(rng, n, False), T, K, _comm_ring(n))
    return assemble_closed_loop(plant, controller)


def test_closed_loop_equals_composition(rng):
    for n in (2, 3, 5):
        loop = _random_loop(rng, n)
        for _ in range(50):
            z = loop.join(random_state(rng, loop.plant.topology), rng.normal(size=n))
            p_d = rng.uniform(0.0, 1.0, n)
            np.testing.assert_allclose(
                closed_loop_rhs(z, p_d, loop), composed_rhs(z, p_d, loop), rtol=1e-12, atol=1e-12
            )


def test_closed_loop_structure(rng):
    loop = _random_loop(rng, 4)
    np.testing.assert_array_equal(loop.J + loop.J.T, 0.0)
    assert np.linalg.eigvalsh(loop.R)[0] >= -1e-12


def test_closed_loop_rejects_mismatched_controller(rng):
    plant = random_plant(rng, 3)
    controller = build_controller(np.eye(2), [1.0, 1.0], [1.0, 1.0], _comm_ring(2))
    with pytest.raises(DimensionError):
        assemble_closed_loop(plant, controller)


def test_closed_loop_hamiltonian_adds_controller_energy(rng):
    loop = _random_loop(rng, 3)
    x = random_state(rng, loop.plant.topology)
    vartheta = rng.normal(size=3)
    expected = loop.plant.hamiltonian(x) + 0.5 * np.sum(vartheta ** 2 / loop.controller.T)
    assert closed_loop_hamiltonian(loop.join(x, vartheta), loop) == pytest.approx(expected, rel=1e-14)


@pytest.fixture
def two_machine_loop(two_machine_plant):
    controller = build_controller(np.diag([1.0, 2.0]), [1.0, 1.0], [2.0, 2.0], _comm_ring(2))
    return assemble_closed_loop(two_machine_plant, controller)


def test_steady_state_passes_verification(two_machine_loop):
    p_d = np.array([0.1, 0.1])
    steady = solve_closed_loop_equilibrium(two_machine_loop, p_d)
    assert steady.success
    report = verify_steady_state(steady.x, steady.vartheta, p_d, two_machine_loop)
    assert report.passed, report.failed()
    assert report.marginal_cost == pytest.approx(0.2 / 1.5)
    assert report.consensus_spread < 1e-9
    np.testing.assert_allclose(closed_loop_rhs(steady.z, p_d, two_machine_loop), 0.0, atol=1e-10)


def test_frequency_perturbation_fails_verification(two_machine_loop):
    p_d = np.array([0.1, 0.1])
    steady = solve_closed_loop_equilibrium(two_machine_loop, p_d)
    x = steady.x.copy()
    layout = two_machine_loop.plant.layout
    x[layout.p] += 1e-3 * two_machine_loop.plant.machines.m
    report = verify_steady_state(x, steady.vartheta, p_d, two_machine_loop)
    assert not report.passed
    assert not report.check("frequency").passed
    assert report.check("consensus").passed
    assert report.check("voltage_gradient").passed
    assert "frequency" in report.failed()


def test_verification_report_shape(two_machine_loop):
    p_d = np.array([0.1, 0.1])
    steady = solve_closed_loop_equilibrium(two_machine_loop, p_d)
    payload = verify_steady_state(steady.x, steady.vartheta, p_d, two_machine_loop).to_dict()
    assert [c["name"] for c in payload["checks"]] == [
        "rhs_residual",
        "frequency",
        "consensus",
        "dispatch",
        "voltage_gradient",
    ]
    with pytest.raises(KeyError):
        verify_steady_state(steady.x, steady.vartheta, p_d, two_machine_loop).check("nope")


def test_single_machine_loop():
    machines = stack_machines([preset_params("round_rotor")])
    topology = build_topology(1, [], machines.xdpp)
    controller = build_controller([[1.0]], [1.0], [2.0], build_comm_laplacian(1, []))
    loop = assemble_closed_loop(build_plant(topology, machines), controller)
    steady = solve_closed_loop_equilibrium(loop, [0.5])
    assert steady.success
    np.testing.assert_allclose(loop.mechanical_power(steady.z), [0.5], atol=1e-9)
