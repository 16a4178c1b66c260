"""
Swing dynamics and closed loop test suite.

Groups:
 1. Swing equation right-hand side
 2. RK4 subsystem step against the analytic single machine
 3. Coupling output, nominal prediction and neighbor aggregation
 4. Steady-state input and controller
 5. Closed-loop simulation: equilibrium, nominal tracking, attacks, export
"""

import math

import numpy as np
import pytest

from attackid.modules.dynamics import ClosedLoop, SystemState, combine_neighbor_nominals, controller_step, \
    couple, predict_nominal, rk4_step, simulate, step_subsystem, steady_state_input, swing_rhs
from attackid.modules.network import network_from_dict
from attackid.utils.errors import DimensionError

from conftest import single_machine_dict


def _two_bus(k=1.0, theta0=(0.0, 0.0), m=(1.0, 2.0)):
    return network_from_dict({
        "buses": [{"id": i + 1, "m": m[i], "d": 1.0, "V": 1.0, "kind": "generator",
                   "u_min": -2.0, "u_max": 2.0, "theta0": theta0[i]} for i in range(2)],
        "lines": [{"i": 1, "j": 2, "b": k}],
        "partition": [{"name": "A", "members": [1]}, {"name": "B", "members": [2]}],
    })


# ── Group 1: right-hand side ─────────────────────────────────────────────────

def test_rhs_isolated_equilibrium(single_machine):
    theta_dot, omega_dot = swing_rhs(single_machine, [0.0], [0.0], [0.0])
    assert theta_dot[0] == 0.0 and omega_dot[0] == 0.0


def test_rhs_isolated_damping(single_machine):
    _, omega_dot = swing_rhs(single_machine, [0.0], [4.0], [0.0])
    assert omega_dot[0] == pytest.approx(-2.0)


def test_rhs_two_bus_power_flow():
    model = _two_bus(k=1.0, m=(1.0, 2.0))
    _, omega_dot = swing_rhs(model, [math.pi / 2, 0.0], [0.0, 0.0], [0.0, 0.0])
    np.testing.assert_allclose(omega_dot, [-1.0, 0.5])


def test_rhs_shape_mismatch(single_machine):
    with pytest.raises(DimensionError):
        swing_rhs(single_machine, [0.0, 1.0], [0.0], [0.0])


# ── Group 2: RK4 ─────────────────────────────────────────────────────────────

def _machine_error(dt, steps, m=1.0, d=1.0, omega0=1.0):
    model = network_from_dict(single_machine_dict(m=m, d=d))
    x = np.array([0.0, omega0])
    for _ in range(steps):
        x = step_subsystem(model, 0, x, np.zeros(1), np.zeros(0), dt)
    t = dt * steps
    omega = omega0 * math.exp(-d * t / m)
    theta = omega0 * m / d * (1.0 - math.exp(-d * t / m))
    return max(abs(x[0] - theta), abs(x[1] - omega))


def test_rk4_single_step_matches_exponential_decay():
    model = network_from_dict(single_machine_dict(m=1.0, d=1.0))
    x = step_subsystem(model, 0, np.array([0.0, 1.0]), np.zeros(1), np.zeros(0), 0.1)
    assert x[1] == pytest.approx(0.9048374, abs=1e-7)
    assert _machine_error(0.1, 1) <= 1e-7


def test_rk4_fourth_order_convergence():
    coarse = _machine_error(0.1, 10)
    fine = _machine_error(0.05, 20)
    assert 12.0 <= coarse / fine <= 20.0


def test_zero_step_is_identity(two_bus):
    x = np.array([0.3, -0.2])
    np.testing.assert_array_equal(step_subsystem(two_bus, 0, x, np.array([0.1]), np.array([0.05]), 0.0), x)


def test_rk4_step_generic():
    y = rk4_step(lambda y: -y, np.array([1.0]), 0.1)
    assert y[0] == pytest.approx(math.exp(-0.1), abs=1e-7)


def test_equilibrium_step_is_fixed(ieee30):
    state = SystemState.steady(ieee30)
    u = steady_state_input(ieee30)
    frame = [couple(ieee30, s.index, state.subsystem(ieee30, s.index)) for s in ieee30.partition]
    for sub in ieee30.partition:
        x_I = state.subsystem(ieee30, sub.index)
        z_N = combine_neighbor_nominals(frame, sub.neighbors)
        x_next = step_subsystem(ieee30, sub.index, x_I, u[ieee30.member_indices(sub.index)], z_N, 0.1)
        np.testing.assert_allclose(x_next, x_I, atol=1e-12)


# ── Group 3: coupling and nominals ───────────────────────────────────────────

def test_couple_picks_coupling_buses_by_id(ieee30):
    index = ieee30.subsystem_of(1)
    theta = np.arange(1.0, 31.0)
    state = SystemState(theta=theta, omega=np.zeros(30))
    np.testing.assert_array_equal(couple(ieee30, index, state.subsystem(ieee30, index)), [2.0, 4.0, 5.0])


def test_couple_without_coupling_is_empty(single_machine):
    assert couple(single_machine, 0, np.array([0.1, 0.2])).shape == (0,)


def test_coupling_consistent_with_global_theta(ieee30, rng):
    state = SystemState(theta=rng.normal(size=30), omega=rng.normal(size=30))
    for sub in ieee30.partition:
        np.testing.assert_array_equal(couple(ieee30, sub.index, state.subsystem(ieee30, sub.index)),
                                      state.theta[ieee30.coupling_indices(sub.index)])


def test_combine_neighbor_nominals_orders_by_index():
    frames = {0: np.array([1.0]), 2: np.array([3.0, 4.0]), 1: np.array([2.0])}
    np.testing.assert_array_equal(combine_neighbor_nominals(frames, [2, 0]), [1.0, 3.0, 4.0])
    np.testing.assert_array_equal(combine_neighbor_nominals(frames, [1]), [2.0])
    assert combine_neighbor_nominals(frames, []).shape == (0,)


def test_combine_neighbor_nominals_missing_frame():
    with pytest.raises(DimensionError, match="neighbor 3"):
        combine_neighbor_nominals({0: np.zeros(1)}, [0, 3])


def test_predict_nominal_at_steady_state(ieee30):
    state = SystemState.steady(ieee30)
    u = steady_state_input(ieee30)
    frame = [couple(ieee30, s.index, state.subsystem(ieee30, s.index)) for s in ieee30.partition]
    for sub in ieee30.partition:
        zbar = predict_nominal(ieee30, sub.index, state.subsystem(ieee30, sub.index),
                               u[ieee30.member_indices(sub.index)],
                               combine_neighbor_nominals(frame, sub.neighbors))
        np.testing.assert_allclose(zbar, frame[sub.index], atol=1e-12)


# ── Group 4: steady input and controller ─────────────────────────────────────

def test_steady_state_input_isolated(single_machine):
    np.testing.assert_array_equal(steady_state_input(single_machine), [0.0])


def test_steady_state_input_two_bus():
    model = _two_bus(k=1.0, theta0=(math.pi / 6, 0.0))
    np.testing.assert_allclose(steady_state_input(model), [0.5, -0.5])


def test_steady_state_input_within_boxes(ieee30):
    u = steady_state_input(ieee30)
    assert np.all(u >= ieee30.u_min - 1e-9) and np.all(u <= ieee30.u_max + 1e-9)


def test_controller_at_rest_returns_steady_input(ieee30):
    u_ss = steady_state_input(ieee30)
    u = controller_step(ieee30, SystemState.steady(ieee30), u_ss, 0.5)
    np.testing.assert_allclose(u, np.clip(u_ss, ieee30.u_min, ieee30.u_max))


def test_controller_clips_to_box(two_bus):
    state = SystemState(theta=two_bus.theta0, omega=np.array([-100.0, 100.0]))
    u = controller_step(two_bus, state, steady_state_input(two_bus), 0.5)
    np.testing.assert_array_equal(u, [two_bus.u_max[0], two_bus.u_min[1]])


def test_controller_negative_gain(two_bus):
    with pytest.raises(ValueError):
        controller_step(two_bus, SystemState.steady(two_bus), np.zeros(2), -1.0)


def test_perturbed_frequency_decays(two_bus):
    x0 = SystemState(theta=two_bus.theta0, omega=np.array([0.05, -0.05]))
    trajectory = simulate(two_bus, x0=x0, steps=60)
    peaks = np.max(np.abs(np.asarray(trajectory.omega)).reshape(6, 10, 2), axis=(1, 2))
    assert np.all(np.diff(peaks) <= 0.0)


# ── Group 5: closed loop ─────────────────────────────────────────────────────

def test_equilibrium_persists_100_steps(ieee30):
    trajectory = simulate(ieee30, steps=100)
    assert np.max(np.abs(trajectory.omega)) <= 1e-9
    assert np.max(np.abs(trajectory.dz)) < 1e-9


def test_nominals_track_without_attack(two_bus):
    x0 = SystemState(theta=two_bus.theta0 + np.array([0.02, -0.01]), omega=np.array([0.01, 0.0]))
    trajectory = simulate(two_bus, x0=x0, steps=30)
    assert np.max(np.abs(trajectory.dz)) <= 1e-9


def test_single_step_attack_shows_next_step(ieee30):
    delta_a = np.zeros(30)
    delta_a[1] = 0.2
    trajectory = simulate(ieee30, schedule={5: delta_a}, steps=8)
    dz = np.asarray(trajectory.dz)
    assert np.max(np.abs(dz[:5])) < 1e-9
    offsets = ieee30.partition.z_offsets()
    attacked = ieee30.subsystem_of(2)
    assert np.max(np.abs(dz[5, offsets[attacked]:offsets[attacked + 1]])) > 1e-5


def test_unattacked_subsystems_reproduce_nominals(ieee30):
    loop = ClosedLoop(ieee30)
    delta_a = np.zeros(30)
    delta_a[1] = 0.3
    outcome = loop.advance(delta_a)
    attacked = ieee30.subsystem_of(2)
    for sub in ieee30.partition:
        if sub.index != attacked:
            assert np.array_equal(outcome.z[sub.index], outcome.zbar[sub.index])


def test_simulation_is_deterministic(two_bus):
    schedule = lambda k: np.array([0.1 * (k % 3), 0.0])
    first = simulate(two_bus, schedule=schedule, steps=20).to_frame()
    second = simulate(two_bus, schedule=schedule, steps=20).to_frame()
    assert first.equals(second)


def test_schedule_shape_checked(two_bus):
    with pytest.raises(DimensionError, match="step 0"):
        simulate(two_bus, schedule={0: np.zeros(3)}, steps=2)


def test_trajectory_frame_columns(two_bus):
    frame = simulate(two_bus, steps=3).to_frame()
    assert list(frame.columns) == ["t", "theta_1", "theta_2", "omega_1", "omega_2", "u_1", "u_2", "a_1", "a_2",
                                   "z_A_1", "z_B_2", "zbar_A_1", "zbar_B_2", "dz_A_1", "dz_B_2"]
    np.testing.assert_allclose(frame["t"], [0.1, 0.2, 0.3])
