import math

import numpy as np
import pytest

from racelab.dynamics import (
    Command,
    DelayLine,
    QuadParams,
    QuadState,
    SimulationDiverged,
    bodyrate_controller,
    derivative,
    drone_4s,
    drone_6s,
    load_drone,
    load_trajectory_csv,
    save_trajectory_csv,
    simulate_closed_loop,
    step_rk4,
)


@pytest.fixture
def params():
    return drone_4s()


def hover_state(params, z=2.0):
    return QuadState.hover([0.0, 0.0, z], params)


# ---------------------------------------------------------------- params

def test_drone_presets_match_published_numbers():
    p4 = drone_4s()
    assert p4.mass == 0.75
    assert 4 * p4.f_max == pytest.approx(34.0)
    assert p4.arm_length == 0.15
    assert np.allclose(p4.inertia, [2.50e-3, 2.51e-3, 4.32e-3])
    assert p4.motor_tau == 0.033
    p6 = drone_6s()
    assert p6.mass == 0.52
    assert 4 * p6.f_max == pytest.approx(63.76)
    assert p6.motor_tau == 0.020


def test_thrust_to_weight_invariant():
    for p in (drone_4s(), drone_6s()):
        actual = 4 * p.f_max / (p.mass * p.gravity)
        assert abs(actual - p.twr) <= 0.02 * p.twr
    with pytest.raises(ValueError):
        QuadParams(twr=10.0)  # way off for the 4s numbers


def test_params_validation():
    with pytest.raises(ValueError):
        QuadParams(mass=-1.0, twr=None)
    with pytest.raises(ValueError):
        QuadParams(inertia=(0.0, 1e-3, 1e-3), twr=None)
    with pytest.raises(ValueError):
        QuadParams(drag=(-0.1, 0.2, 0.2), twr=None)


def test_params_roundtrip(tmp_path):
    p = drone_6s()
    p.save(tmp_path / "drone.cfg")
    back = QuadParams.load(tmp_path / "drone.cfg")
    assert back == p
    assert load_drone("4s").name == "4s"


# ---------------------------------------------------------------- derivative

def test_hover_is_equilibrium(params):
    s = hover_state(params)
    d = derivative(s, np.full(4, params.hover_rotor_thrust), params)
    assert np.allclose(d.v_dot, 0.0, atol=1e-12)
    assert np.allclose(d.w_dot, 0.0, atol=1e-12)
    assert np.allclose(d.q_dot, 0.0, atol=1e-12)


def test_equal_thrusts_zero_torque(params):
    rng = np.random.default_rng(0)
    s = hover_state(params)
    s.w = rng.normal(size=3)  # torque from allocation only, gyroscopic handled below
    s.w = np.zeros(3)
    s.f = np.full(4, 3.3)
    d = derivative(s, s.f, params)
    assert np.allclose(d.w_dot, 0.0, atol=1e-12)


def test_free_fall(params):
    p = QuadParams(drag=(0.0, 0.0, 0.0))
    s = QuadState(p=np.array([0.0, 0, 5]), q=np.array([1.0, 0, 0, 0]),
                  v=np.zeros(3), w=np.zeros(3), f=np.zeros(4))
    d = derivative(s, np.zeros(4), p)
    assert np.allclose(d.v_dot, [0, 0, -9.81], atol=1e-12)


def test_drag_opposes_velocity(params):
    s = hover_state(params)
    s.v = np.array([10.0, 0.0, 0.0])
    d = derivative(s, np.full(4, params.hover_rotor_thrust), params)
    assert d.v_dot[0] < -1.0  # rotor drag decelerates


# ---------------------------------------------------------------- rk4

def test_free_fall_step_exact():
    p = QuadParams(drag=(0.0, 0.0, 0.0))
    s = QuadState(p=np.array([0.0, 0, 5]), q=np.array([1.0, 0, 0, 0]),
                  v=np.zeros(3), w=np.zeros(3), f=np.zeros(4))
    s1 = step_rk4(s, np.zeros(4), p, 0.01)
    assert s1.v[2] == pytest.approx(-0.0981, abs=1e-9)


def test_hover_fixed_point(params):
    s = hover_state(params)
    for dt in (0.001, 0.002, 0.01, 0.05):
        s1 = step_rk4(s, s.f, params, dt)
        assert np.allclose(s1.p, s.p, atol=1e-12)
        assert np.allclose(s1.v, s.v, atol=1e-12)
        assert np.allclose(s1.q, s.q, atol=1e-12)


def _motor_spinup_error(params, dt, horizon=0.2):
    s = QuadState(p=np.array([0.0, 0, 5]), q=np.array([1.0, 0, 0, 0]),
                  v=np.zeros(3), w=np.zeros(3), f=np.zeros(4))
    f_des = np.full(4, 6.0)
    n = round(horizon / dt)
    for _ in range(n):
        s = step_rk4(s, f_des, params, dt)
    exact = 6.0 * (1.0 - math.exp(-n * dt / params.motor_tau))
    return abs(s.f[0] - exact)


def test_motor_matches_first_order_closed_form(params):
    # default sim rate: closed-form agreement well under 1e-6 N
    assert _motor_spinup_error(params, 0.002, horizon=0.5) < 1e-6


def test_rk4_order_on_motor_spinup(params):
    ratio = _motor_spinup_error(params, 0.01) / _motor_spinup_error(params, 0.005)
    assert 12.0 <= ratio <= 20.0


def test_quaternion_norm_preserved(params):
    rng = np.random.default_rng(1)
    s = hover_state(params)
    s.w = np.array([3.0, -2.0, 1.5])
    for _ in range(200):
        f_des = rng.uniform(0, params.f_max, size=4)
        s = step_rk4(s, f_des, params, 0.002)
        assert abs(np.linalg.norm(s.q) - 1.0) < 1e-9


def test_energy_conservation_ballistic():
    # no drag, no thrust: translational energy is conserved by RK4
    p = QuadParams(drag=(0.0, 0.0, 0.0))
    s = QuadState(p=np.array([0.0, 0, 50.0]), q=np.array([1.0, 0, 0, 0]),
                  v=np.array([5.0, -3.0, 2.0]), w=np.zeros(3), f=np.zeros(4))

    def energy(st):
        return 0.5 * p.mass * st.v @ st.v + p.mass * p.gravity * st.p[2]

    e0 = energy(s)
    for _ in range(500):
        s = step_rk4(s, np.zeros(4), p, 0.002)
    assert abs(energy(s) - e0) / abs(e0) < 1e-6


def test_diverged_state_raises(params):
    s = hover_state(params)
    s.v = np.array([np.inf, 0.0, 0.0])
    with pytest.raises(SimulationDiverged):
        step_rk4(s, np.zeros(4), params, 0.01)


# ---------------------------------------------------------------- bodyrate controller

def test_hover_command_gives_hover_thrusts(params):
    s = hover_state(params)
    f = bodyrate_controller(s, Command.hover(params), params)
    assert np.allclose(f, params.hover_rotor_thrust, atol=1e-12)


def test_zero_collective_zeroes_rotors(params):
    s = hover_state(params)
    for w_des in ([5.0, 0, 0], [0, -7.0, 0], [0, 0, 9.0]):
        f = bodyrate_controller(s, Command(c=0.0, w_des=np.array(w_des)), params)
        assert np.allclose(f, 0.0, atol=1e-12)


def test_yaw_error_pattern(params):
    # positive yaw-rate error excites rotors in a (+,-,+,-) pattern; the
    # magnitude must match a direct numeric inversion of the allocation
    s = hover_state(params)
    cmd = Command(c=params.gravity, w_des=np.array([0.0, 0.0, 1.0]))
    f = bodyrate_controller(s, cmd, params)
    j = np.asarray(params.inertia)
    gains = np.asarray(params.rate_gains)
    eta = j * (gains * cmd.w_des)
    expected = np.linalg.solve(
        params.allocation_matrix(), np.concatenate([[params.mass * cmd.c], eta])
    )
    assert np.allclose(f, expected, atol=1e-12)
    delta = f - params.hover_rotor_thrust
    assert np.all(np.sign(delta) == [1, -1, 1, -1])


def test_allocation_round_trip(params):
    # unsaturated: allocation then forward map reproduces (T, eta)
    rng = np.random.default_rng(2)
    alloc = params.allocation_matrix()
    s = hover_state(params)
    for _ in range(100):
        s.w = rng.uniform(-1, 1, size=3)
        cmd = Command(c=rng.uniform(5.0, 15.0), w_des=rng.uniform(-1.0, 1.0, size=3))
        f = bodyrate_controller(s, cmd, params)
        if np.all(f > 1e-9) and np.all(f < params.f_max - 1e-9):
            t_eta = alloc @ f
            j = np.asarray(params.inertia)
            eta_des = j * (np.asarray(params.rate_gains) * (cmd.w_des - s.w)) + np.cross(
                s.w, j * s.w
            )
            assert abs(t_eta[0] - params.mass * cmd.c) < 1e-9
            assert np.allclose(t_eta[1:], eta_des, atol=1e-9)


def test_saturation_preserves_collective(params):
    # huge rate error: rotors saturate but total thrust is preserved
    s = hover_state(params)
    s.w = np.array([-8.0, 8.0, -8.0])
    cmd = Command(c=20.0, w_des=np.array([8.0, -8.0, 8.0]))
    f = bodyrate_controller(s, cmd, params)
    assert np.all(f >= -1e-12) and np.all(f <= params.f_max + 1e-12)
    assert f.sum() == pytest.approx(params.mass * cmd.c, rel=1e-9)


def test_thrust_scale_scales_setpoints(params):
    import dataclasses

    scaled = dataclasses.replace(params, thrust_scale=0.9)
    s = hover_state(params)
    cmd = Command(c=12.0, w_des=np.zeros(3))
    f_nom = bodyrate_controller(s, cmd, params)
    f_scaled = bodyrate_controller(s, cmd, scaled)
    assert np.allclose(f_scaled, 0.9 * f_nom, atol=1e-12)


# ---------------------------------------------------------------- delay line

def test_delay_line_fifo():
    hover = Command(c=9.81, w_des=np.zeros(3))
    step = Command(c=20.0, w_des=np.zeros(3))
    line = DelayLine(0.04, hover)
    line.push(0.0, step)
    assert line.at(0.0).c == hover.c
    assert line.at(0.039).c == hover.c
    assert line.at(0.040).c == step.c


def test_delay_line_zero_latency():
    hover = Command(c=9.81, w_des=np.zeros(3))
    line = DelayLine(0.0, hover)
    line.push(0.1, Command(c=1.0, w_des=np.zeros(3)))
    assert line.at(0.1).c == 1.0


def test_delay_line_rejects_out_of_order():
    line = DelayLine(0.01, Command(c=0.0, w_des=np.zeros(3)))
    line.push(0.1, Command(c=1.0, w_des=np.zeros(3)))
    with pytest.raises(ValueError):
        line.push(0.05, Command(c=2.0, w_des=np.zeros(3)))


# ---------------------------------------------------------------- closed loop

def test_closed_loop_hover_no_drift(params):
    s = hover_state(params)
    traj = simulate_closed_loop(
        s, lambda t, st: Command.hover(params), params, horizon=10.0
    )
    assert np.linalg.norm(traj[-1][1].p - s.p) < 1e-6


def test_closed_loop_delay_latency(params):
    # a thrust step commanded at t=0 must take effect exactly 40 ms later
    s = hover_state(params)
    delay = DelayLine(0.04, Command.hover(params))

    def policy(t, st):
        return Command(c=14.0, w_des=np.zeros(3))

    traj = simulate_closed_loop(s, policy, params, delay=delay,
                                horizon=0.2, sim_dt=0.002)
    times = np.array([t for t, _, _ in traj])
    vz = np.array([st.v[2] for _, st, _ in traj])
    # until the command matures the vehicle hovers
    assert np.all(np.abs(vz[times <= 0.04 - 1e-9]) < 1e-9)
    moved = times[np.abs(vz) > 1e-6]
    assert len(moved) and abs(moved[0] - 0.05) <= 0.01 + 1e-9


def test_closed_loop_determinism(params):
    s = hover_state(params)

    def wobble(t, st):
        return Command(c=9.81 + 2 * np.sin(5 * t), w_des=np.array([0.3, -0.2, 0.1]))

    t1 = simulate_closed_loop(s, wobble, params, horizon=1.0)
    t2 = simulate_closed_loop(s, wobble, params, horizon=1.0)
    for (ta, sa, _), (tb, sb, _) in zip(t1, t2):
        assert ta == tb
        assert np.array_equal(sa.as_row(), sb.as_row())


def test_closed_loop_rejects_bad_rates(params):
    s = hover_state(params)
    with pytest.raises(ValueError):
        simulate_closed_loop(s, lambda t, st: Command.hover(params), params,
                             ctrl_dt=0.01, sim_dt=0.003, horizon=0.1)


def test_trajectory_csv_roundtrip(tmp_path, params):
    s = hover_state(params)
    traj = simulate_closed_loop(s, lambda t, st: Command.hover(params), params, horizon=0.1)
    f = tmp_path / "traj.csv"
    save_trajectory_csv(f, traj)
    back = load_trajectory_csv(f)
    assert len(back) == len(traj)
    for (ta, sa, ca), (tb, sb, cb) in zip(traj, back):
        assert ta == pytest.approx(tb, abs=1e-9)
        assert np.allclose(sa.as_row(), sb.as_row(), atol=1e-6)
        assert (ca is None) == (cb is None)
