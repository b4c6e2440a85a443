import numpy as np
import pytest

from racelab.dynamics import GRAVITY, drone_4s
from racelab.planner import ArcPath, ReferenceTrajectory, build_path, speed_profile, theta_tracker
from racelab.track import load_track


# ---------------------------------------------------------------- paths

def test_straight_segment_length():
    path = ArcPath(np.array([[0.0, 0, 1], [10.0, 0, 1]]))
    assert path.length == pytest.approx(10.0, abs=0.01)
    assert np.allclose(path.position(0.0), [0, 0, 1], atol=1e-9)
    assert np.allclose(path.position(10.0), [10, 0, 1], atol=1e-6)


def test_path_hits_every_gate_center():
    tr = load_track("splits")
    path = build_path(tr)
    assert np.allclose(path.position(0.0), tr.start_center, atol=1e-9)
    # control points sit at integer values of the spline parameter; walk the
    # arc-length table to find them and confirm the path interpolates
    centers = tr.gate_centers()
    thetas = [float(np.interp(i + 1, path._table_u, path._table_s)) for i in range(len(centers))]
    assert all(t2 > t1 for t1, t2 in zip(thetas, thetas[1:]))
    for theta, c in zip(thetas, centers):
        assert np.linalg.norm(path.position(theta) - c) < 1e-6


def test_multi_lap_path_repeats_gates():
    tr = load_track("splits").with_laps(2)
    path = build_path(tr)
    single = build_path(load_track("splits"))
    assert path.length > 1.8 * single.length


def test_unit_speed_parameterization():
    pts = np.array([[0.0, 0, 1], [5.0, 3, 2], [10.0, -2, 1.5], [15.0, 0, 1]])
    path = ArcPath(pts)
    thetas = np.linspace(0.1, path.length - 0.1, 200)
    eps = 1e-4
    speeds = np.linalg.norm(
        (path.position(thetas + eps) - path.position(thetas - eps)) / (2 * eps), axis=1
    )
    assert np.all(np.abs(speeds - 1.0) < 0.01)


def test_loop_curvature_finite_and_monotone_table():
    ang = np.linspace(0, 2 * np.pi, 5)[:-1]
    pts = np.stack([5 * np.cos(ang), 5 * np.sin(ang), np.ones(4)], axis=1)
    path = ArcPath(pts)
    assert np.all(np.diff(path._table_s) > 0)
    dense = np.linspace(0, path.length, 2000)
    k = path.curvature(dense)
    assert np.all(np.isfinite(k))
    assert k.max() < 10.0  # a few-meter loop cannot be near-singular


def test_coincident_points_rejected():
    with pytest.raises(ValueError):
        ArcPath(np.array([[0.0, 0, 1], [0.0, 0, 1], [5.0, 0, 1]]))


# ---------------------------------------------------------------- speed profile

def test_straight_line_bang_bang_time():
    # 100 m straight, v_max 20, a_max 10: accelerate 2 s, cruise 3 s, brake 2 s
    path = ArcPath(np.array([[0.0, 0, 1], [100.0, 0, 1]]))
    ref = speed_profile(path, v_max=20.0, a_max=10.0)
    assert ref.total_time == pytest.approx(7.0, abs=0.1)


def test_zero_curvature_ignores_centripetal_limit():
    path = ArcPath(np.array([[0.0, 0, 1], [50.0, 0, 1]]))
    a = speed_profile(path, v_max=15.0, a_max=8.0)
    b = speed_profile(path, v_max=15.0, a_max=8.0)  # deterministic too
    assert a.total_time == b.total_time
    # speed reaches v_max on the straight: the cruise phase exists
    speeds = np.linalg.norm(a.states[:, 7:10], axis=1)
    assert speeds.max() == pytest.approx(15.0, rel=1e-3)


def test_profile_satisfies_all_three_constraints():
    tr = load_track("splits")
    path = build_path(tr)
    v_max, a_max = 20.0, 25.0
    ref = speed_profile(path, v_max=v_max, a_max=a_max)
    speeds = np.linalg.norm(ref.states[:, 7:10], axis=1)
    assert np.all(speeds <= v_max + 1e-6)
    # tangential acceleration from the speed signal
    dv = np.gradient(speeds, ref.dt)
    assert np.all(np.abs(dv[1:-1]) <= a_max + 0.5)  # finite-difference slack
    # centripetal: v^2 * curvature at the matched arc position
    arc = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(ref.states[:, 0:3], axis=0), axis=1))])
    kappa = path.curvature(arc)
    assert np.all(speeds**2 * kappa <= a_max * 1.05 + 1e-6)


def test_lower_a_max_never_faster():
    path = build_path(load_track("splits"))
    times = [speed_profile(path, v_max=20.0, a_max=a).total_time for a in (30.0, 20.0, 12.0, 6.0)]
    assert all(t2 >= t1 - 1e-9 for t1, t2 in zip(times, times[1:]))


def test_splits_reference_time_bracket():
    # aggressive reference on the 4s drone lands in a plausible racing range
    p = drone_4s()
    tr = load_track("splits")
    path = build_path(tr)
    a_max = 0.8 * (p.twr - 1.0) * GRAVITY
    ref = speed_profile(path, v_max=25.0, a_max=a_max)
    assert 4.0 <= ref.total_time <= 6.5


def test_velocity_consistent_with_positions():
    path = build_path(load_track("splits"))
    ref = speed_profile(path, v_max=18.0, a_max=20.0)
    p = ref.states[:, 0:3]
    v = ref.states[:, 7:10]
    fd = (p[2:] - p[:-2]) / (2 * ref.dt)
    speed = np.linalg.norm(v[1:-1], axis=1)
    mask = speed > 1.0
    err = np.linalg.norm(fd[mask] - v[1:-1][mask], axis=1)
    assert np.all(err / speed[mask] < 0.10)


def test_reference_inputs_hover_at_rest():
    path = ArcPath(np.array([[0.0, 0, 1], [60.0, 0, 1]]))
    ref = speed_profile(path, v_max=10.0, a_max=5.0)
    # while cruising at constant speed the thrust only fights gravity
    mid = len(ref) // 2
    assert ref.inputs[mid, 0] == pytest.approx(GRAVITY, rel=0.05)
    assert np.allclose(ref.inputs[:, 1:], 0.0)


def test_reference_csv_roundtrip(tmp_path):
    path = build_path(load_track("marv"))
    ref = speed_profile(path, v_max=15.0, a_max=20.0)
    f = tmp_path / "ref.csv"
    ref.save_csv(f)
    back = ReferenceTrajectory.load_csv(f)
    assert back.dt == pytest.approx(ref.dt)
    assert np.allclose(back.states, ref.states, atol=1e-6)
    assert np.allclose(back.inputs, ref.inputs, atol=1e-6)


def test_sample_clamps_and_at_index_raises():
    path = ArcPath(np.array([[0.0, 0, 1], [10.0, 0, 1]]))
    ref = speed_profile(path, v_max=5.0, a_max=5.0)
    x_end, _ = ref.sample(1e9)
    assert np.allclose(x_end, ref.states[-1])
    with pytest.raises(IndexError):
        ref.at_index(len(ref))


# ---------------------------------------------------------------- theta tracker

def test_tracker_exact_on_path():
    path = build_path(load_track("splits"))
    theta = 12.34
    got = theta_tracker(path.position(theta), path, theta_prev=11.0)
    assert got == pytest.approx(theta, abs=1e-3)


def test_tracker_matches_grid_oracle():
    # oracle: plain 1 mm grid argmin over the same window
    rng = np.random.default_rng(0)
    path = build_path(load_track("splits"))
    for _ in range(20):
        theta_prev = rng.uniform(2.0, path.length - 6.0)
        p = path.position(theta_prev + rng.uniform(-0.5, 3.0)) + rng.normal(size=3) * 0.5
        got = theta_tracker(p, path, theta_prev)
        lo, hi = max(0.0, theta_prev - 1.0), min(path.length, theta_prev + 5.0)
        grid = np.arange(lo, hi + 5e-4, 1e-3)
        best = np.inf
        arg = lo
        for theta in grid:  # independent scalar loop
            d = np.linalg.norm(path.position(min(theta, path.length)) - p)
            if d < best - 1e-15:
                best = d
                arg = theta
        assert got == pytest.approx(arg, abs=1.5e-3)


def test_tracker_tie_break_smaller_theta():
    # point equidistant from two path points inside the window: keep smaller
    path = ArcPath(np.array([[0.0, 0, 1], [10.0, 0, 1]]))
    p = np.array([3.0, 5.0, 1.0])  # equidistant band is wide; exact argmin at 3.0
    got = theta_tracker(p, path, theta_prev=3.0)
    assert got == pytest.approx(3.0, abs=1e-3)
    # degenerate: a point on the axis normal plane midway between 2.0 and 4.0
    # has its window minimum at 3.0 exactly; shrink the window to force a tie
    got2 = theta_tracker(np.array([3.0005, 0.0, 3.0]), path, theta_prev=3.0,
                         back=0.001, forward=0.0)
    assert got2 <= 3.0005


def test_tracker_window_enforces_locality():
    # a closer branch outside the window must not capture the projection
    ang = np.linspace(0, np.pi, 8)
    pts = np.stack([6 * np.cos(ang), 6 * np.sin(ang), np.ones(8)], axis=1)
    path = ArcPath(pts)
    p = path.position(1.0) + np.array([0.0, 0.0, 0.2])
    got = theta_tracker(p, path, theta_prev=1.0)
    assert abs(got - 1.0) < 0.5
