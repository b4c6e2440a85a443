import numpy as np
import pytest

from racelab.dynamics import drone_4s
from racelab.planner import build_path, speed_profile
from racelab.rl.env import RandomizationSpec
from racelab.rl.ppo import PpoConfig
from racelab.rl.train import TrainConfig, hover_bias, train, train_tracking
from racelab.track import load_track


def tiny_cfg(seed=0, steps=3000, **kw):
    return TrainConfig(
        total_steps=steps,
        n_envs=4,
        seed=seed,
        hidden=32,
        ppo=PpoConfig(batch_size=1000, minibatch_size=128, epochs=2),
        episode_cap_s=3.0,
        **kw,
    )


def test_hover_bias_produces_hover_thrust():
    params = drone_4s()
    frac = np.tanh(hover_bias(params))
    c = (frac + 1.0) * 0.5 * params.max_command
    assert c == pytest.approx(params.gravity, rel=1e-6)


def test_train_determinism():
    track = load_track("splits")
    params = drone_4s()
    curves = []
    weights = []
    for _ in range(2):
        res = train(track, params, tiny_cfg(seed=5))
        curves.append([row["mean_episode_reward"] for row in res.curve])
        weights.append(res.policy.mean(np.zeros((1, 36))).copy())
    assert np.array_equal(
        np.array(curves[0], dtype=float), np.array(curves[1], dtype=float), equal_nan=True
    )
    assert np.array_equal(weights[0], weights[1])


def test_train_returns_curve_rows():
    track = load_track("splits")
    params = drone_4s()
    res = train(track, params, tiny_cfg(seed=1))
    assert len(res.curve) == 3  # 3000 steps / 1000 batch
    for row in res.curve:
        assert {"iteration", "steps", "mean_episode_reward", "policy_loss",
                "value_loss", "entropy", "kl", "clip_fraction"} <= set(row)


def test_train_with_randomization_runs():
    track = load_track("splits")
    params = drone_4s()
    cfg = tiny_cfg(seed=2, randomization=RandomizationSpec())
    res = train(track, params, cfg)
    assert len(res.curve) == 3


def test_train_tracking_smoke():
    track = load_track("splits")
    params = drone_4s()
    ref = speed_profile(build_path(track), v_max=15.0, a_max=20.0)
    res = train_tracking(track, params, ref, tiny_cfg(seed=3))
    assert res.policy.obs_dim == 45
    assert len(res.curve) == 3


def test_curve_csv(tmp_path):
    track = load_track("splits")
    params = drone_4s()
    res = train(track, params, tiny_cfg(seed=4))
    f = tmp_path / "curve.csv"
    res.save_curve(f)
    lines = f.read_text().strip().splitlines()
    assert len(lines) == 4  # header + 3 rows
    assert lines[0].startswith("iteration,")
