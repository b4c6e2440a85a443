"""PPO training loops for the gate-progress and reference-tracking
objectives, with observation normalization, the init-state buffer, and
per-iteration curve logging."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..dynamics import QuadParams
from ..objectives import ProgressRewardSpec
from ..track import Track
from .env import (
    ACT_DIM,
    OBS_DIM,
    InitStateBuffer,
    RandomizationSpec,
    VecRaceEnv,
    VecTrackingEnv,
)
from .nets import GaussianPolicy, NormStats, ValueNet
from .ppo import PpoConfig, PpoOptimizer, RolloutBatch

# exploration noise floor: altitude integrates thrust noise directly, so the
# thrust dimension starts with far less jitter than the rate dimensions
INIT_ACTION_STD = (0.15, 0.5, 0.5, 0.5)


@dataclass
class TrainConfig:
    total_steps: int = 3_000_000
    n_envs: int = 100
    seed: int = 0
    hidden: int = 256
    ppo: PpoConfig = field(default_factory=PpoConfig)
    laps_required: int = 1
    episode_cap_s: float = 8.0
    ctrl_dt: float = 0.02
    delay_s: float = 0.04
    randomization: RandomizationSpec | None = None
    buffer_capacity: int = 8192
    buffer_mix: float = 0.5
    normalize_reward: bool = True


@dataclass
class TrainResult:
    policy: GaussianPolicy
    value: ValueNet
    norm: NormStats
    curve: list[dict]

    def save_curve(self, path: str | Path) -> None:
        if not self.curve:
            return
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(self.curve[0].keys()))
            writer.writeheader()
            writer.writerows(self.curve)


def _collect_and_update(env, policy, value, norm, optimizer, cfg, action_rng,
                        update_rng, obs_dim, log_fn=None):
    batch = min(cfg.ppo.batch_size, cfg.total_steps)
    iterations = max(1, cfg.total_steps // batch)
    t_len = max(1, batch // cfg.n_envs)
    n = cfg.n_envs
    curve = []
    obs_raw = env.reset_all()
    last_mean_reward = float("nan")
    # running scale of discounted returns; rewards are divided by its std so
    # sparse crash/finish spikes do not drown the dense progress term
    ret_scale = NormStats(1)
    ret_accum = np.zeros(n)
    for it in range(iterations):
        obs_buf = np.empty((t_len, n, obs_dim))
        act_buf = np.empty((t_len, n, ACT_DIM))
        logp_buf = np.empty((t_len, n))
        rew_buf = np.empty((t_len, n))
        val_buf = np.empty((t_len, n))
        done_buf = np.zeros((t_len, n), dtype=bool)
        ep_buf = np.empty((t_len, n), dtype=int)

        passes = 0
        for t in range(t_len):
            norm.update(obs_raw)
            obs_n = norm.normalize(obs_raw)
            actions, logp, _ = policy.act(obs_n, action_rng)
            values = value(obs_n)
            ep_buf[t] = env.episode_ids
            obs_raw, rewards, dones, info = env.step(actions)
            if "passed" in info:
                passes += int(info["passed"].sum())
            if cfg.normalize_reward:
                ret_accum = ret_accum * cfg.ppo.gamma + rewards
                ret_scale.update(ret_accum[:, None])
                rewards = rewards / np.sqrt(max(ret_scale.var[0], 1e-4))
                ret_accum[dones] = 0.0
            obs_buf[t] = obs_n
            act_buf[t] = actions
            logp_buf[t] = logp
            rew_buf[t] = rewards
            val_buf[t] = values
            done_buf[t] = dones

        bootstrap = value(norm.normalize(obs_raw))
        batch = RolloutBatch(
            obs=obs_buf, actions=act_buf, log_probs=logp_buf, rewards=rew_buf,
            values=val_buf, dones=done_buf, episode_ids=ep_buf,
            bootstrap_values=bootstrap,
        )
        stats = optimizer.update(batch, update_rng)
        returns, lengths = env.drain_episode_stats()
        if returns:
            last_mean_reward = float(np.mean(returns))
        row = {
            "iteration": it,
            "steps": (it + 1) * t_len * n,
            "mean_episode_reward": last_mean_reward,
            "gate_passes": passes,
            "episodes": len(returns),
            "mean_episode_len": float(np.mean(lengths)) if lengths else float("nan"),
            "policy_loss": stats.policy_loss,
            "value_loss": stats.value_loss,
            "entropy": stats.entropy,
            "kl": stats.kl,
            "clip_fraction": stats.clip_fraction,
        }
        curve.append(row)
        if log_fn is not None:
            log_fn(row)
        if stats.aborted:
            break
    return curve


def hover_bias(params: QuadParams) -> float:
    """Output-layer thrust bias putting the initial policy mean at hover
    (a tanh-zero mean would command ~half throttle and climb hard)."""
    frac = np.clip(2.0 * params.gravity / params.max_command - 1.0, -0.99, 0.99)
    return float(np.arctanh(frac))


def _bias_thrust_head(policy: GaussianPolicy, params: QuadParams) -> None:
    head = policy.mlp.n_layers - 1
    policy.mlp.params[f"b{head}"][0] = hover_bias(params)


def train(track: Track, params: QuadParams, cfg: TrainConfig,
          reward_spec: ProgressRewardSpec | None = None,
          log_fn=None) -> TrainResult:
    """Train a gate-progress racing policy with PPO on parallel simulators."""
    rng = np.random.default_rng(cfg.seed)
    policy = GaussianPolicy(OBS_DIM, ACT_DIM, cfg.hidden, rng,
                            init_log_std=np.log(INIT_ACTION_STD))
    _bias_thrust_head(policy, params)
    value = ValueNet(OBS_DIM, cfg.hidden, rng)
    norm = NormStats(OBS_DIM)
    optimizer = PpoOptimizer(policy, value, cfg.ppo)
    env = VecRaceEnv(
        track,
        params,
        n_envs=cfg.n_envs,
        seed=cfg.seed + 1,
        reward_spec=reward_spec,
        laps_required=cfg.laps_required,
        episode_cap_s=cfg.episode_cap_s,
        ctrl_dt=cfg.ctrl_dt,
        delay_s=cfg.delay_s,
        randomization=cfg.randomization,
        init_buffer=InitStateBuffer(cfg.buffer_capacity),
        buffer_mix=cfg.buffer_mix,
    )
    action_rng = np.random.default_rng(cfg.seed + 777)
    update_rng = np.random.default_rng(cfg.seed + 999)
    curve = _collect_and_update(env, policy, value, norm, optimizer, cfg,
                                action_rng, update_rng, OBS_DIM, log_fn)
    return TrainResult(policy=policy, value=value, norm=norm, curve=curve)


def train_tracking(track: Track, params: QuadParams, reference, cfg: TrainConfig,
                   q_weights=None, r_weights=None, log_fn=None) -> TrainResult:
    """Train a reference-tracking policy: same optimizer, negated quadratic
    cost as the per-step reward, reference-error block in the observation."""
    obs_dim = VecTrackingEnv.obs_dim
    rng = np.random.default_rng(cfg.seed)
    policy = GaussianPolicy(obs_dim, ACT_DIM, cfg.hidden, rng,
                            init_log_std=np.log(INIT_ACTION_STD))
    _bias_thrust_head(policy, params)
    value = ValueNet(obs_dim, cfg.hidden, rng)
    norm = NormStats(obs_dim)
    optimizer = PpoOptimizer(policy, value, cfg.ppo)
    env = VecTrackingEnv(
        track,
        params,
        reference,
        n_envs=cfg.n_envs,
        seed=cfg.seed + 1,
        q_weights=q_weights,
        r_weights=r_weights,
        ctrl_dt=cfg.ctrl_dt,
        delay_s=cfg.delay_s,
        randomization=cfg.randomization,
    )
    action_rng = np.random.default_rng(cfg.seed + 777)
    update_rng = np.random.default_rng(cfg.seed + 999)
    curve = _collect_and_update(env, policy, value, norm, optimizer, cfg,
                                action_rng, update_rng, obs_dim, log_fn)
    return TrainResult(policy=policy, value=value, norm=norm, curve=curve)
