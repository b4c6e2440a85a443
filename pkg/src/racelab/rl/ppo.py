"""Generalized advantage estimation and the clipped-surrogate PPO update.

Rollouts are stored time-major over parallel environments, shape
(T, n_envs, ...). GAE runs per environment column with episode-boundary
resets; the update standardizes advantages over the whole batch, then
takes several epochs of minibatch Adam steps on the clipped policy loss,
a value MSE loss, and an entropy bonus.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nets import LOG_2PI, Adam, GaussianPolicy, ValueNet


@dataclass
class PpoConfig:
    lr: float = 3e-4
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip: float = 0.2
    epochs: int = 10
    minibatch_size: int = 256
    entropy_coef: float = 0.005
    batch_size: int = 25000
    value_coef: float = 1.0   # value net is separate; a lower coef would
                              # only shrink its effective learning rate


@dataclass
class RolloutBatch:
    """On-policy transitions: normalized observations, raw Gaussian actions,
    their log-probs, rewards, value estimates, done flags, and episode ids,
    plus bootstrap values for the unfinished episode tails."""

    obs: np.ndarray            # (T, n, obs_dim)
    actions: np.ndarray        # (T, n, act_dim)
    log_probs: np.ndarray      # (T, n)
    rewards: np.ndarray        # (T, n)
    values: np.ndarray         # (T, n)
    dones: np.ndarray          # (T, n) bool; True if the episode ended at this step
    episode_ids: np.ndarray    # (T, n) int
    bootstrap_values: np.ndarray  # (n,)

    @property
    def size(self) -> int:
        return self.obs.shape[0] * self.obs.shape[1]

    def flat_obs(self) -> np.ndarray:
        return self.obs.reshape(-1, self.obs.shape[-1])

    def flat_actions(self) -> np.ndarray:
        return self.actions.reshape(-1, self.actions.shape[-1])


def gae(rewards: np.ndarray, values: np.ndarray, dones: np.ndarray,
        gamma: float, lam: float, bootstrap_values: np.ndarray):
    """Standard GAE over (T, n) arrays with per-episode resets.

    dones[t, i] marks that episode i ended at step t; the value beyond a
    done is not bootstrapped. bootstrap_values supply V(s_T) for episodes
    still running at the batch end. Returns (advantages, returns).
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    not_done = 1.0 - np.asarray(dones, dtype=float)
    t_len = len(rewards)
    adv = np.zeros_like(rewards)
    next_value = np.asarray(bootstrap_values, dtype=float)
    carry = np.zeros(rewards.shape[1]) if rewards.ndim == 2 else 0.0
    for t in range(t_len - 1, -1, -1):
        delta = rewards[t] + gamma * next_value * not_done[t] - values[t]
        carry = delta + gamma * lam * not_done[t] * carry
        adv[t] = carry
        next_value = values[t]
    return adv, adv + values


def standardize(adv: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    return (adv - adv.mean()) / (adv.std() + eps)


@dataclass
class UpdateStats:
    policy_loss: float
    value_loss: float
    entropy: float
    kl: float
    clip_fraction: float
    aborted: bool = False


class PpoOptimizer:
    """Owns the Adam state for one policy/value pair across updates."""

    def __init__(self, policy: GaussianPolicy, value: ValueNet, cfg: PpoConfig):
        self.policy = policy
        self.value = value
        self.cfg = cfg
        self.policy_opt = Adam({**policy.mlp.params, "log_std": policy.log_std}, lr=cfg.lr)
        self.value_opt = Adam(value.mlp.params, lr=cfg.lr)

    def update(self, batch: RolloutBatch, rng: np.random.Generator) -> UpdateStats:
        return ppo_update(self.policy, self.value, batch, self.cfg, rng,
                          self.policy_opt, self.value_opt)


def ppo_update(policy: GaussianPolicy, value: ValueNet, batch: RolloutBatch,
               cfg: PpoConfig, rng: np.random.Generator,
               policy_opt: Adam | None = None, value_opt: Adam | None = None) -> UpdateStats:
    """Clipped-surrogate PPO epoch loop over shuffled minibatches.

    Advantages are standardized over the whole batch; value targets are the
    GAE returns (unclipped MSE). Returns mean diagnostics; a non-finite
    loss aborts the update and reports aborted=True.
    """
    if policy_opt is None:
        policy_opt = Adam({**policy.mlp.params, "log_std": policy.log_std}, lr=cfg.lr)
    if value_opt is None:
        value_opt = Adam(value.mlp.params, lr=cfg.lr)

    adv, returns = gae(batch.rewards, batch.values, batch.dones,
                       cfg.gamma, cfg.gae_lambda, batch.bootstrap_values)
    adv = standardize(adv).reshape(-1)
    returns = returns.reshape(-1)
    obs = batch.flat_obs()
    actions = batch.flat_actions()
    old_logp = batch.log_probs.reshape(-1)

    n = len(obs)
    mb_size = min(max(1, cfg.minibatch_size), n)
    p_losses, v_losses, kls, clip_fracs = [], [], [], []

    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, mb_size):
            idx = order[start:start + mb_size]
            o = obs[idx]
            a = actions[idx]
            adv_mb = adv[idx]
            ret_mb = returns[idx]
            lp_old = old_logp[idx]
            m = len(idx)

            # policy forward
            mu, acts = policy.mlp.forward(o)
            std = np.exp(policy.log_std)
            z = (a - mu) / std
            lp_new = -0.5 * (z * z + LOG_2PI).sum(axis=1) - policy.log_std.sum()
            ratio = np.exp(lp_new - lp_old)
            unclipped = ratio * adv_mb
            clipped = np.clip(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip) * adv_mb
            surrogate = np.minimum(unclipped, clipped)
            policy_loss = -surrogate.mean()
            entropy = policy.entropy()
            loss_total = policy_loss - cfg.entropy_coef * entropy

            if not np.isfinite(loss_total):
                return UpdateStats(float("nan"), float("nan"), entropy,
                                   float("nan"), 0.0, aborted=True)

            # d loss / d lp_new: gradient flows through the surrogate branch
            # that attains the min (ties go to the unclipped branch)
            inside = (ratio >= 1.0 - cfg.clip) & (ratio <= 1.0 + cfg.clip)
            active = (unclipped <= clipped) | inside
            dlp = np.where(active, -adv_mb * ratio, 0.0) / m
            # through the Gaussian log-density
            dmu = dlp[:, None] * (z / std)
            dlogstd = (dlp[:, None] * (z * z - 1.0)).sum(axis=0)
            dlogstd -= cfg.entropy_coef  # entropy bonus: d(-c*H)/dlogstd = -c
            grads = policy.mlp.backward(acts, dmu)
            grads["log_std"] = dlogstd
            policy_opt.step({**policy.mlp.params, "log_std": policy.log_std}, grads)
            policy.clamp_log_std()

            # value update
            v_pred, v_acts = value.mlp.forward(o)
            v_pred = v_pred[:, 0]
            v_err = v_pred - ret_mb
            value_loss = float((v_err * v_err).mean())
            dv = (cfg.value_coef * 2.0 * v_err / m)[:, None]
            v_grads = value.mlp.backward(v_acts, dv)
            value_opt.step(value.mlp.params, v_grads)

            p_losses.append(float(policy_loss))
            v_losses.append(value_loss)
            kls.append(float(np.mean(lp_old - lp_new)))
            clip_fracs.append(float(np.mean(np.abs(ratio - 1.0) > cfg.clip)))

    return UpdateStats(
        policy_loss=float(np.mean(p_losses)),
        value_loss=float(np.mean(v_losses)),
        entropy=policy.entropy(),
        kl=float(np.mean(kls)),
        clip_fraction=float(np.mean(clip_fracs)),
    )
