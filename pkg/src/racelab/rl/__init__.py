"""From-scratch policy-gradient stack: MLP networks with manual backprop,
GAE, PPO with clipping, observation normalization, and the racing
environment used for training."""

from .nets import Adam, GaussianPolicy, Mlp, NormStats, ValueNet, load_checkpoint, save_checkpoint
from .ppo import PpoConfig, RolloutBatch, UpdateStats, gae, ppo_update

__all__ = [
    "Adam",
    "GaussianPolicy",
    "Mlp",
    "NormStats",
    "PpoConfig",
    "RolloutBatch",
    "UpdateStats",
    "ValueNet",
    "gae",
    "load_checkpoint",
    "ppo_update",
    "save_checkpoint",
]
