"""Small MLPs with hand-rolled backprop, an Adam optimizer, the diagonal
Gaussian policy head, and running observation normalization.

Everything is plain float64 numpy; forward passes accept (batch, dim)
arrays. Parameters live in ordered dicts of arrays so optimizers and
checkpoints can treat networks uniformly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

LOG_STD_MIN = -5.0
LOG_STD_MAX = 1.0
LOG_2PI = float(np.log(2.0 * np.pi))


def orthogonal_init(rng: np.random.Generator, shape: tuple[int, int], gain: float) -> np.ndarray:
    a = rng.normal(size=shape)
    q, r = np.linalg.qr(a if shape[0] >= shape[1] else a.T)
    q = q * np.sign(np.diag(r))
    if shape[0] < shape[1]:
        q = q.T
    return np.ascontiguousarray(gain * q[: shape[0], : shape[1]])


class Mlp:
    """Fully connected net with tanh hidden layers and an optional tanh on
    the output head."""

    def __init__(self, sizes: list[int], rng: np.random.Generator,
                 out_gain: float = 0.01, tanh_out: bool = False):
        self.sizes = list(sizes)
        self.tanh_out = tanh_out
        self.params: dict[str, np.ndarray] = {}
        n_layers = len(sizes) - 1
        for i in range(n_layers):
            gain = np.sqrt(2.0) if i < n_layers - 1 else out_gain
            self.params[f"w{i}"] = orthogonal_init(rng, (sizes[i], sizes[i + 1]), gain)
            self.params[f"b{i}"] = np.zeros(sizes[i + 1])

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    def forward(self, x: np.ndarray):
        """Returns (output, cache) with cache holding the activations."""
        acts = [x]
        h = x
        for i in range(self.n_layers):
            z = h @ self.params[f"w{i}"] + self.params[f"b{i}"]
            last = i == self.n_layers - 1
            h = z if (last and not self.tanh_out) else np.tanh(z)
            acts.append(h)
        return h, acts

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, acts: list[np.ndarray], dout: np.ndarray) -> dict[str, np.ndarray]:
        """Gradients of a scalar loss given d(loss)/d(output)."""
        grads: dict[str, np.ndarray] = {}
        delta = dout
        for i in range(self.n_layers - 1, -1, -1):
            out = acts[i + 1]
            if i < self.n_layers - 1 or self.tanh_out:
                delta = delta * (1.0 - out * out)
            grads[f"w{i}"] = acts[i].T @ delta
            grads[f"b{i}"] = delta.sum(axis=0)
            if i > 0:
                delta = delta @ self.params[f"w{i}"].T
        return grads


class Adam:
    """Adam with bias correction; state keyed like the parameter dict."""

    def __init__(self, params: dict[str, np.ndarray], lr: float = 3e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for k, g in grads.items():
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (self.m[k] / b1c) / (np.sqrt(self.v[k] / b2c) + self.eps)


class GaussianPolicy:
    """Diagonal Gaussian over actions; the mean comes from a tanh-headed
    MLP (so means live in [-1, 1]^n), the log-std is a state-independent
    parameter vector clamped to [LOG_STD_MIN, LOG_STD_MAX]."""

    def __init__(self, obs_dim: int, act_dim: int, hidden: int,
                 rng: np.random.Generator, init_log_std=float(np.log(0.5))):
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.mlp = Mlp([obs_dim, hidden, hidden, act_dim], rng, out_gain=0.01, tanh_out=True)
        self.log_std = np.full(act_dim, init_log_std) if np.ndim(init_log_std) == 0 \
            else np.asarray(init_log_std, dtype=float).copy()

    def mean(self, obs: np.ndarray) -> np.ndarray:
        return self.mlp(obs)

    def act(self, obs: np.ndarray, rng: np.random.Generator):
        """Sample actions; returns (actions, log_probs, means)."""
        mu = self.mlp(obs)
        std = np.exp(self.log_std)
        actions = mu + std * rng.standard_normal(mu.shape)
        return actions, self.log_prob(actions, mu), mu

    def log_prob(self, actions: np.ndarray, mu: np.ndarray) -> np.ndarray:
        z = (actions - mu) / np.exp(self.log_std)
        return -0.5 * (z * z + LOG_2PI).sum(axis=-1) - self.log_std.sum()

    def entropy(self) -> float:
        return float(self.log_std.sum() + 0.5 * self.act_dim * (1.0 + LOG_2PI))

    def clamp_log_std(self) -> None:
        np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX, out=self.log_std)

    def all_params(self) -> dict[str, np.ndarray]:
        return {**self.mlp.params, "log_std": self.log_std}


class ValueNet:
    def __init__(self, obs_dim: int, hidden: int, rng: np.random.Generator):
        self.mlp = Mlp([obs_dim, hidden, hidden, 1], rng, out_gain=1.0, tanh_out=False)

    def __call__(self, obs: np.ndarray) -> np.ndarray:
        return self.mlp(obs)[:, 0]


class NormStats:
    """Running per-dimension mean/variance via parallel Welford merges."""

    def __init__(self, dim: int, eps: float = 1e-8):
        self.mean = np.zeros(dim)
        self.var = np.ones(dim)
        self.count = 0.0
        self.eps = eps

    def update(self, batch: np.ndarray) -> None:
        batch = np.atleast_2d(batch)
        n = len(batch)
        if n == 0:
            return
        b_mean = batch.mean(axis=0)
        b_var = batch.var(axis=0)
        if self.count == 0.0:
            self.mean = b_mean.copy()
            self.var = b_var.copy()
            self.count = float(n)
            return
        total = self.count + n
        delta = b_mean - self.mean
        m_a = self.var * self.count
        m_b = b_var * n
        m2 = m_a + m_b + delta * delta * (self.count * n / total)
        self.mean = self.mean + delta * (n / total)
        self.var = m2 / total
        self.count = total

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / np.sqrt(np.maximum(self.var, self.eps))


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_VERSION = 1


def save_checkpoint(path: str | Path, policy: GaussianPolicy, value: ValueNet,
                    norm: NormStats, config_hash: str = "", meta: dict | None = None) -> None:
    arrays = {}
    for k, v in policy.mlp.params.items():
        arrays[f"policy_{k}"] = v
    arrays["policy_log_std"] = policy.log_std
    for k, v in value.mlp.params.items():
        arrays[f"value_{k}"] = v
    arrays["norm_mean"] = norm.mean
    arrays["norm_var"] = norm.var
    arrays["norm_count"] = np.array([norm.count])
    header = {
        "version": CHECKPOINT_VERSION,
        "policy_sizes": policy.mlp.sizes,
        "value_sizes": value.mlp.sizes,
        "config_hash": config_hash,
        "meta": meta or {},
    }
    arrays["header"] = np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)
    np.savez(path, **arrays)


def load_checkpoint(path: str | Path):
    """Returns (policy, value, norm, header_dict)."""
    data = np.load(path)
    header = json.loads(bytes(data["header"]).decode())
    if header["version"] != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {header['version']}")
    sizes = header["policy_sizes"]
    rng = np.random.default_rng(0)
    policy = GaussianPolicy(sizes[0], sizes[-1], sizes[1], rng)
    for k in list(policy.mlp.params):
        policy.mlp.params[k] = data[f"policy_{k}"].copy()
    policy.log_std = data["policy_log_std"].copy()
    policy.clamp_log_std()
    vsizes = header["value_sizes"]
    value = ValueNet(vsizes[0], vsizes[1], rng)
    for k in list(value.mlp.params):
        value.mlp.params[k] = data[f"value_{k}"].copy()
    norm = NormStats(len(data["norm_mean"]))
    norm.mean = data["norm_mean"].copy()
    norm.var = data["norm_var"].copy()
    norm.count = float(data["norm_count"][0])
    return policy, value, norm, header
