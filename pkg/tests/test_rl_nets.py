import numpy as np
import pytest

from racelab.rl.nets import (
    Adam,
    GaussianPolicy,
    Mlp,
    NormStats,
    ValueNet,
    load_checkpoint,
    save_checkpoint,
)


def flat_params(params):
    return np.concatenate([v.ravel() for v in params.values()])


def set_flat(params, vec):
    i = 0
    for k, v in params.items():
        params[k] = vec[i:i + v.size].reshape(v.shape)
        i += v.size


# ---------------------------------------------------------------- MLP

def test_mlp_output_shape_and_range():
    rng = np.random.default_rng(0)
    net = Mlp([6, 16, 16, 3], rng, tanh_out=True)
    y = net(rng.normal(size=(10, 6)))
    assert y.shape == (10, 3)
    assert np.all(np.abs(y) <= 1.0)


def test_mlp_gradients_match_finite_differences():
    # scalar loss: sum(out * fixed weights); checks every parameter tensor
    rng = np.random.default_rng(1)
    for tanh_out in (False, True):
        net = Mlp([5, 8, 8, 3], rng, out_gain=0.7, tanh_out=tanh_out)
        x = rng.normal(size=(12, 5))
        wmix = rng.normal(size=(12, 3))

        def loss():
            return float((net(x) * wmix).sum())

        out, acts = net.forward(x)
        grads = net.backward(acts, wmix)
        eps = 1e-6
        for key in net.params:
            flat = net.params[key].ravel()
            gflat = grads[key].ravel()
            for idx in np.linspace(0, flat.size - 1, 7).astype(int):
                old = flat[idx]
                flat[idx] = old + eps
                up = loss()
                flat[idx] = old - eps
                dn = loss()
                flat[idx] = old
                fd = (up - dn) / (2 * eps)
                assert abs(gflat[idx] - fd) / max(abs(fd), 1e-3) < 1e-4


def test_policy_gradients_match_finite_differences():
    # loss: mean log-prob of fixed actions; checks mean head and log_std
    rng = np.random.default_rng(2)
    pol = GaussianPolicy(4, 2, 8, rng)
    obs = rng.normal(size=(9, 4))
    acts_fixed = rng.normal(size=(9, 2))

    def loss():
        mu = pol.mean(obs)
        return float(pol.log_prob(acts_fixed, mu).mean())

    mu, cache = pol.mlp.forward(obs)
    std = np.exp(pol.log_std)
    z = (acts_fixed - mu) / std
    dmu = (z / std) / len(obs)
    grads = pol.mlp.backward(cache, dmu)
    dlogstd = ((z * z - 1.0) / len(obs)).sum(axis=0)
    eps = 1e-6
    for key in pol.mlp.params:
        flat = pol.mlp.params[key].ravel()
        gflat = grads[key].ravel()
        for idx in np.linspace(0, flat.size - 1, 5).astype(int):
            old = flat[idx]
            flat[idx] = old + eps
            up = loss()
            flat[idx] = old - eps
            dn = loss()
            flat[idx] = old
            fd = (up - dn) / (2 * eps)
            assert abs(gflat[idx] - fd) / max(abs(fd), 1e-3) < 1e-4
    for d in range(2):
        old = pol.log_std[d]
        pol.log_std[d] = old + eps
        up = loss()
        pol.log_std[d] = old - eps
        dn = loss()
        pol.log_std[d] = old
        fd = (up - dn) / (2 * eps)
        assert abs(dlogstd[d] - fd) / max(abs(fd), 1e-3) < 1e-4


def test_value_net_scalar_output():
    rng = np.random.default_rng(3)
    v = ValueNet(7, 16, rng)
    out = v(rng.normal(size=(5, 7)))
    assert out.shape == (5,)


# ---------------------------------------------------------------- policy distribution

def test_log_prob_density_integrates_to_one():
    # 1-d slice: integrate the density of action dim 0 by quadrature
    rng = np.random.default_rng(4)
    pol = GaussianPolicy(3, 2, 8, rng)
    obs = rng.normal(size=(1, 3))
    mu = pol.mean(obs)[0]
    grid = np.linspace(-12, 12, 4001)
    da = grid[1] - grid[0]
    actions = np.stack([grid, np.full_like(grid, mu[1])], axis=1)
    logp = pol.log_prob(actions, np.tile(mu, (len(grid), 1)))
    # joint density over 2 dims; marginalize dim 1 analytically: at its mean
    # the dim-1 factor is 1/(sqrt(2 pi) sigma_1)
    sigma1 = np.exp(pol.log_std[1])
    marginal = np.exp(logp) * np.sqrt(2 * np.pi) * sigma1
    assert abs(marginal.sum() * da - 1.0) < 1e-3


def test_sampled_actions_have_finite_log_prob():
    rng = np.random.default_rng(5)
    pol = GaussianPolicy(3, 4, 8, rng)
    obs = rng.normal(size=(100, 3))
    actions, logp, mu = pol.act(obs, rng)
    assert np.all(np.isfinite(logp))
    assert np.all(np.abs(mu) <= 1.0)


def test_log_std_clamp():
    rng = np.random.default_rng(6)
    pol = GaussianPolicy(3, 2, 8, rng)
    pol.log_std[:] = [4.0, -9.0]
    pol.clamp_log_std()
    assert np.all(pol.log_std <= 1.0)
    assert np.all(pol.log_std >= -5.0)


# ---------------------------------------------------------------- Adam

def test_adam_minimizes_quadratic():
    params = {"w": np.array([5.0, -3.0])}
    opt = Adam(params, lr=0.05)
    for _ in range(500):
        grads = {"w": 2.0 * params["w"]}
        opt.step(params, grads)
    assert np.all(np.abs(params["w"]) < 1e-3)


# ---------------------------------------------------------------- NormStats

def test_normstats_matches_batch_statistics():
    # running (chunked) update must reproduce whole-dataset moments
    rng = np.random.default_rng(7)
    data = rng.normal(loc=3.0, scale=2.5, size=(1000, 6)) * rng.uniform(0.1, 4.0, size=6)
    stats = NormStats(6)
    for chunk in np.array_split(data, 13):
        stats.update(chunk)
    assert np.allclose(stats.mean, data.mean(axis=0), atol=1e-9)
    assert np.allclose(stats.var, data.var(axis=0), atol=1e-9)
    assert stats.count == 1000


def test_normstats_variance_floor():
    stats = NormStats(2)
    stats.update(np.ones((50, 2)))  # zero variance data
    z = stats.normalize(np.ones((3, 2)))
    assert np.all(np.isfinite(z))


# ---------------------------------------------------------------- checkpoints

def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(8)
    pol = GaussianPolicy(36, 4, 32, rng)
    val = ValueNet(36, 32, rng)
    stats = NormStats(36)
    stats.update(rng.normal(size=(100, 36)))
    f = tmp_path / "ckpt.npz"
    save_checkpoint(f, pol, val, stats, config_hash="abc123", meta={"track": "splits"})
    pol2, val2, stats2, header = load_checkpoint(f)
    assert header["config_hash"] == "abc123"
    assert header["meta"]["track"] == "splits"
    x = rng.normal(size=(5, 36))
    assert np.array_equal(pol.mean(x), pol2.mean(x))
    assert np.array_equal(val(x), val2(x))
    assert np.allclose(stats2.normalize(x), stats.normalize(x))
