"""Value-landscape sweeps: fix a vehicle state, sweep its position over an
x-y grid, and evaluate either a trained critic or the negated optimal cost
of the tracking optimizer at each grid point."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from ..dynamics import QuadParams, QuadState
from ..mpc import ReducedQuadModel, TrackingProblem, solve
from ..planner import ReferenceTrajectory
from ..rl.env import OBS_DIM, TrackArrays, encode_observation_batch
from ..rl.nets import GaussianPolicy, NormStats, ValueNet
from ..track import Track


def critic_value_grid(value_net: ValueNet, norm: NormStats, anchor: QuadState,
                      target_gate: int, track: Track,
                      xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Critic value over positions (len(ys), len(xs)); all other state
    fields held at the anchor."""
    ta = TrackArrays.from_track(track)
    rows = []
    base = anchor.as_row()
    for y in ys:
        batch = np.tile(base, (len(xs), 1))
        batch[:, 0] = xs
        batch[:, 1] = y
        obs = encode_observation_batch(batch, np.full(len(xs), target_gate, dtype=int), ta)
        rows.append(value_net(norm.normalize(obs)))
    return np.array(rows)


def mpc_value_grid(reference: ReferenceTrajectory, t_anchor: float, anchor: QuadState,
                   params: QuadParams, xs: np.ndarray, ys: np.ndarray,
                   horizon: int = 20, dt: float = 0.05,
                   q_weights=None, r_weights=None) -> np.ndarray:
    """Negative optimal tracking cost over positions, Fig-style landscape
    for the receding-horizon method."""
    from ..objectives import DEFAULT_Q_WEIGHTS, DEFAULT_R_WEIGHTS

    qw = np.asarray(DEFAULT_Q_WEIGHTS if q_weights is None else q_weights, float)
    rw = np.asarray(DEFAULT_R_WEIGHTS if r_weights is None else r_weights, float)
    model = ReducedQuadModel(params, dt)
    n = horizon
    x_refs = np.empty((n + 1, 10))
    u_refs = np.empty((n, 4))
    for k in range(n + 1):
        x_ref, u_ref = reference.sample(t_anchor + k * dt)
        x_refs[k] = x_ref
        if k < n:
            u_refs[k] = u_ref
    u_lo = np.array([0.0, -params.w_max, -params.w_max, -params.w_max])
    u_hi = np.array([params.max_command, params.w_max, params.w_max, params.w_max])
    grid = np.empty((len(ys), len(xs)))
    base = np.concatenate([anchor.p, anchor.q, anchor.v])
    for i, y in enumerate(ys):
        for j, x in enumerate(xs):
            x0 = base.copy()
            x0[0] = x
            x0[1] = y
            problem = TrackingProblem(model, x_refs, u_refs, qw, rw, u_lo, u_hi)
            sol = solve(problem, x0, warm_start=u_refs.copy(), max_iter=15, tol=1e-5)
            grid[i, j] = -sol.cost
    return grid


def save_grid_csv(path: str | Path, xs: np.ndarray, ys: np.ndarray,
                  grid: np.ndarray, meta: str = "") -> None:
    with open(path, "w", newline="") as fh:
        if meta:
            fh.write(f"# {meta}\n")
        writer = csv.writer(fh)
        writer.writerow(["y\\x"] + [f"{x:.4g}" for x in xs])
        for y, row in zip(ys, grid):
            writer.writerow([f"{y:.4g}"] + [f"{v:.6g}" for v in row])
