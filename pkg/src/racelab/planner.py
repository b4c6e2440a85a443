"""Reference generation for the tracking and contouring controllers.

build_path fits a C1 Catmull-Rom spline through the start point and gate
centers and reparameterizes it by arc length; speed_profile turns a path
into a quasi-time-optimal point-mass reference via the classic
forward/backward pass under speed, tangential-acceleration, and
centripetal-acceleration limits.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dynamics import GRAVITY
from .quatmath import quat_from_two_vectors

DEFAULT_REF_DT = 0.01
DEFAULT_PROFILE_DS = 0.05


class ArcPath:
    """Piecewise-cubic path through waypoints, parameterized by arc length.

    position/tangent/curvature accept scalar or array arc lengths theta in
    [0, length]; values outside are clamped to the ends.
    """

    def __init__(self, points: np.ndarray, samples_per_segment: int = 256):
        points = np.asarray(points, dtype=float)
        if points.ndim != 2 or points.shape[1] != 3 or len(points) < 2:
            raise ValueError("need at least two 3-d control points")
        if np.any(np.linalg.norm(np.diff(points, axis=0), axis=1) < 1e-9):
            raise ValueError("coincident consecutive control points")
        self.points = points

        # Catmull-Rom tangents with mirrored phantom endpoints
        ext = np.vstack([2 * points[0] - points[1], points, 2 * points[-1] - points[-2]])
        tang = 0.5 * (ext[2:] - ext[:-2])
        p0, p1 = points[:-1], points[1:]
        m0, m1 = tang[:-1], tang[1:]
        # cubic coefficients per segment: a + b u + c u^2 + d u^3, u in [0,1]
        self._a = p0
        self._b = m0
        self._c = 3 * (p1 - p0) - 2 * m0 - m1
        self._d = 2 * (p0 - p1) + m0 + m1
        self.n_segments = len(points) - 1

        # arc-length lookup: global parameter (segment + local u) vs length
        k = max(8, samples_per_segment)
        u_local = np.linspace(0.0, 1.0, k, endpoint=False)
        u_global = (np.arange(self.n_segments)[:, None] + u_local[None, :]).ravel()
        u_global = np.append(u_global, float(self.n_segments))
        pts = self._eval_u(u_global)
        seg_len = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        s = np.concatenate([[0.0], np.cumsum(seg_len)])
        keep = np.concatenate([[True], seg_len > 1e-12])
        self._table_s = s[keep]
        self._table_u = u_global[keep]
        self.length = float(self._table_s[-1])

    def _eval_u(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        seg = np.clip(u.astype(int), 0, self.n_segments - 1)
        t = (u - seg)[..., None]
        return self._a[seg] + self._b[seg] * t + self._c[seg] * t**2 + self._d[seg] * t**3

    def _eval_du(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        seg = np.clip(u.astype(int), 0, self.n_segments - 1)
        t = (u - seg)[..., None]
        return self._b[seg] + 2 * self._c[seg] * t + 3 * self._d[seg] * t**2

    def _eval_ddu(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        seg = np.clip(u.astype(int), 0, self.n_segments - 1)
        t = (u - seg)[..., None]
        return 2 * self._c[seg] + 6 * self._d[seg] * t

    def _u_of(self, theta) -> np.ndarray:
        theta = np.clip(np.asarray(theta, dtype=float), 0.0, self.length)
        return np.interp(theta, self._table_s, self._table_u)

    def position(self, theta):
        out = self._eval_u(self._u_of(theta))
        return out if np.ndim(theta) else out.reshape(3)

    def tangent(self, theta):
        d = self._eval_du(self._u_of(theta))
        out = d / np.linalg.norm(d, axis=-1, keepdims=True)
        return out if np.ndim(theta) else out.reshape(3)

    def curvature(self, theta):
        u = self._u_of(theta)
        d1 = self._eval_du(u)
        d2 = self._eval_ddu(u)
        num = np.linalg.norm(np.cross(d1, d2), axis=-1)
        den = np.linalg.norm(d1, axis=-1) ** 3
        out = num / np.maximum(den, 1e-12)
        return out if np.ndim(theta) else float(out)


def build_path(track, samples_per_segment: int = 256) -> ArcPath:
    """Arc-length path from the track start through every gate center in
    order; with laps_required > 1 the gate loop is repeated per lap."""
    centers = track.gate_centers()
    pts = [np.asarray(track.start_center, dtype=float)]
    for _ in range(track.laps_required):
        pts.extend(centers)
    return ArcPath(np.array(pts), samples_per_segment)


@dataclass
class ReferenceTrajectory:
    """Time-indexed reference: reduced states [p, q, v] and inputs
    [c, wx, wy, wz] sampled every dt seconds."""

    dt: float
    states: np.ndarray   # (T, 10)
    inputs: np.ndarray   # (T, 4)
    total_time: float

    def __len__(self) -> int:
        return len(self.states)

    def at_index(self, k: int):
        """Reference pair at sample k; raises IndexError out of range."""
        if k < 0 or k >= len(self.states):
            raise IndexError(f"reference index {k} out of range [0, {len(self.states)})")
        return self.states[k], self.inputs[k]

    def index_at(self, t: float) -> int:
        """Nearest sample index for time t, clamped to the trajectory."""
        return int(np.clip(round(t / self.dt), 0, len(self.states) - 1))

    def sample(self, t: float):
        """Reference pair at time t, held at the ends."""
        return self.at_index(self.index_at(t))

    def save_csv(self, path: str | Path) -> None:
        cols = ["t", "px", "py", "pz", "qw", "qx", "qy", "qz",
                "vx", "vy", "vz", "u_c", "u_wx", "u_wy", "u_wz"]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(cols)
            for k in range(len(self.states)):
                row = [k * self.dt, *self.states[k], *self.inputs[k]]
                writer.writerow([f"{v:.9g}" for v in row])

    @classmethod
    def load_csv(cls, path: str | Path) -> "ReferenceTrajectory":
        data = np.genfromtxt(path, delimiter=",", skip_header=1)
        if data.ndim != 2 or data.shape[1] != 15:
            raise ValueError(f"{path}: expected 15 reference columns")
        t = data[:, 0]
        dt = float(t[1] - t[0]) if len(t) > 1 else DEFAULT_REF_DT
        return cls(dt=dt, states=data[:, 1:11], inputs=data[:, 11:15],
                   total_time=float(t[-1]))


def speed_profile(
    path: ArcPath,
    v_max: float,
    a_max: float,
    dt: float = DEFAULT_REF_DT,
    ds: float = DEFAULT_PROFILE_DS,
    gravity: float = GRAVITY,
) -> ReferenceTrajectory:
    """Quasi-time-optimal point-mass reference along the path.

    Assigns each arc-length sample the largest speed satisfying
    v <= v_max, |dv/dt| <= a_max, and v^2 * curvature <= a_max (start and
    end at rest), then integrates to a uniform-dt trajectory. Inputs are
    the mass-normalized collective thrust matching the point-mass
    acceleration plus gravity, with zero bodyrate reference; the attitude
    reference tilts the body z-axis along the required thrust direction.
    """
    if v_max <= 0 or a_max <= 0:
        raise ValueError("v_max and a_max must be positive")
    n = max(int(np.ceil(path.length / ds)), 2) + 1
    s = np.linspace(0.0, path.length, n)
    dseg = np.diff(s)
    kappa = path.curvature(s)
    v_cap = np.minimum(v_max, np.sqrt(a_max / np.maximum(kappa, 1e-9)))

    v = np.zeros(n)
    for i in range(1, n):  # accelerate forward
        v[i] = min(v_cap[i], np.sqrt(v[i - 1] ** 2 + 2 * a_max * dseg[i - 1]))
    v[-1] = 0.0
    for i in range(n - 2, -1, -1):  # brake backward
        v[i] = min(v[i], np.sqrt(v[i + 1] ** 2 + 2 * a_max * dseg[i]))

    step_t = 2.0 * dseg / np.maximum(v[:-1] + v[1:], 1e-9)
    t = np.concatenate([[0.0], np.cumsum(step_t)])
    total_time = float(t[-1])

    # resample speed on the uniform time grid, then integrate arc position
    # from it so sampled positions and velocities stay mutually consistent
    t_grid = np.arange(0.0, total_time, dt)
    t_grid = np.append(t_grid, total_time)
    speed = np.interp(t_grid, t, v)
    s_grid = np.concatenate([[0.0], np.cumsum(0.5 * (speed[:-1] + speed[1:]) * np.diff(t_grid))])
    s_grid = np.minimum(s_grid, path.length)
    pos = path.position(s_grid)
    vel = speed[:, None] * path.tangent(s_grid)
    acc = np.gradient(vel, dt, axis=0)

    e3 = np.array([0.0, 0.0, 1.0])
    thrust_vec = acc + gravity * e3
    c = np.linalg.norm(thrust_vec, axis=1)
    states = np.empty((len(t_grid), 10))
    inputs = np.zeros((len(t_grid), 4))
    states[:, 0:3] = pos
    states[:, 7:10] = vel
    inputs[:, 0] = c
    for k in range(len(t_grid)):
        if c[k] > 1e-6:
            states[k, 3:7] = quat_from_two_vectors(e3, thrust_vec[k] / c[k])
        else:
            states[k, 3:7] = np.array([1.0, 0.0, 0.0, 0.0])
    return ReferenceTrajectory(dt=dt, states=states, inputs=inputs, total_time=total_time)


def theta_tracker(
    p: np.ndarray,
    path: ArcPath,
    theta_prev: float,
    back: float = 1.0,
    forward: float = 5.0,
    resolution: float = 1e-3,
) -> float:
    """Local projection of p onto the path near theta_prev.

    Minimizes |p - position(theta)| over a grid in
    [theta_prev - back, theta_prev + forward] clipped to the path; ties
    resolve to the smaller theta.
    """
    lo = max(0.0, theta_prev - back)
    hi = min(path.length, theta_prev + forward)
    grid = np.arange(lo, hi + 0.5 * resolution, resolution)
    grid = np.minimum(grid, path.length)
    d = np.linalg.norm(path.position(grid) - np.asarray(p, dtype=float), axis=1)
    return float(grid[int(np.argmin(d))])
