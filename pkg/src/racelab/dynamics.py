"""Quadrotor rigid-body simulation.

The vehicle is a rigid body driven by four rotors with first-order thrust
lag and linear rotor drag. A proportional bodyrate loop plus a thrust/torque
allocator turns collective-thrust-and-bodyrate commands into per-rotor
thrust setpoints; RK4 integrates the full state. Commands can pass through
a FIFO delay line to model system latency.

All core math operates on batched state arrays of shape (n, 17) laid out as
[p(3), q(4), v(3), w(3), f(4)] so many vehicles integrate in lockstep; the
single-vehicle API wraps the batch of one.
"""

from __future__ import annotations

import configparser
import csv
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .quatmath import quat_mul, quat_normalize, quat_to_rot

GRAVITY = 9.81

# batched state layout
P = slice(0, 3)
Q = slice(3, 7)
V = slice(7, 10)
W = slice(10, 13)
F = slice(13, 17)
STATE_DIM = 17

# defaults for values the physical setup does not pin down
DEFAULT_KAPPA = 0.016          # yaw torque per unit rotor thrust, m
DEFAULT_DRAG = (0.26, 0.28, 0.42)   # diagonal rotor drag, 1/s
DEFAULT_W_MAX = 10.0           # bodyrate command limit per axis, rad/s
DEFAULT_RATE_GAINS = (20.0, 20.0, 8.0)  # inner-loop P gains, 1/s
DEFAULT_CTRL_DT = 0.01
DEFAULT_SIM_DT = 0.002


class SimulationDiverged(RuntimeError):
    """State became non-finite during integration."""


@dataclass
class QuadParams:
    """Physical constants of one drone configuration.

    inertia is the diagonal of the inertia tensor in kg m^2; f_max is the
    per-rotor thrust limit in N; motor_tau the first-order thrust lag in s;
    drag the diagonal rotor-drag coefficients in 1/s. thrust_scale scales
    the commanded thrust map (1.0 nominal, <1 models battery sag) and
    thrust_sag_rate optionally shrinks it further over time, fractional
    loss per second.
    """

    name: str = "4s"
    mass: float = 0.75
    inertia: tuple[float, float, float] = (2.50e-3, 2.51e-3, 4.32e-3)
    arm_length: float = 0.15
    kappa: float = DEFAULT_KAPPA
    f_max: float = 8.5
    motor_tau: float = 0.033
    drag: tuple[float, float, float] = DEFAULT_DRAG
    gravity: float = GRAVITY
    thrust_scale: float = 1.0
    thrust_sag_rate: float = 0.0
    twr: float | None = 4.62
    w_max: float = DEFAULT_W_MAX
    rate_gains: tuple[float, float, float] = DEFAULT_RATE_GAINS

    def __post_init__(self) -> None:
        if self.mass <= 0 or self.arm_length <= 0 or self.f_max <= 0 or self.motor_tau <= 0:
            raise ValueError("mass, arm_length, f_max, motor_tau must be positive")
        if any(j <= 0 for j in self.inertia):
            raise ValueError("inertia entries must be positive")
        if any(d < 0 for d in self.drag):
            raise ValueError("drag coefficients must be nonnegative")
        if self.twr is not None:
            actual = 4.0 * self.f_max / (self.mass * self.gravity)
            if abs(actual - self.twr) > 0.02 * self.twr:
                raise ValueError(
                    f"thrust-to-weight mismatch: 4*f_max/(m*g) = {actual:.3f}, "
                    f"configured {self.twr:.3f}"
                )

    @property
    def max_collective(self) -> float:
        """Largest deliverable mass-normalized thrust, m/s^2."""
        return 4.0 * self.f_max * self.thrust_scale / self.mass

    @property
    def max_command(self) -> float:
        """Upper end of the commanded-thrust map domain, m/s^2.

        Commands live in the nominal map domain; thrust_scale acts inside
        the motor map, so a controller need not know the true scale.
        """
        return 4.0 * self.f_max / self.mass

    @property
    def hover_rotor_thrust(self) -> float:
        return self.mass * self.gravity / 4.0

    def effective_thrust_scale(self, t: float) -> float:
        return self.thrust_scale * max(0.0, 1.0 - self.thrust_sag_rate * t)

    def allocation_matrix(self) -> np.ndarray:
        """Maps rotor thrusts to (total thrust N, torques eta)."""
        a = self.arm_length / np.sqrt(2.0)
        k = self.kappa
        return np.array(
            [
                [1.0, 1.0, 1.0, 1.0],
                [a, -a, -a, a],
                [-a, -a, a, a],
                [k, -k, k, -k],
            ]
        )

    def save(self, path: str | Path) -> None:
        cp = configparser.ConfigParser()
        cp["drone"] = {
            "name": self.name,
            "mass": repr(self.mass),
            "inertia": " ".join(repr(float(j)) for j in self.inertia),
            "arm_length": repr(self.arm_length),
            "kappa": repr(self.kappa),
            "f_max": repr(self.f_max),
            "motor_tau": repr(self.motor_tau),
            "drag": " ".join(repr(float(d)) for d in self.drag),
            "gravity": repr(self.gravity),
            "thrust_scale": repr(self.thrust_scale),
            "thrust_sag_rate": repr(self.thrust_sag_rate),
            "twr": "" if self.twr is None else repr(self.twr),
            "w_max": repr(self.w_max),
            "rate_gains": " ".join(repr(float(g)) for g in self.rate_gains),
        }
        with open(path, "w") as fh:
            cp.write(fh)

    @classmethod
    def load(cls, path: str | Path) -> "QuadParams":
        cp = configparser.ConfigParser()
        read = cp.read(path)
        if not read or "drone" not in cp:
            raise ValueError(f"{path}: not a drone config (missing [drone] section)")
        d = cp["drone"]
        try:
            return cls(
                name=d.get("name", "custom"),
                mass=float(d["mass"]),
                inertia=tuple(float(x) for x in d["inertia"].split()),
                arm_length=float(d["arm_length"]),
                kappa=float(d.get("kappa", str(DEFAULT_KAPPA))),
                f_max=float(d["f_max"]),
                motor_tau=float(d["motor_tau"]),
                drag=tuple(float(x) for x in d.get("drag", "0.26 0.28 0.42").split()),
                gravity=float(d.get("gravity", str(GRAVITY))),
                thrust_scale=float(d.get("thrust_scale", "1.0")),
                thrust_sag_rate=float(d.get("thrust_sag_rate", "0.0")),
                twr=float(d["twr"]) if d.get("twr") else None,
                w_max=float(d.get("w_max", str(DEFAULT_W_MAX))),
                rate_gains=tuple(
                    float(x) for x in d.get("rate_gains", "20 20 8").split()
                ),
            )
        except (KeyError, ValueError) as exc:
            raise ValueError(f"{path}: bad drone config: {exc}") from exc


def drone_4s() -> QuadParams:
    """Heavier 4-cell racing drone (TWR 4.62)."""
    return QuadParams()


def drone_6s() -> QuadParams:
    """Light 6-cell drone (TWR 12.45)."""
    return QuadParams(
        name="6s",
        mass=0.52,
        inertia=(1.37e-3, 1.34e-3, 2.45e-3),
        arm_length=0.11,
        f_max=63.76 / 4.0,
        motor_tau=0.020,
        twr=12.45,
    )


DRONE_PRESETS = {"4s": drone_4s, "6s": drone_6s}


def load_drone(name_or_path: str) -> QuadParams:
    if name_or_path in DRONE_PRESETS:
        return DRONE_PRESETS[name_or_path]()
    return QuadParams.load(name_or_path)


@dataclass
class QuadState:
    """Full vehicle state: world position/velocity, attitude quaternion
    (world from body), body rates, and current per-rotor thrusts."""

    p: np.ndarray
    q: np.ndarray
    v: np.ndarray
    w: np.ndarray
    f: np.ndarray

    @classmethod
    def hover(cls, position, params: QuadParams, yaw: float = 0.0) -> "QuadState":
        from .quatmath import yaw_quat

        f_hover = min(params.hover_rotor_thrust, params.f_max * params.thrust_scale)
        return cls(
            p=np.asarray(position, dtype=float).copy(),
            q=yaw_quat(yaw),
            v=np.zeros(3),
            w=np.zeros(3),
            f=np.full(4, f_hover),
        )

    def as_row(self) -> np.ndarray:
        return np.concatenate([self.p, self.q, self.v, self.w, self.f])

    @classmethod
    def from_row(cls, row: np.ndarray) -> "QuadState":
        row = np.asarray(row, dtype=float)
        return cls(p=row[P].copy(), q=row[Q].copy(), v=row[V].copy(),
                   w=row[W].copy(), f=row[F].copy())

    def copy(self) -> "QuadState":
        return QuadState(self.p.copy(), self.q.copy(), self.v.copy(),
                         self.w.copy(), self.f.copy())


@dataclass
class Command:
    """Collective-thrust-and-bodyrate setpoint: c is mass-normalized thrust
    in m/s^2, w_des the desired bodyrates in rad/s."""

    c: float
    w_des: np.ndarray

    def clamped(self, params: QuadParams) -> "Command":
        return Command(
            c=float(np.clip(self.c, 0.0, params.max_command)),
            w_des=np.clip(np.asarray(self.w_des, dtype=float), -params.w_max, params.w_max),
        )

    @classmethod
    def hover(cls, params: QuadParams) -> "Command":
        return cls(c=params.gravity, w_des=np.zeros(3))


class DelayLine:
    """FIFO command delay: the command applied at time t is the most recent
    one enqueued at or before t - latency."""

    def __init__(self, latency: float, initial: Command):
        if latency < 0:
            raise ValueError("latency must be nonnegative")
        self.latency = latency
        self._queue: deque[tuple[float, Command]] = deque()
        self._current = initial

    def push(self, t: float, cmd: Command) -> None:
        if self._queue and t < self._queue[-1][0]:
            raise ValueError("commands must be enqueued in time order")
        self._queue.append((t, cmd))

    def at(self, t: float) -> Command:
        cutoff = t - self.latency + 1e-12
        while self._queue and self._queue[0][0] <= cutoff:
            self._current = self._queue.popleft()[1]
        return self._current


# ---------------------------------------------------------------------------
# batched core

def derivative_batch(x: np.ndarray, f_des: np.ndarray, params: QuadParams,
                     drag: np.ndarray | None = None) -> np.ndarray:
    """Time derivative of the batched state under rotor setpoints f_des.

    drag optionally overrides params.drag per row (shape (n,3)) for
    domain-randomized batches.
    """
    q = x[:, Q]
    v = x[:, V]
    w = x[:, W]
    f = x[:, F]
    rot = quat_to_rot(q)

    d = np.asarray(params.drag) if drag is None else drag
    c = f.sum(axis=1) / params.mass
    thrust_acc = rot[:, :, 2] * c[:, None]
    v_body = np.einsum("nji,nj->ni", rot, v)
    drag_acc = np.einsum("nij,nj->ni", rot, d * v_body)
    a = thrust_acc - drag_acc
    a[:, 2] -= params.gravity

    wq = np.concatenate([np.zeros((len(x), 1)), w], axis=1)
    q_dot = 0.5 * quat_mul(q, wq)

    j = np.asarray(params.inertia)
    alloc = params.allocation_matrix()
    eta = f @ alloc[1:].T
    jw = j * w
    w_dot = (eta - np.cross(w, jw)) / j

    out = np.empty_like(x)
    out[:, P] = v
    out[:, Q] = q_dot
    out[:, V] = a
    out[:, W] = w_dot
    out[:, F] = (f_des - f) / params.motor_tau
    return out


def rk4_step_batch(x: np.ndarray, f_des: np.ndarray, params: QuadParams, dt: float,
                   drag: np.ndarray | None = None) -> np.ndarray:
    """Classical RK4 step with the rotor setpoints held over the interval.
    Renormalizes the quaternion afterwards."""
    k1 = derivative_batch(x, f_des, params, drag)
    k2 = derivative_batch(x + 0.5 * dt * k1, f_des, params, drag)
    k3 = derivative_batch(x + 0.5 * dt * k2, f_des, params, drag)
    k4 = derivative_batch(x + dt * k3, f_des, params, drag)
    out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    out[:, Q] = quat_normalize(out[:, Q])
    return out


def bodyrate_thrusts_batch(x: np.ndarray, cmd_c: np.ndarray, cmd_w: np.ndarray,
                           params: QuadParams,
                           thrust_scale: np.ndarray | float | None = None) -> np.ndarray:
    """Inner-loop bodyrate P controller plus saturating thrust allocator.

    Returns per-rotor thrust setpoints in [0, f_max * thrust_scale]. When
    rotors saturate, collective thrust is preserved first, yaw torque is
    shed, then pitch/roll torque is scaled down proportionally.
    """
    if thrust_scale is None:
        thrust_scale = params.thrust_scale
    w = x[:, W]
    j = np.asarray(params.inertia)
    gains = np.asarray(params.rate_gains)

    cmd_c = np.clip(cmd_c, 0.0, 4.0 * params.f_max / params.mass)
    cmd_w = np.clip(cmd_w, -params.w_max, params.w_max)

    eta_des = j * (gains * (cmd_w - w)) + np.cross(w, j * w)
    t_des = np.clip(params.mass * cmd_c, 0.0, 4.0 * params.f_max)

    inv = np.linalg.inv(params.allocation_matrix())
    base = t_des[:, None] * inv[:, 0][None, :]
    d_xy = eta_des[:, 0:1] * inv[:, 1][None, :] + eta_des[:, 1:2] * inv[:, 2][None, :]
    d_z = eta_des[:, 2:3] * inv[:, 3][None, :]

    s_xy = _max_feasible_scale(base, d_xy, params.f_max)
    mid = base + s_xy[:, None] * d_xy
    s_z = _max_feasible_scale(mid, d_z, params.f_max)
    f = mid + s_z[:, None] * d_z
    f = np.clip(f, 0.0, params.f_max)
    scale = np.asarray(thrust_scale, dtype=float)
    return f * (scale[:, None] if scale.ndim else float(scale))


def _max_feasible_scale(base: np.ndarray, delta: np.ndarray, f_max: float) -> np.ndarray:
    """Largest s in [0,1] with 0 <= base + s*delta <= f_max per row.
    Assumes base itself is feasible."""
    with np.errstate(divide="ignore", invalid="ignore"):
        up = np.where(delta > 1e-12, (f_max - base) / delta, np.inf)
        lo = np.where(delta < -1e-12, base / (-delta), np.inf)
    s = np.minimum(up, lo).min(axis=1)
    return np.clip(s, 0.0, 1.0)


# ---------------------------------------------------------------------------
# single-vehicle API

@dataclass
class StateDerivative:
    p_dot: np.ndarray
    q_dot: np.ndarray
    v_dot: np.ndarray
    w_dot: np.ndarray
    f_dot: np.ndarray


def _setpoint_limit(params: QuadParams) -> float:
    # rotor setpoints may exceed f_max when the thrust map is scaled up
    return params.f_max * max(1.0, params.thrust_scale)


def derivative(s: QuadState, f_des: np.ndarray, params: QuadParams) -> StateDerivative:
    """Continuous-time derivatives of all five state fields."""
    f_des = np.clip(np.asarray(f_des, dtype=float), 0.0, _setpoint_limit(params))
    d = derivative_batch(s.as_row()[None, :], f_des[None, :], params)[0]
    return StateDerivative(p_dot=d[P], q_dot=d[Q], v_dot=d[V], w_dot=d[W], f_dot=d[F])


def step_rk4(s: QuadState, f_des: np.ndarray, params: QuadParams, dt: float) -> QuadState:
    if dt <= 0:
        raise ValueError("dt must be positive")
    f_des = np.clip(np.asarray(f_des, dtype=float), 0.0, _setpoint_limit(params))
    row = rk4_step_batch(s.as_row()[None, :], f_des[None, :], params, dt)[0]
    if not np.all(np.isfinite(row)):
        raise SimulationDiverged("state is non-finite after RK4 step")
    return QuadState.from_row(row)


def bodyrate_controller(s: QuadState, cmd: Command, params: QuadParams,
                        thrust_scale: float | None = None) -> np.ndarray:
    """Per-rotor thrust setpoints tracking a collective-thrust/bodyrate command."""
    return bodyrate_thrusts_batch(
        s.as_row()[None, :],
        np.array([cmd.c], dtype=float),
        np.asarray(cmd.w_des, dtype=float)[None, :],
        params,
        params.thrust_scale if thrust_scale is None else thrust_scale,
    )[0]


def simulate_closed_loop(
    initial: QuadState,
    policy,
    params: QuadParams,
    delay: DelayLine | None = None,
    ctrl_dt: float = DEFAULT_CTRL_DT,
    sim_dt: float = DEFAULT_SIM_DT,
    horizon: float = 10.0,
    stop=None,
):
    """Run the control loop: query policy(t, state) every ctrl_dt, push the
    command through the delay line, run the bodyrate loop and RK4 at sim_dt.

    stop, if given, is called as stop(t, state) after every control step and
    ends the run early when it returns True. Returns a list of
    (t, QuadState, Command) sampled at the control rate; the command is the
    one applied during the step that ended at t (None on the first row).
    """
    n_sub = round(ctrl_dt / sim_dt)
    if abs(n_sub * sim_dt - ctrl_dt) > 1e-12:
        raise ValueError("ctrl_dt must be an integer multiple of sim_dt")
    if delay is None:
        delay = DelayLine(0.0, Command.hover(params))

    x = initial.as_row()[None, :].copy()
    traj: list[tuple[float, QuadState, Command | None]] = [(0.0, initial.copy(), None)]
    n_ctrl = round(horizon / ctrl_dt)

    for k in range(n_ctrl):
        t = k * ctrl_dt
        cmd = policy(t, QuadState.from_row(x[0])).clamped(params)
        delay.push(t, cmd)
        applied = cmd
        for j in range(n_sub):
            t_sub = t + j * sim_dt
            applied = delay.at(t_sub)
            scale = params.effective_thrust_scale(t_sub)
            f_des = bodyrate_thrusts_batch(
                x, np.array([applied.c]), np.asarray(applied.w_des)[None, :], params, scale
            )
            x = rk4_step_batch(x, f_des, params, sim_dt)
        if not np.all(np.isfinite(x)):
            raise SimulationDiverged(f"state diverged at t={t + ctrl_dt:.3f}")
        t_next = (k + 1) * ctrl_dt
        state = QuadState.from_row(x[0])
        traj.append((t_next, state, applied))
        if stop is not None and stop(t_next, state):
            break
    return traj


# ---------------------------------------------------------------------------
# trajectory logging

TRAJ_COLUMNS = (
    ["t", "px", "py", "pz", "qw", "qx", "qy", "qz", "vx", "vy", "vz",
     "wx", "wy", "wz", "f1", "f2", "f3", "f4", "cmd_c", "cmd_wx", "cmd_wy", "cmd_wz"]
)


def save_trajectory_csv(path: str | Path, traj) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRAJ_COLUMNS)
        for t, s, cmd in traj:
            c = [np.nan] * 4 if cmd is None else [cmd.c, *cmd.w_des]
            writer.writerow([f"{t:.6f}"] + [f"{v:.9g}" for v in (*s.p, *s.q, *s.v, *s.w, *s.f, *c)])


def load_trajectory_csv(path: str | Path):
    traj = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != TRAJ_COLUMNS:
            raise ValueError(f"{path}: unexpected trajectory columns")
        for row in reader:
            vals = [float(v) for v in row]
            state = QuadState.from_row(np.array(vals[1:18]))
            cmd = None
            if np.isfinite(vals[18]):
                cmd = Command(c=vals[18], w_des=np.array(vals[19:22]))
            traj.append((vals[0], state, cmd))
    return traj
