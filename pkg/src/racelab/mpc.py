"""Receding-horizon optimizer over the collective-thrust/bodyrate interface.

The solver is iterative LQR with Gauss-Newton cost expansion, Levenberg
regularization, a backtracking forward pass that keeps inputs feasible by
clamping, and one-step warm starting between consecutive solves. It runs
on a reduced vehicle model (position, attitude quaternion, velocity, with
instantaneous thrust/bodyrate actuation and rotor drag; no motor lag) so
mismatch against the full simulator is part of the benchmark.

Attitude lives on the quaternion manifold: Jacobians and value expansions
use a 3-dim error state via the exponential map, and trajectories differ
through state_diff/retract rather than raw subtraction.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dynamics import Command, QuadParams, QuadState
from .objectives import ContourCostSpec, TrackingCostSpec
from .planner import ArcPath, ReferenceTrajectory, theta_tracker
from .quatmath import (
    quat_mul,
    quat_to_rot,
    skew,
    so3_exp,
    so3_exp_batch,
    so3_right_jacobian,
    so3_right_jacobian_batch,
)

DEFAULT_HORIZON = 20
DEFAULT_MPC_DT = 0.05
DEFAULT_MAX_ITER = 30
DEFAULT_TOL = 1e-6

# small input regularization so the contouring Hessian stays positive
# definite (the progress input enters the cost only through the terminal)
INPUT_REG_THRUST = 1e-3
INPUT_REG_PROGRESS = 1e-3


class SolverDiverged(RuntimeError):
    """Optimizer hit a non-finite cost or state."""


@dataclass
class MpcSolution:
    states: np.ndarray      # (N+1, x_dim) rollout of the returned inputs
    inputs: np.ndarray      # (N, u_dim), always within bounds
    iterations: int
    converged: bool
    cost: float


def reduce_state(s: QuadState) -> np.ndarray:
    """Reduced optimizer state [p, q, v] from the full vehicle state."""
    return np.concatenate([s.p, s.q, s.v])


def _quat_mul_s(a, b):
    # scalar-quaternion product without array stacking overhead
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def _quat_exp_s(phi):
    angle = float(np.sqrt(phi[0] * phi[0] + phi[1] * phi[1] + phi[2] * phi[2]))
    half = 0.5 * angle
    if angle < 1e-8:
        k = 0.5 - angle * angle / 48.0
    else:
        k = np.sin(half) / angle
    return np.array([np.cos(half), k * phi[0], k * phi[1], k * phi[2]])


def _quat_log_s(q):
    w = q[0]
    if w < 0.0:
        q = -q
        w = -w
    norm = float(np.sqrt(q[1] * q[1] + q[2] * q[2] + q[3] * q[3]))
    if norm < 1e-12:
        return 2.0 * q[1:4] / max(w, 1e-12)
    return (2.0 * np.arctan2(norm, w) / norm) * q[1:4]


class ReducedQuadModel:
    """Discrete reduced dynamics: Euler position/velocity update, attitude
    by exponential-map step, commanded bodyrates applied instantaneously."""

    x_dim = 10
    tangent_dim = 9
    u_dim = 4

    def __init__(self, params: QuadParams, dt: float):
        self.dt = dt
        self.gravity = params.gravity
        self.drag = np.asarray(params.drag, dtype=float)

    def accel(self, q: np.ndarray, v: np.ndarray, c: float) -> np.ndarray:
        rot = quat_to_rot(q)
        a = rot[:, 2] * c - rot @ (self.drag * (rot.T @ v))
        a[2] -= self.gravity
        return a

    def f(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        dt = self.dt
        q, v = x[3:7], x[7:10]
        a = self.accel(q, v, u[0])
        out = np.empty(10)
        out[0:3] = x[0:3] + dt * v
        qn = _quat_mul_s(q, _quat_exp_s(u[1:4] * dt))
        out[3:7] = qn / np.sqrt(qn @ qn)
        out[7:10] = v + dt * a
        return out

    def jacobians(self, x: np.ndarray, u: np.ndarray):
        """Error-state A (9x9), B (9x4); tangent order [dp, dtheta, dv]."""
        dt = self.dt
        q, v = x[3:7], x[7:10]
        rot = quat_to_rot(q)
        c = u[0]
        omega = u[1:4]
        d = self.drag
        v_body = rot.T @ v

        da_dtheta = -c * rot @ skew([0.0, 0.0, 1.0]) + rot @ (skew(d * v_body) - np.diag(d) @ skew(v_body))
        da_dv = -rot @ np.diag(d) @ rot.T

        a_mat = np.zeros((9, 9))
        a_mat[0:3, 0:3] = np.eye(3)
        a_mat[0:3, 6:9] = dt * np.eye(3)
        a_mat[3:6, 3:6] = so3_exp(omega * dt).T
        a_mat[6:9, 3:6] = dt * da_dtheta
        a_mat[6:9, 6:9] = np.eye(3) + dt * da_dv

        b_mat = np.zeros((9, 4))
        b_mat[3:6, 1:4] = dt * so3_right_jacobian(omega * dt)
        b_mat[6:9, 0] = dt * rot[:, 2]
        return a_mat, b_mat

    def jacobians_batch(self, xs: np.ndarray, us: np.ndarray):
        """Error-state Jacobians for a whole horizon at once.

        xs (n, 10), us (n, 4) -> A (n, 9, 9), B (n, 9, 4).
        """
        n = len(us)
        dt = self.dt
        q = xs[:, 3:7]
        v = xs[:, 7:10]
        rot = quat_to_rot(q)
        c = us[:, 0]
        omega = us[:, 1:4]
        d = self.drag
        v_body = np.einsum("nji,nj->ni", rot, v)

        e3_skew = skew(np.array([0.0, 0.0, 1.0]))
        da_dtheta = (
            -c[:, None, None] * (rot @ e3_skew)
            + rot @ (skew(d * v_body) - d[:, None] * skew(v_body))
        )
        da_dv = -np.einsum("nij,j,nkj->nik", rot, d, rot)

        a_mat = np.zeros((n, 9, 9))
        a_mat[:, 0:3, 0:3] = np.eye(3)
        a_mat[:, 0:3, 6:9] = dt * np.eye(3)
        a_mat[:, 3:6, 3:6] = so3_exp_batch(omega * dt).transpose(0, 2, 1)
        a_mat[:, 6:9, 3:6] = dt * da_dtheta
        a_mat[:, 6:9, 6:9] = np.eye(3) + dt * da_dv

        b_mat = np.zeros((n, 9, 4))
        b_mat[:, 3:6, 1:4] = dt * so3_right_jacobian_batch(omega * dt)
        b_mat[:, 6:9, 0] = dt * rot[:, :, 2]
        return a_mat, b_mat

    @staticmethod
    def state_diff(x_new: np.ndarray, x_ref: np.ndarray) -> np.ndarray:
        """Tangent difference x_new (-) x_ref."""
        conj = np.array([x_ref[3], -x_ref[4], -x_ref[5], -x_ref[6]])
        dq = _quat_mul_s(conj, x_new[3:7])
        out = np.empty(9)
        out[0:3] = x_new[0:3] - x_ref[0:3]
        out[3:6] = _quat_log_s(dq)
        out[6:9] = x_new[7:10] - x_ref[7:10]
        return out

    @staticmethod
    def retract(x: np.ndarray, delta: np.ndarray) -> np.ndarray:
        """Tangent step x (+) delta, inverse of state_diff."""
        out = x.copy()
        out[0:3] += delta[0:3]
        qn = _quat_mul_s(x[3:7], _quat_exp_s(delta[3:6]))
        out[3:7] = qn / np.sqrt(qn @ qn)
        out[7:10] += delta[6:9]
        return out


class TrackingProblem:
    """Quadratic tracking of a reference window over the reduced model."""

    def __init__(self, model: ReducedQuadModel, x_refs: np.ndarray, u_refs: np.ndarray,
                 q_weights: np.ndarray, r_weights: np.ndarray,
                 u_lo: np.ndarray, u_hi: np.ndarray):
        self.model = model
        self.x_refs = x_refs          # (N+1, 10)
        self.u_refs = u_refs          # (N, 4)
        self.qw = np.asarray(q_weights, dtype=float)
        self.rw = np.asarray(r_weights, dtype=float)
        self.u_lo = u_lo
        self.u_hi = u_hi
        self.horizon = len(u_refs)
        self.tangent_dim = model.tangent_dim
        self.u_dim = model.u_dim
        self._luu = 2.0 * np.diag(self.rw)
        self._lux = np.zeros((4, 9))
        self._lxx_base = np.zeros((9, 9))
        self._lxx_base[0:3, 0:3] = 2.0 * np.diag(self.qw[0:3])
        self._lxx_base[6:9, 6:9] = 2.0 * np.diag(self.qw[6:9])
        self._q_att = np.diag(self.qw[3:6])

    # dynamics plumbing delegated to the model
    def f(self, x, u):
        return self.model.f(x, u)

    def jacobians(self, x, u):
        return self.model.jacobians(x, u)

    def state_diff(self, a, b):
        return self.model.state_diff(a, b)

    def clip_input(self, u):
        return np.clip(u, self.u_lo, self.u_hi)

    @staticmethod
    def _error(x, x_ref):
        conj = np.array([x_ref[3], -x_ref[4], -x_ref[5], -x_ref[6]])
        qe = _quat_mul_s(conj, x[3:7])
        if qe[0] < 0.0:
            qe = -qe
        e = np.empty(9)
        e[0:3] = x[0:3] - x_ref[0:3]
        e[3:6] = qe[1:4]
        e[6:9] = x[7:10] - x_ref[7:10]
        return e, qe

    def stage_cost(self, x, u, k) -> float:
        e, _ = self._error(x, self.x_refs[k])
        du = u - self.u_refs[k]
        return float(e @ (self.qw * e) + du @ (self.rw * du))

    def terminal_cost(self, x) -> float:
        e, _ = self._error(x, self.x_refs[-1])
        return float(e @ (self.qw * e))

    def _state_expansion(self, x, x_ref):
        e, qe = self._error(x, x_ref)
        j_att = 0.5 * (qe[0] * np.eye(3) + skew(qe[1:4]))
        grad = 2.0 * (self.qw * e)
        lx = np.concatenate([grad[0:3], j_att.T @ grad[3:6], grad[6:9]])
        lxx = self._lxx_base.copy()
        lxx[3:6, 3:6] = 2.0 * j_att.T @ self._q_att @ j_att
        return lx, lxx

    def stage_expansion(self, x, u, k):
        lx, lxx = self._state_expansion(x, self.x_refs[k])
        du = u - self.u_refs[k]
        lu = 2.0 * self.rw * du
        return lx, lu, lxx, self._luu, self._lux

    def terminal_expansion(self, x):
        return self._state_expansion(x, self.x_refs[-1])

    def stage_prep(self, xs, us):
        """Jacobians and cost expansions for every stage, vectorized."""
        n = len(us)
        a_mat, b_mat = self.model.jacobians_batch(xs[:n], us)
        refs = self.x_refs[:n]
        conj = refs[:, 3:7] * np.array([1.0, -1.0, -1.0, -1.0])
        qe = quat_mul(conj, xs[:n, 3:7])
        qe = np.where(qe[:, 0:1] < 0.0, -qe, qe)
        e = np.empty((n, 9))
        e[:, 0:3] = xs[:n, 0:3] - refs[:, 0:3]
        e[:, 3:6] = qe[:, 1:4]
        e[:, 6:9] = xs[:n, 7:10] - refs[:, 7:10]
        j_att = 0.5 * (qe[:, 0, None, None] * np.eye(3) + skew(qe[:, 1:4]))

        grad = 2.0 * (self.qw * e)
        lx = np.empty((n, 9))
        lx[:, 0:3] = grad[:, 0:3]
        lx[:, 3:6] = np.einsum("nji,nj->ni", j_att, grad[:, 3:6])
        lx[:, 6:9] = grad[:, 6:9]
        lxx = np.tile(self._lxx_base, (n, 1, 1))
        lxx[:, 3:6, 3:6] = 2.0 * np.einsum("nji,jk,nkl->nil", j_att, self._q_att, j_att)

        lu = 2.0 * self.rw * (us - self.u_refs[:n])
        luu = np.tile(self._luu, (n, 1, 1))
        lux = np.zeros((n, 4, 9))
        return a_mat, b_mat, lx, lu, lxx, luu, lux


class ContouringModel(ReducedQuadModel):
    """Reduced model augmented with path progress theta; the extra input is
    the virtual progress speed."""

    x_dim = 11
    tangent_dim = 10
    u_dim = 5

    def f(self, x, u):
        out = np.empty(11)
        out[0:10] = super().f(x[0:10], u[0:4])
        out[10] = x[10] + self.dt * u[4]
        return out

    def jacobians(self, x, u):
        a9, b9 = super().jacobians(x[0:10], u[0:4])
        a_mat = np.zeros((10, 10))
        a_mat[0:9, 0:9] = a9
        a_mat[9, 9] = 1.0
        b_mat = np.zeros((10, 5))
        b_mat[0:9, 0:4] = b9
        b_mat[9, 4] = self.dt
        return a_mat, b_mat

    @staticmethod
    def state_diff(x_new, x_ref):
        return np.concatenate([
            ReducedQuadModel.state_diff(x_new[0:10], x_ref[0:10]),
            [x_new[10] - x_ref[10]],
        ])

    @staticmethod
    def retract(x, delta):
        out = x.copy()
        out[0:10] = ReducedQuadModel.retract(x[0:10], delta[0:9])
        out[10] += delta[9]
        return out


class ContouringProblem:
    """Contour-error versus terminal progress over the augmented model."""

    def __init__(self, model: ContouringModel, spec: ContourCostSpec,
                 u_lo: np.ndarray, u_hi: np.ndarray, horizon: int,
                 hover_thrust: float):
        self.model = model
        self.spec = spec
        self.path: ArcPath = spec.path
        self.u_lo = u_lo
        self.u_hi = u_hi
        self.horizon = horizon
        self.hover = hover_thrust
        self.tangent_dim = model.tangent_dim
        self.u_dim = model.u_dim
        self._luu = np.diag(np.concatenate([
            [2.0 * INPUT_REG_THRUST], 2.0 * self.spec.rw, [2.0 * INPUT_REG_PROGRESS]
        ]))
        self._lux = np.zeros((5, 10))

    def f(self, x, u):
        return self.model.f(x, u)

    def jacobians(self, x, u):
        return self.model.jacobians(x, u)

    def state_diff(self, a, b):
        return self.model.state_diff(a, b)

    def clip_input(self, u):
        return np.clip(u, self.u_lo, self.u_hi)

    def _contour_terms(self, x):
        theta = float(np.clip(x[10], 0.0, self.path.length))
        e = x[0:3] - self.path.position(theta)
        tau = self.path.tangent(theta)
        return e, tau

    # The progress reward -rho * theta_N telescopes exactly into per-stage
    # terms -rho * dt * v_theta_k (theta_N = theta_0 + dt * sum v_theta);
    # the stage form converges in far fewer DDP iterations.
    def stage_cost(self, x, u, k) -> float:
        e, _ = self._contour_terms(x)
        w = u[1:4]
        return float(
            self.spec.qc * e @ e
            + w @ (self.spec.rw * w)
            + INPUT_REG_THRUST * (u[0] - self.hover) ** 2
            + INPUT_REG_PROGRESS * u[4] ** 2
            - self.spec.rho * self.model.dt * u[4]
        )

    def terminal_cost(self, x) -> float:
        e, _ = self._contour_terms(x)
        return float(self.spec.qc * e @ e)

    def _contour_expansion(self, x):
        e, tau = self._contour_terms(x)
        qc = self.spec.qc
        lx = np.zeros(10)
        lx[0:3] = 2.0 * qc * e
        lx[9] = -2.0 * qc * e @ tau
        jac = np.zeros((3, 10))
        jac[:, 0:3] = np.eye(3)
        jac[:, 9] = -tau
        lxx = 2.0 * qc * jac.T @ jac
        return lx, lxx

    def stage_expansion(self, x, u, k):
        lx, lxx = self._contour_expansion(x)
        lu = np.zeros(5)
        lu[0] = 2.0 * INPUT_REG_THRUST * (u[0] - self.hover)
        lu[1:4] = 2.0 * self.spec.rw * u[1:4]
        lu[4] = 2.0 * INPUT_REG_PROGRESS * u[4] - self.spec.rho * self.model.dt
        return lx, lu, lxx, self._luu, self._lux

    def terminal_expansion(self, x):
        return self._contour_expansion(x)

    def stage_prep(self, xs, us):
        n = len(us)
        a9, b9 = self.model.jacobians_batch(xs[:n, 0:10], us[:, 0:4])
        a_mat = np.zeros((n, 10, 10))
        a_mat[:, 0:9, 0:9] = a9
        a_mat[:, 9, 9] = 1.0
        b_mat = np.zeros((n, 10, 5))
        b_mat[:, 0:9, 0:4] = b9
        b_mat[:, 9, 4] = self.model.dt

        thetas = np.clip(xs[:n, 10], 0.0, self.path.length)
        e = xs[:n, 0:3] - self.path.position(thetas)
        tau = self.path.tangent(thetas)
        qc = self.spec.qc
        lx = np.zeros((n, 10))
        lx[:, 0:3] = 2.0 * qc * e
        lx[:, 9] = -2.0 * qc * np.einsum("ni,ni->n", e, tau)
        jac = np.zeros((n, 3, 10))
        jac[:, :, 0:3] = np.eye(3)
        jac[:, :, 9] = -tau
        lxx = 2.0 * qc * np.einsum("nij,nik->njk", jac, jac)

        lu = np.empty((n, 5))
        lu[:, 0] = 2.0 * INPUT_REG_THRUST * (us[:, 0] - self.hover)
        lu[:, 1:4] = 2.0 * self.spec.rw * us[:, 1:4]
        lu[:, 4] = 2.0 * INPUT_REG_PROGRESS * us[:, 4] - self.spec.rho * self.model.dt
        luu = np.tile(self._luu, (n, 1, 1))
        lux = np.zeros((n, 5, 10))
        return a_mat, b_mat, lx, lu, lxx, luu, lux


# ---------------------------------------------------------------------------
# iLQR core

def _rollout(problem, x0, inputs):
    xs = np.empty((len(inputs) + 1, len(x0)))
    xs[0] = x0
    cost = 0.0
    for k, u in enumerate(inputs):
        cost += problem.stage_cost(xs[k], u, k)
        xs[k + 1] = problem.f(xs[k], u)
    cost += problem.terminal_cost(xs[-1])
    return xs, cost


def _backward_pass(problem, xs, us, mu):
    n = len(us)
    n_u = us.shape[1]
    u_lo = getattr(problem, "u_lo", -np.inf)
    u_hi = getattr(problem, "u_hi", np.inf)
    ks = np.empty_like(us)
    gains = np.empty((n, n_u, problem.tangent_dim))
    if hasattr(problem, "stage_prep"):
        a_all, b_all, lx_all, lu_all, lxx_all, luu_all, lux_all = problem.stage_prep(xs, us)
    else:
        a_all = [None] * n
        b_all, lx_all, lu_all, lxx_all, luu_all, lux_all = ([None] * n for _ in range(6))
        for k in range(n):
            a_all[k], b_all[k] = problem.jacobians(xs[k], us[k])
            lx_all[k], lu_all[k], lxx_all[k], luu_all[k], lux_all[k] = (
                problem.stage_expansion(xs[k], us[k], k)
            )
    vx, vxx = problem.terminal_expansion(xs[-1])
    reg = mu * np.eye(n_u)
    dv1 = 0.0  # expected cost change: dv1 * alpha + dv2 * alpha^2
    dv2 = 0.0
    for k in range(n - 1, -1, -1):
        a_mat = a_all[k]
        b_mat = b_all[k]
        bt_vxx = b_mat.T @ vxx
        qx = lx_all[k] + a_mat.T @ vx
        qu = lu_all[k] + b_mat.T @ vx
        qxx = lxx_all[k] + a_mat.T @ vxx @ a_mat
        quu = luu_all[k] + bt_vxx @ b_mat + reg
        qux = lux_all[k] + bt_vxx @ a_mat
        try:
            sol = np.linalg.solve(quu, np.column_stack([qu, qux]))
        except np.linalg.LinAlgError:
            return None
        if not np.all(np.isfinite(sol)):
            return None
        k_ff = -sol[:, 0]
        k_fb = -sol[:, 1:]
        # active-set projection: inputs pinned at a bound and pushed further
        # outward contribute no improvement, so drop them from the step;
        # keeps the expected-improvement estimate honest under clamping
        active = ((us[k] <= u_lo + 1e-12) & (k_ff < 0.0)) | (
            (us[k] >= u_hi - 1e-12) & (k_ff > 0.0)
        )
        if np.any(active):
            k_ff = np.where(active, 0.0, k_ff)
            k_fb = np.where(active[:, None], 0.0, k_fb)
        # reject ascent directions from an indefinite Quu
        expected_here = float(k_ff @ qu) + 0.5 * float(k_ff @ quu @ k_ff)
        if expected_here > 1e-12:
            return None
        ks[k] = k_ff
        gains[k] = k_fb
        dv1 += float(k_ff @ qu)
        dv2 += 0.5 * float(k_ff @ quu @ k_ff)
        vx = qx + k_fb.T @ quu @ k_ff + k_fb.T @ qu + qux.T @ k_ff
        vxx = qxx + k_fb.T @ quu @ k_fb + k_fb.T @ qux + qux.T @ k_fb
        vxx = 0.5 * (vxx + vxx.T)
    return ks, gains, dv1 + dv2


def _forward_pass(problem, xs, us, ks, gains, alpha):
    x = xs[0]
    xs_new = np.empty_like(xs)
    us_new = np.empty_like(us)
    xs_new[0] = x
    cost = 0.0
    for k in range(len(us)):
        du = alpha * ks[k] + gains[k] @ problem.state_diff(x, xs[k])
        u = problem.clip_input(us[k] + du)
        us_new[k] = u
        cost += problem.stage_cost(x, u, k)
        x = problem.f(x, u)
        xs_new[k + 1] = x
    cost += problem.terminal_cost(x)
    return xs_new, us_new, cost


def solve(problem, x0: np.ndarray, warm_start: np.ndarray | None = None,
          max_iter: int = DEFAULT_MAX_ITER, tol: float = DEFAULT_TOL) -> MpcSolution:
    """Iterate backward/forward passes until the relative cost decrease
    falls below tol or max_iter is reached.

    warm_start is an input sequence (N, u_dim), typically the previous
    solution shifted by one step. Raises SolverDiverged on non-finite cost.
    """
    n = problem.horizon
    if warm_start is not None:
        us = problem.clip_input(np.asarray(warm_start, dtype=float).copy())
    else:
        us = np.tile(problem.clip_input(np.zeros(problem.u_dim)), (n, 1))
    if not np.all(np.isfinite(x0)):
        raise SolverDiverged("initial state is non-finite")

    xs, cost = _rollout(problem, x0, us)
    if not np.isfinite(cost):
        raise SolverDiverged("initial rollout cost is non-finite")

    mu = 0.0
    mu_max = 1e8
    converged = False
    iterations = 0
    while iterations < max_iter:
        iterations += 1
        back = _backward_pass(problem, xs, us, mu)
        if back is None:
            mu = max(10.0 * mu, 1e-6)
            if mu > mu_max:
                break
            iterations -= 1
            continue
        ks, gains, expected = back
        if abs(expected) < tol * max(abs(cost), 1.0):
            converged = True  # stationary: predicted improvement negligible
            break
        improved = False
        alpha = 1.0
        for _ in range(11):
            xs_new, us_new, cost_new = _forward_pass(problem, xs, us, ks, gains, alpha)
            if np.isfinite(cost_new) and cost_new < cost - 1e-12:
                improved = True
                break
            alpha *= 0.5
        if not improved:
            mu = max(10.0 * mu, 1e-6)
            if mu > mu_max:
                break
            continue
        rel_drop = (cost - cost_new) / max(abs(cost), 1.0)
        xs, us, cost = xs_new, us_new, cost_new
        mu *= 0.5
        if mu < 1e-9:
            mu = 0.0
        if rel_drop < tol:
            converged = True
            break
    if not np.isfinite(cost):
        raise SolverDiverged("solver cost is non-finite")
    return MpcSolution(states=xs, inputs=us, iterations=iterations,
                       converged=converged, cost=cost)


def _shift_warm_start(inputs: np.ndarray) -> np.ndarray:
    return np.vstack([inputs[1:], inputs[-1]])


# ---------------------------------------------------------------------------
# controllers

class SolveLog:
    """Optional per-solve diagnostics CSV (iterations, cost, convergence)."""

    def __init__(self, path: str | Path):
        self._fh = open(path, "w", newline="")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(["t", "iterations", "cost", "converged"])

    def record(self, t: float, sol: MpcSolution) -> None:
        self._writer.writerow([f"{t:.4f}", sol.iterations, f"{sol.cost:.6g}", int(sol.converged)])

    def close(self) -> None:
        self._fh.close()


class DelayPredictor:
    """Forward-predicts the reduced state over the known command latency
    using the commands already issued but not yet applied.

    Compensates only the nominal, measured latency; any extra unmodeled
    delay (mismatch models) remains uncompensated by design.
    """

    def __init__(self, params: QuadParams, delay_s: float, ctrl_dt: float):
        self.n_pending = round(delay_s / ctrl_dt) if delay_s > 0 else 0
        self.delay_s = self.n_pending * ctrl_dt
        self._model = ReducedQuadModel(params, ctrl_dt)
        self._hover = np.array([params.gravity, 0.0, 0.0, 0.0])
        self._pending: list[np.ndarray] = []

    def predict(self, x: np.ndarray) -> np.ndarray:
        cmds = self._pending[-self.n_pending:] if self.n_pending else []
        pad = self.n_pending - len(cmds)
        for u in ([self._hover] * pad) + cmds:
            x = self._model.f(x, u)
        return x

    def record(self, cmd: Command) -> None:
        if self.n_pending:
            self._pending.append(np.concatenate([[cmd.c], cmd.w_des]))
            del self._pending[:-self.n_pending]


class TrackingMpcController:
    """Receding-horizon tracking of a time-indexed reference."""

    def __init__(
        self,
        params: QuadParams,
        reference: ReferenceTrajectory,
        q_weights=None,
        r_weights=None,
        horizon: int = DEFAULT_HORIZON,
        dt: float = DEFAULT_MPC_DT,
        max_iter: int = 8,
        tol: float = 1e-4,
        delay_comp: float = 0.04,
        ctrl_dt: float = 0.01,
        log: SolveLog | None = None,
    ):
        spec = TrackingCostSpec(reference=reference)
        self.reference = reference
        self.q_weights = spec.q_weights if q_weights is None else np.asarray(q_weights, float)
        self.r_weights = spec.r_weights if r_weights is None else np.asarray(r_weights, float)
        self.model = ReducedQuadModel(params, dt)
        self.horizon = horizon
        self.dt = dt
        self.max_iter = max_iter
        self.tol = tol
        self.u_lo = np.array([0.0, -params.w_max, -params.w_max, -params.w_max])
        self.u_hi = np.array([params.max_command, params.w_max, params.w_max, params.w_max])
        self.log = log
        self.predictor = DelayPredictor(params, delay_comp, ctrl_dt)
        self._warm: np.ndarray | None = None
        self._prev_cmd = Command.hover(params)
        self._cold_iters = DEFAULT_MAX_ITER

    def _window(self, t: float):
        n = self.horizon
        x_refs = np.empty((n + 1, 10))
        u_refs = np.empty((n, 4))
        for k in range(n + 1):
            x_ref, u_ref = self.reference.sample(t + k * self.dt)
            x_refs[k] = x_ref
            if k < n:
                u_refs[k] = u_ref
        return x_refs, u_refs

    def __call__(self, t: float, state: QuadState) -> Command:
        x0 = self.predictor.predict(reduce_state(state))
        x_refs, u_refs = self._window(t + self.predictor.delay_s)
        problem = TrackingProblem(self.model, x_refs, u_refs,
                                  self.q_weights, self.r_weights, self.u_lo, self.u_hi)
        warm = self._warm if self._warm is not None else u_refs.copy()
        iters = self.max_iter if self._warm is not None else self._cold_iters
        try:
            sol = solve(problem, x0, warm_start=warm, max_iter=iters, tol=self.tol)
        except SolverDiverged:
            self._warm = None
            self.predictor.record(self._prev_cmd)
            return self._prev_cmd
        if self.log is not None:
            self.log.record(t, sol)
        self._warm = _shift_warm_start(sol.inputs)
        cmd = Command(c=float(sol.inputs[0, 0]), w_des=sol.inputs[0, 1:4].copy())
        self._prev_cmd = cmd
        self.predictor.record(cmd)
        return cmd


class ContouringMpcController:
    """Receding-horizon contouring control along an arc-length path."""

    def __init__(
        self,
        params: QuadParams,
        path: ArcPath,
        spec: ContourCostSpec | None = None,
        v_theta_max: float = 25.0,
        horizon: int = DEFAULT_HORIZON,
        dt: float = DEFAULT_MPC_DT,
        max_iter: int = 8,
        tol: float = 1e-4,
        delay_comp: float = 0.04,
        ctrl_dt: float = 0.01,
        log: SolveLog | None = None,
    ):
        self.spec = spec if spec is not None else ContourCostSpec(path=path)
        self.path = path
        self.model = ContouringModel(params, dt)
        self.horizon = horizon
        self.dt = dt
        self.max_iter = max_iter
        self.tol = tol
        w = params.w_max
        self.u_lo = np.array([0.0, -w, -w, -w, 0.0])
        self.u_hi = np.array([params.max_command, w, w, w, v_theta_max])
        self.hover = params.gravity
        self.log = log
        self.predictor = DelayPredictor(params, delay_comp, ctrl_dt)
        self.theta = 0.0
        self._warm: np.ndarray | None = None
        self._prev_cmd = Command.hover(params)
        self._cold_iters = DEFAULT_MAX_ITER

    def step(self, state: QuadState, theta_prev: float):
        """One receding-horizon solve from an explicit progress estimate;
        returns (Command, updated theta)."""
        x_pred = self.predictor.predict(reduce_state(state))
        theta = theta_tracker(x_pred[0:3], self.path, theta_prev)
        problem = ContouringProblem(self.model, self.spec, self.u_lo, self.u_hi,
                                    self.horizon, self.hover)
        x0 = np.concatenate([x_pred, [theta]])
        if self._warm is not None:
            warm = self._warm
            iters = self.max_iter
        else:
            warm = np.tile(
                np.array([self.hover, 0.0, 0.0, 0.0,
                          min(float(np.linalg.norm(state.v)) + 1.0, self.u_hi[4])]),
                (self.horizon, 1),
            )
            iters = self._cold_iters
        try:
            sol = solve(problem, x0, warm_start=warm, max_iter=iters, tol=self.tol)
        except SolverDiverged:
            self._warm = None
            self.predictor.record(self._prev_cmd)
            return self._prev_cmd, theta
        if self.log is not None:
            self.log.record(0.0, sol)
        self._warm = _shift_warm_start(sol.inputs)
        cmd = Command(c=float(sol.inputs[0, 0]), w_des=sol.inputs[0, 1:4].copy())
        self._prev_cmd = cmd
        self._last_solution = sol
        self.predictor.record(cmd)
        return cmd, theta

    def __call__(self, t: float, state: QuadState) -> Command:
        cmd, self.theta = self.step(state, self.theta)
        return cmd
