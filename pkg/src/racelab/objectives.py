"""Minimum-time proxy objectives.

Three ways to score racing behavior: a quadratic state/input tracking cost
against a time-indexed reference, a contouring cost that trades path
deviation against progress, and the dense per-step gate-progress reward
used for policy training.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .quatmath import quat_conj, quat_mul

# reduced vehicle state used by the receding-horizon optimizer: [p, q, v]
X_P = slice(0, 3)
X_Q = slice(3, 7)
X_V = slice(7, 10)
REDUCED_DIM = 10
ERR_DIM = 9

DEFAULT_Q_WEIGHTS = (200.0, 200.0, 200.0, 50.0, 50.0, 50.0, 1.0, 1.0, 1.0)
DEFAULT_R_WEIGHTS = (1.0, 5.0, 5.0, 5.0)


def attitude_error(q: np.ndarray, q_ref: np.ndarray) -> np.ndarray:
    """Vector part of q_ref^-1 ⊗ q, sign-corrected to the short way around."""
    qe = quat_mul(quat_conj(q_ref), q)
    if qe[0] < 0.0:
        qe = -qe
    return qe[1:]


def state_error(x: np.ndarray, x_ref: np.ndarray) -> np.ndarray:
    """9-dim error between reduced states: position, attitude vec, velocity."""
    return np.concatenate(
        [x[X_P] - x_ref[X_P], attitude_error(x[X_Q], x_ref[X_Q]), x[X_V] - x_ref[X_V]]
    )


@dataclass
class TrackingCostSpec:
    """Diagonal quadratic tracking cost over a reference trajectory."""

    reference: object  # ReferenceTrajectory; duck-typed to avoid an import cycle
    q_weights: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_Q_WEIGHTS))
    r_weights: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_R_WEIGHTS))

    def __post_init__(self):
        self.q_weights = np.asarray(self.q_weights, dtype=float)
        self.r_weights = np.asarray(self.r_weights, dtype=float)
        if np.any(self.q_weights < 0) or np.any(self.r_weights < 0):
            raise ValueError("cost weights must be nonnegative")
        if not (np.any(self.q_weights > 0) or np.any(self.r_weights > 0)):
            raise ValueError("at least one cost weight must be positive")


def tracking_stage_cost(x: np.ndarray, u: np.ndarray, k: int, spec: TrackingCostSpec) -> float:
    """(x - x_ref_k)' Q (x - x_ref_k) + (u - u_ref_k)' R (u - u_ref_k)."""
    x_ref, u_ref = spec.reference.at_index(k)
    e = state_error(np.asarray(x, dtype=float), x_ref)
    du = np.asarray(u, dtype=float) - u_ref
    return float(e @ (spec.q_weights * e) + du @ (spec.r_weights * du))


@dataclass
class ContourCostSpec:
    """Contouring objective: penalize lateral error and bodyrates, reward
    terminal progress along the path with weight rho."""

    path: object  # ArcPath
    qc: float = 50.0
    rw: np.ndarray = field(default_factory=lambda: np.array([0.2, 0.2, 0.2]))
    rho: float = 5.0

    def __post_init__(self):
        self.rw = np.asarray(self.rw, dtype=float)
        if self.qc < 0:
            raise ValueError("qc must be nonnegative")
        if self.rho <= 0:
            raise ValueError("rho must be positive")


def contour_error(p: np.ndarray, path, theta: float):
    """Contouring error e = p - path.position(theta) and the reference point."""
    p_ref = path.position(theta)
    return np.asarray(p, dtype=float) - p_ref, p_ref


@dataclass
class ProgressRewardSpec:
    """Gate-progress reward constants: bodyrate penalty coefficient and the
    sparse crash/finish terms."""

    b: float = 0.01
    crash_penalty: float = -10.0
    finish_bonus: float = 10.0

    def __post_init__(self):
        if self.b < 0:
            raise ValueError("bodyrate penalty coefficient must be nonnegative")


def gate_progress_reward(
    p_prev: np.ndarray,
    p_curr: np.ndarray,
    w: np.ndarray,
    gate_center: np.ndarray,
    spec: ProgressRewardSpec,
    crashed: bool = False,
    finished: bool = False,
) -> float:
    """Per-step progress toward the target gate center minus a bodyrate
    penalty, plus sparse crash/finish terms.

    gate_center must be the gate that was targeted at the start of the step.
    """
    g = np.asarray(gate_center, dtype=float)
    r = (
        float(np.linalg.norm(g - np.asarray(p_prev, dtype=float)))
        - float(np.linalg.norm(g - np.asarray(p_curr, dtype=float)))
        - spec.b * float(np.linalg.norm(np.asarray(w, dtype=float)))
    )
    if crashed:
        r += spec.crash_penalty
    if finished:
        r += spec.finish_bonus
    return r
