"""Quaternion and SO(3) helpers shared by the simulator, planner, and MPC.

Conventions: quaternions are (w, x, y, z) and map body vectors into the
world frame, v_world = R(q) @ v_body. All functions accept either a single
quaternion/vector or a leading batch dimension.
"""

from __future__ import annotations

import numpy as np


def quat_normalize(q: np.ndarray) -> np.ndarray:
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_conj(q: np.ndarray) -> np.ndarray:
    out = q.copy()
    out[..., 1:] *= -1.0
    return out


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a ⊗ b (batched)."""
    aw, ax, ay, az = (a[..., i] for i in range(4))
    bw, bx, by, bz = (b[..., i] for i in range(4))
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_to_rot(q: np.ndarray) -> np.ndarray:
    """Rotation matrix R(q), shape (..., 3, 3)."""
    w, x, y, z = (q[..., i] for i in range(4))
    r = np.empty(q.shape[:-1] + (3, 3), dtype=q.dtype)
    r[..., 0, 0] = 1.0 - 2.0 * (y * y + z * z)
    r[..., 0, 1] = 2.0 * (x * y - w * z)
    r[..., 0, 2] = 2.0 * (x * z + w * y)
    r[..., 1, 0] = 2.0 * (x * y + w * z)
    r[..., 1, 1] = 1.0 - 2.0 * (x * x + z * z)
    r[..., 1, 2] = 2.0 * (y * z - w * x)
    r[..., 2, 0] = 2.0 * (x * z - w * y)
    r[..., 2, 1] = 2.0 * (y * z + w * x)
    r[..., 2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return r


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate body vector(s) v into the world frame."""
    return np.einsum("...ij,...j->...i", quat_to_rot(q), v)


def quat_exp(phi: np.ndarray) -> np.ndarray:
    """Exponential map: axis-angle vector (rad) -> unit quaternion.

    quat_exp(phi) rotates by angle |phi| about phi. Safe at phi = 0.
    """
    phi = np.asarray(phi, dtype=float)
    angle = np.linalg.norm(phi, axis=-1, keepdims=True)
    half = 0.5 * angle
    # sin(x)/x via series near zero to stay smooth
    small = angle < 1e-8
    k = np.where(small, 0.5 - angle**2 / 48.0, np.sin(half) / np.where(small, 1.0, angle))
    w = np.cos(half)
    xyz = k * phi
    return np.concatenate([w, xyz], axis=-1)


def quat_log(q: np.ndarray) -> np.ndarray:
    """Logarithm map: unit quaternion -> axis-angle vector in (-pi, pi]."""
    q = np.asarray(q, dtype=float)
    w = q[..., :1]
    xyz = q[..., 1:]
    # canonical half-space so the result is the minimal rotation
    sign = np.where(w < 0.0, -1.0, 1.0)
    w = w * sign
    xyz = xyz * sign
    norm = np.linalg.norm(xyz, axis=-1, keepdims=True)
    angle = 2.0 * np.arctan2(norm, w)
    small = norm < 1e-12
    scale = np.where(small, 2.0 / np.clip(w, 1e-12, None), angle / np.where(small, 1.0, norm))
    return scale * xyz


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix [v]x, shape (..., 3, 3)."""
    v = np.asarray(v, dtype=float)
    m = np.zeros(v.shape[:-1] + (3, 3))
    m[..., 0, 1] = -v[..., 2]
    m[..., 0, 2] = v[..., 1]
    m[..., 1, 0] = v[..., 2]
    m[..., 1, 2] = -v[..., 0]
    m[..., 2, 0] = -v[..., 1]
    m[..., 2, 1] = v[..., 0]
    return m


def so3_exp(phi: np.ndarray) -> np.ndarray:
    """Rodrigues formula, axis-angle -> rotation matrix."""
    phi = np.asarray(phi, dtype=float)
    angle = np.linalg.norm(phi)
    if angle < 1e-10:
        return np.eye(3) + skew(phi)
    axis = phi / angle
    k = skew(axis)
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def so3_right_jacobian(phi: np.ndarray) -> np.ndarray:
    """Right Jacobian J_r of SO(3): Exp(phi + d) ~= Exp(phi) Exp(J_r d)."""
    phi = np.asarray(phi, dtype=float)
    angle = np.linalg.norm(phi)
    k = skew(phi)
    if angle < 1e-6:
        return np.eye(3) - 0.5 * k + (k @ k) / 6.0
    a2 = angle * angle
    return (
        np.eye(3)
        - (1.0 - np.cos(angle)) / a2 * k
        + (angle - np.sin(angle)) / (a2 * angle) * (k @ k)
    )


def so3_exp_batch(phi: np.ndarray) -> np.ndarray:
    """Rodrigues formula over a batch (n, 3) -> (n, 3, 3)."""
    phi = np.asarray(phi, dtype=float)
    angle = np.linalg.norm(phi, axis=-1)
    k = skew(phi)
    kk = k @ k
    small = angle < 1e-8
    safe = np.where(small, 1.0, angle)
    s = np.where(small, 1.0 - angle**2 / 6.0, np.sin(safe) / safe)
    c = np.where(small, 0.5 - angle**2 / 24.0, (1.0 - np.cos(safe)) / safe**2)
    return np.eye(3) + s[:, None, None] * k + c[:, None, None] * kk


def so3_right_jacobian_batch(phi: np.ndarray) -> np.ndarray:
    """Right Jacobians over a batch (n, 3) -> (n, 3, 3)."""
    phi = np.asarray(phi, dtype=float)
    angle = np.linalg.norm(phi, axis=-1)
    k = skew(phi)
    kk = k @ k
    small = angle < 1e-6
    safe = np.where(small, 1.0, angle)
    c1 = np.where(small, 0.5 - angle**2 / 24.0, (1.0 - np.cos(safe)) / safe**2)
    c2 = np.where(small, 1.0 / 6.0 - angle**2 / 120.0, (safe - np.sin(safe)) / safe**3)
    return np.eye(3) - c1[:, None, None] * k + c2[:, None, None] * kk


def quat_from_two_vectors(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Minimal rotation taking direction a onto direction b."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    a = a / np.linalg.norm(a)
    b = b / np.linalg.norm(b)
    c = float(a @ b)
    if c < -1.0 + 1e-12:
        # antiparallel: rotate pi about any axis orthogonal to a
        axis = np.cross(a, np.array([1.0, 0.0, 0.0]))
        if np.linalg.norm(axis) < 1e-8:
            axis = np.cross(a, np.array([0.0, 1.0, 0.0]))
        axis /= np.linalg.norm(axis)
        return np.concatenate([[0.0], axis])
    v = np.cross(a, b)
    w = 1.0 + c
    return quat_normalize(np.concatenate([[w], v]))


def yaw_quat(yaw: float) -> np.ndarray:
    """Pure yaw rotation about world z."""
    return np.array([np.cos(0.5 * yaw), 0.0, 0.0, np.sin(0.5 * yaw)])
