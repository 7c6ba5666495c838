"""Unit quaternions and the tangent-space charts used to learn orientation trajectories.

Quaternions are stored scalar-first ``[w, x, y, z]`` and multiplied with the
Hamilton convention.  Rotation vectors use the half-angle convention of the
log map: ``Log([cos a, sin a * n]) = a * n``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from stablelfd.dynamics import ContractError

UNIT_TOL = 1e-9
IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


class DomainError(ContractError):
    """Input lies outside the tangent chart (rotation too close to pi, or ||r|| >= pi)."""


def _as_quat(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if q.shape[-1] != 4:
        raise ContractError(f"quaternion needs 4 components, got shape {q.shape}")
    return q


def check_unit(q, tol: float = UNIT_TOL) -> np.ndarray:
    q = _as_quat(q)
    if np.any(np.abs(np.linalg.norm(q, axis=-1) - 1.0) > tol):
        raise ContractError("quaternion is not unit norm")
    return q


def quat_mul(a, b) -> np.ndarray:
    a = _as_quat(a)
    b = _as_quat(b)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


def quat_conj(q) -> np.ndarray:
    q = _as_quat(q)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_log(q) -> np.ndarray:
    """``arccos(w) * u / |u|``, or zero when the vector part vanishes.  No sign handling."""
    q = _as_quat(q)
    w = np.clip(q[..., 0], -1.0, 1.0)
    u = q[..., 1:]
    nu = np.linalg.norm(u, axis=-1, keepdims=True)
    safe = np.where(nu > 0, nu, 1.0)
    return np.where(nu > 0, np.arccos(w)[..., None] * u / safe, 0.0)


def quat_exp(r) -> np.ndarray:
    """``[cos|r|, sin|r| * r / |r|]``, identity for ``r = 0``."""
    r = np.asarray(r, dtype=np.float64)
    n = np.linalg.norm(r, axis=-1, keepdims=True)
    safe = np.where(n > 0, n, 1.0)
    vec = np.where(n > 0, np.sin(n) * r / safe, 0.0)
    return np.concatenate([np.cos(n), vec], axis=-1)


def log_map(q_t, q_goal, antipodal_tol: float = 1e-9) -> np.ndarray:
    """Rotation vector of ``conj(q_t) * q_goal`` in the chart at the goal.

    The product is sign-canonicalised to a nonnegative scalar part first, so
    ``|r| <= pi/2``.  A relative rotation of pi (scalar part ~ 0) has no unique
    representative and raises :class:`DomainError`.
    """
    q_t = check_unit(q_t)
    q_goal = check_unit(q_goal)
    rel = quat_mul(quat_conj(q_t), q_goal)
    rel = np.where(rel[..., :1] < 0, -rel, rel)
    if np.any(rel[..., 0] < antipodal_tol):
        raise DomainError("relative rotation of pi: outside the log-map chart")
    return quat_log(rel)


def exp_map(r, q_goal) -> np.ndarray:
    """Inverse of :func:`log_map`: ``q_goal * conj(Exp(r))``.

    Requires ``|r| < pi``.
    """
    r = np.asarray(r, dtype=np.float64)
    q_goal = check_unit(q_goal)
    if np.any(np.linalg.norm(r, axis=-1) >= np.pi):
        raise DomainError("rotation vector norm must be < pi")
    return quat_mul(q_goal, quat_conj(quat_exp(r)))


def quat_error(q, q_hat) -> np.ndarray:
    """Geodesic angle in radians between two rotations; invariant to quaternion sign."""
    q = check_unit(q, 1e-6)
    q_hat = check_unit(q_hat, 1e-6)
    rel = quat_mul(q, quat_conj(q_hat))
    return 2.0 * np.arctan2(np.linalg.norm(rel[..., 1:], axis=-1), np.abs(rel[..., 0]))


def trajectory_quat_error(q, q_hat) -> float:
    """Mean per-step geodesic angle over a quaternion trajectory."""
    return float(np.mean(quat_error(q, q_hat)))


def make_sign_continuous(quats) -> np.ndarray:
    """Flip quaternions so consecutive ones have a nonnegative dot product."""
    quats = np.array(quats, dtype=np.float64)
    for i in range(1, len(quats)):
        if np.dot(quats[i], quats[i - 1]) < 0:
            quats[i] = -quats[i]
    return quats


@dataclass(frozen=True)
class PoseTrajectory:
    """Positions ``(T, 3)`` and unit quaternions ``(T, 4)``; double-cover sign flips are removed on construction."""

    positions: np.ndarray
    quaternions: np.ndarray
    dt: float = 1.0

    def __post_init__(self):
        p = np.asarray(self.positions, dtype=np.float64)
        q = check_unit(np.asarray(self.quaternions, dtype=np.float64))
        if p.ndim != 2 or p.shape[1] != 3 or q.shape != (p.shape[0], 4):
            raise ContractError(f"pose trajectory shapes {p.shape} / {q.shape} are inconsistent")
        object.__setattr__(self, "positions", p)
        object.__setattr__(self, "quaternions", make_sign_continuous(q))

    @property
    def T(self) -> int:
        return self.positions.shape[0]


def encode_pose(traj: PoseTrajectory, scale: float = 5.0) -> np.ndarray:
    """``(T, 6)`` rows ``(p_t - p_goal, scale * log_map(q_t, q_goal))``; the goal maps to zero."""
    if scale <= 0:
        raise ContractError("scale must be positive")
    p_goal = traj.positions[-1]
    q_goal = traj.quaternions[-1]
    r = log_map(traj.quaternions, q_goal)
    return np.concatenate([traj.positions - p_goal, scale * r], axis=1)


def decode_pose(x, p_goal, q_goal, scale: float = 5.0, dt: float = 1.0) -> PoseTrajectory:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != 6:
        raise ContractError(f"encoded pose trajectory must be (T, 6), got {x.shape}")
    positions = x[:, :3] + np.asarray(p_goal, dtype=np.float64)
    quats = exp_map(x[:, 3:] / scale, q_goal)
    return PoseTrajectory(positions, make_sign_continuous(quats), dt)


def random_unit_quaternions(rng: np.random.Generator, n: int) -> np.ndarray:
    q = rng.normal(size=(n, 4))
    return q / np.linalg.norm(q, axis=1, keepdims=True)
