"""SO(3)/SE(3) helpers: skew maps, exp/log, projections and the filter's retraction pair.

Six-vectors are always ordered (translation, rotation).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import math

import numpy as np

from .errors import AntiparallelVectors, BranchCut, DegenerateMatrix

_SMALL_ANGLE = 1e-6
# below this distance from pi the axis comes from the symmetric part
_NEAR_PI = 1e-3


def skew(z) -> np.ndarray:
    """Cross-product matrix, so that ``skew(z) @ w == cross(z, w)``. Accepts (..., 3)."""
    z = np.asarray(z, dtype=float)
    out = np.zeros(z.shape[:-1] + (3, 3))
    out[..., 0, 1] = -z[..., 2]
    out[..., 0, 2] = z[..., 1]
    out[..., 1, 0] = z[..., 2]
    out[..., 1, 2] = -z[..., 0]
    out[..., 2, 0] = -z[..., 1]
    out[..., 2, 1] = z[..., 0]
    return out


def vee(W) -> np.ndarray:
    W = np.asarray(W, dtype=float)
    return 0.5 * np.stack(
        [W[..., 2, 1] - W[..., 1, 2], W[..., 0, 2] - W[..., 2, 0], W[..., 1, 0] - W[..., 0, 1]],
        axis=-1,
    )


def exp_so3(axis_angle) -> np.ndarray:
    """Rodrigues' formula; vectorized over leading dimensions."""
    v = np.asarray(axis_angle, dtype=float)
    if v.shape == (3,):
        return _exp_single(*v.tolist())
    th2 = np.sum(v * v, axis=-1)
    th = np.sqrt(th2)
    small = th < 1e-4
    safe = np.where(small, 1.0, th)
    a = np.where(small, 1.0 - th2 / 6.0 + th2 * th2 / 120.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - th2 / 24.0 + th2 * th2 / 720.0, (1.0 - np.cos(safe)) / (safe * safe))
    # [v]^2 = v v^T - |v|^2 I
    out = b[..., None, None] * (v[..., :, None] * v[..., None, :])
    diag = 1.0 - b * th2
    out[..., 0, 0] += diag
    out[..., 1, 1] += diag
    out[..., 2, 2] += diag
    av = a[..., None] * v
    out[..., 0, 1] -= av[..., 2]
    out[..., 0, 2] += av[..., 1]
    out[..., 1, 0] += av[..., 2]
    out[..., 1, 2] -= av[..., 0]
    out[..., 2, 0] -= av[..., 1]
    out[..., 2, 1] += av[..., 0]
    return out


def _exp_single(x: float, y: float, z: float) -> np.ndarray:
    th2 = x * x + y * y + z * z
    if th2 < 1e-8:
        a = 1.0 - th2 / 6.0 + th2 * th2 / 120.0
        b = 0.5 - th2 / 24.0 + th2 * th2 / 720.0
    else:
        th = math.sqrt(th2)
        a = math.sin(th) / th
        b = (1.0 - math.cos(th)) / th2
    d = 1.0 - b * th2
    return np.array([
        [d + b * x * x, b * x * y - a * z, b * x * z + a * y],
        [b * x * y + a * z, d + b * y * y, b * y * z - a * x],
        [b * x * z - a * y, b * y * z + a * x, d + b * z * z],
    ])


def _log_single(R: np.ndarray) -> np.ndarray | None:
    (r00, r01, r02), (r10, r11, r12), (r20, r21, r22) = R.tolist()
    sx, sy, sz = 0.5 * (r21 - r12), 0.5 * (r02 - r20), 0.5 * (r10 - r01)
    c = 0.5 * (r00 + r11 + r22 - 1.0)
    sn = math.sqrt(sx * sx + sy * sy + sz * sz)
    th = math.atan2(sn, c)
    if th > math.pi - _NEAR_PI:
        return None
    scale = th / sn if th >= _SMALL_ANGLE else 1.0 + th * th / 6.0
    return np.array([sx * scale, sy * scale, sz * scale])


def log_so3(R) -> np.ndarray:
    """Axis-angle vector of a rotation, angle in [0, pi]. Vectorized over leading dimensions."""
    R = np.asarray(R, dtype=float)
    if R.shape == (3, 3):
        out = _log_single(R)
        if out is not None:
            return out
    lead = R.shape[:-2]
    Rf = R.reshape(-1, 3, 3)
    s = vee(Rf)
    c = 0.5 * (Rf[:, 0, 0] + Rf[:, 1, 1] + Rf[:, 2, 2] - 1.0)
    sn = np.linalg.norm(s, axis=-1)
    th = np.arctan2(sn, c)

    regular = th >= _SMALL_ANGLE
    scale = np.where(regular, th / np.where(sn > 0, sn, 1.0), 1.0 + th * th / 6.0)
    out = s * scale[:, None]

    near_pi = np.nonzero(th > np.pi - _NEAR_PI)[0]
    if near_pi.size:
        cs = c[near_pi]
        # symmetric part is cos(th) I + (1 - cos(th)) u u^T
        M = 0.5 * (Rf[near_pi] + np.swapaxes(Rf[near_pi], -1, -2)) - cs[:, None, None] * np.eye(3)
        diag = np.diagonal(M, axis1=-2, axis2=-1)
        k = np.argmax(diag, axis=-1)
        rows = np.arange(near_pi.size)
        u = M[rows, :, k] / np.sqrt(diag[rows, k] * (1.0 - cs))[:, None]
        u /= np.linalg.norm(u, axis=-1, keepdims=True)
        u[np.sum(u * s[near_pi], axis=-1) < 0] *= -1.0
        out[near_pi] = u * th[near_pi, None]
    return out.reshape(lead + (3,))


def rotation_angle(R) -> np.ndarray | float:
    R = np.asarray(R, dtype=float)
    s = np.linalg.norm(vee(R), axis=-1)
    c = 0.5 * (np.trace(R, axis1=-2, axis2=-1) - 1.0)
    return np.arctan2(s, c)


def cross(a, b) -> np.ndarray:
    """Broadcasting cross product over the last axis (cheaper than np.cross for small stacks)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.stack(
        [
            a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1],
            a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2],
            a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0],
        ],
        axis=-1,
    )


def matmul(A, B) -> np.ndarray:
    """Stacked 3x3 (or small) products without BLAS, so results do not depend on batch size."""
    return np.sum(A[..., :, :, None] * B[..., None, :, :], axis=-2)


def nearest_rotation(M) -> np.ndarray:
    """Closest rotation in Frobenius norm: U diag(1, 1, det(U V^T)) V^T."""
    M = np.asarray(M, dtype=float)
    U, S, Vt = np.linalg.svd(M)
    if S[-1] <= 1e-12:
        raise DegenerateMatrix(f"smallest singular value {S[-1]:.3e} too small")
    d = np.sign(np.linalg.det(U @ Vt))
    return U @ np.diag([1.0, 1.0, d]) @ Vt


def minimal_rotation(v, n) -> np.ndarray:
    """Smallest rotation taking unit vector ``v`` onto unit vector ``n``.

    Vectorized: ``v`` and ``n`` may be (..., 3).
    """
    v = np.asarray(v, dtype=float)
    n = np.asarray(n, dtype=float)
    for name, x in (("v", v), ("n", n)):
        if np.any(np.abs(np.linalg.norm(x, axis=-1) - 1.0) > 1e-9):
            raise ValueError(f"{name} must be a unit vector")
    w = np.cross(v, n)
    c = np.sum(v * n, axis=-1)
    if np.any(c <= -1.0 + 1e-6):
        raise AntiparallelVectors("vectors are (nearly) antiparallel; minimal rotation undefined")
    W = skew(w)
    return np.eye(3) + W + matmul(W, W) / (1.0 + c)[..., None, None]


def rotx(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def roty(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rotz(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rpy_matrix(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """URDF convention: Rz(yaw) Ry(pitch) Rx(roll)."""
    return rotz(yaw) @ roty(pitch) @ rotx(roll)


def is_rotation(R, tol: float = 1e-9) -> bool:
    R = np.asarray(R, dtype=float)
    return (
        R.shape == (3, 3)
        and np.allclose(R.T @ R, np.eye(3), atol=tol)
        and abs(np.linalg.det(R) - 1.0) <= tol
    )


@dataclass(frozen=True)
class Pose:
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        p = np.array(self.position, dtype=float).reshape(3)
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        if not np.all(np.isfinite(p)):
            raise ValueError("pose position must be finite")
        p.flags.writeable = False
        R.flags.writeable = False
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "rotation", R)

    @classmethod
    def from_matrix(cls, T) -> Pose:
        T = np.asarray(T, dtype=float)
        return cls(T[:3, 3], T[:3, :3])

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.position
        return T

    def __matmul__(self, other: Pose) -> Pose:
        return Pose(self.position + self.rotation @ other.position, self.rotation @ other.rotation)

    def inverse(self) -> Pose:
        Rt = self.rotation.T
        return Pose(-Rt @ self.position, Rt)

    def apply(self, points) -> np.ndarray:
        """Map point(s) from this pose's frame into the parent frame."""
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation.T + self.position

    def translated(self, delta) -> Pose:
        return Pose(self.position + np.asarray(delta, dtype=float), self.rotation)


@dataclass(frozen=True)
class Twist:
    linear: np.ndarray = field(default_factory=lambda: np.zeros(3))
    angular: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        v = np.array(self.linear, dtype=float).reshape(3)
        w = np.array(self.angular, dtype=float).reshape(3)
        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(w))):
            raise ValueError("twist components must be finite")
        object.__setattr__(self, "linear", v)
        object.__setattr__(self, "angular", w)

    @classmethod
    def from_vector(cls, xi) -> Twist:
        xi = np.asarray(xi, dtype=float)
        return cls(xi[:3], xi[3:6])

    def vector(self) -> np.ndarray:
        return np.concatenate([self.linear, self.angular])


def retract(X: Pose, xi) -> Pose:
    """phi(X, xi): add the translation part, right-multiply exp of the rotation part."""
    xi = np.asarray(xi, dtype=float)
    return Pose(X.position + xi[:3], X.rotation @ exp_so3(xi[3:6]))


def inverse_retract(X: Pose, Xhat: Pose) -> np.ndarray:
    """The xi with ``retract(Xhat, xi) == X``."""
    dR = Xhat.rotation.T @ X.rotation
    if rotation_angle(dR) >= np.pi - 1e-6:
        raise BranchCut("relative rotation too close to pi for a unique chart value")
    return np.concatenate([X.position - Xhat.position, log_so3(dR)])


def retract_arrays(p, R, xi):
    """Batched retraction on raw arrays: p (..., 3), R (..., 3, 3), xi (..., 6)."""
    xi = np.asarray(xi, dtype=float)
    return p + xi[..., :3], matmul(R, exp_so3(xi[..., 3:6]))


def inverse_retract_arrays(p, R, p_hat, R_hat):
    dR = matmul(np.swapaxes(R_hat, -1, -2), R)
    return np.concatenate([p - p_hat, log_so3(dR)], axis=-1)
