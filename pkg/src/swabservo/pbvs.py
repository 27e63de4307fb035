"""Pose-based visual servo: pose error -> camera twist -> joint velocities."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .kinematics import DEFAULT_DAMPING, N_JOINTS, KinematicChain, camera_jacobian, pseudo_inverse
from .manifold import Twist, cross, log_so3, skew
from .perception import RelativeTarget

SINC_SERIES = 1e-4
SINGULAR_SIGMA = 1e-4


@dataclass(frozen=True)
class ControlParams:
    gain: float = 0.5
    joint_velocity_limits: np.ndarray = field(default_factory=lambda: np.full(N_JOINTS, 1.0))
    max_linear: float = 0.15  # m/s
    max_angular: float = 0.5  # rad/s
    adaptive: Callable[[float], float] | None = None  # optional gain schedule on ||s||
    damping: float = DEFAULT_DAMPING

    def __post_init__(self):
        lim = np.broadcast_to(np.asarray(self.joint_velocity_limits, dtype=float), (N_JOINTS,)).copy()
        object.__setattr__(self, "joint_velocity_limits", lim)
        if self.gain <= 0:
            raise ValueError("gain must be positive")
        if np.any(lim <= 0) or self.max_linear <= 0 or self.max_angular <= 0:
            raise ValueError("limits must be positive")

    def gain_for(self, s_norm: float) -> float:
        return self.gain if self.adaptive is None else float(self.adaptive(s_norm))


@dataclass(frozen=True)
class ControlCommand:
    twist: Twist
    joint_velocities: np.ndarray
    saturated: bool = False
    near_singular: bool = False


def adaptive_gain(lam_zero: float = 1.0, lam_inf: float = 0.5, slope: float = 10.0):
    """Gain that is lam_inf for large errors and rises to lam_zero as the error vanishes."""
    if lam_zero <= 0 or lam_inf <= 0:
        raise ValueError("gains must be positive")
    k = slope / (lam_zero - lam_inf) if lam_zero != lam_inf else 0.0
    return lambda s: (lam_zero - lam_inf) * np.exp(-k * s) + lam_inf


def _sinc(x: float) -> float:
    if abs(x) < SINC_SERIES:
        return 1.0 - x * x / 6.0 + x**4 / 120.0
    return float(np.sin(x) / x)


def theta_u_jacobian(theta_u) -> np.ndarray:
    """L_thetau = I - (theta/2)[u] + (1 - sinc(theta)/sinc^2(theta/2)) [u]^2."""
    theta_u = np.asarray(theta_u, dtype=float)
    theta = float(np.linalg.norm(theta_u))
    if theta < SINC_SERIES:
        # second-order expansion, written in theta*u so it stays smooth through zero
        W = skew(theta_u)
        return np.eye(3) - 0.5 * W + (W @ W) / 12.0
    U = skew(theta_u / theta)
    c = 1.0 - _sinc(theta) / _sinc(0.5 * theta) ** 2
    return np.eye(3) - 0.5 * theta * U + c * U @ U


def interaction_matrix(s_rotation) -> np.ndarray:
    """Block-diagonal L = diag(R, L_thetau(log R)) for the rotation R carried by the feature."""
    R = np.asarray(s_rotation, dtype=float)
    L = np.zeros((6, 6))
    L[:3, :3] = R
    L[3:, 3:] = theta_u_jacobian(log_so3(R))
    return L


def error_vector(error: RelativeTarget) -> tuple[np.ndarray, np.ndarray]:
    """(s, R) where R = rotation of the current camera in the desired frame and s = (R t, log R_e)."""
    R = error.rotation.T
    return np.concatenate([R @ error.translation, log_so3(error.rotation)]), R


def _scale_to(v: np.ndarray, limit: float) -> float:
    n = float(np.linalg.norm(v))
    return 1.0 if n <= limit else limit / n


def camera_twist(error: RelativeTarget, params: ControlParams = ControlParams()) -> tuple[Twist, bool]:
    """lambda L^-1 s, moved from the controlled point to the camera origin, then clamped."""
    s, R = error_vector(error)
    lam = params.gain_for(float(np.linalg.norm(s)))
    u = lam * np.linalg.solve(interaction_matrix(R), s)
    v_point, omega = u[:3], u[3:]
    v = v_point - cross(omega, error.point)
    scale = min(_scale_to(v, params.max_linear), _scale_to(omega, params.max_angular))
    return Twist(scale * v, scale * omega), scale < 1.0


def joint_command(
    chain: KinematicChain, q, v_c: Twist, params: ControlParams = ControlParams(), J=None
) -> ControlCommand:
    """Joint rates through the camera-frame Jacobian, scaled uniformly to respect the rate limits.

    The returned twist is the one the joints actually realize, so it can be fed to the filter.
    Pass `J` when the camera Jacobian at q is already known.
    """
    J = camera_jacobian(chain, q) if J is None else np.asarray(J, dtype=float)
    sigma_min = np.linalg.svd(J, compute_uv=False)[-1]
    vq = pseudo_inverse(J, params.damping) @ v_c.vector()
    ratio = np.max(np.abs(vq) / params.joint_velocity_limits)
    saturated = ratio > 1.0
    if saturated:
        vq = vq / ratio
        v_c = Twist(v_c.linear / ratio, v_c.angular / ratio)
    return ControlCommand(v_c, vq, bool(saturated), bool(sigma_min < SINGULAR_SIGMA))


def control(chain: KinematicChain, q, error: RelativeTarget, params: ControlParams = ControlParams(), J=None):
    v_c, clamped = camera_twist(error, params)
    cmd = joint_command(chain, q, v_c, params, J)
    if clamped and not cmd.saturated:
        cmd = ControlCommand(cmd.twist, cmd.joint_velocities, True, cmd.near_singular)
    return cmd
