"""Unscented Kalman filter on SE(3) for the face pose seen from the moving camera.

State X = (p, R): nostril position and face rotation in the camera frame. The camera twist
commanded by the controller drives the process model; decoded face poses are the measurements.
Process noise is a perturbation of the commanded twist, so its covariance enters through the
same nonlinear map as the command.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CovarianceNotPSD
from .manifold import Pose, Twist, cross, exp_so3, inverse_retract_arrays, matmul, retract_arrays, skew

DIM = 6
EIG_FLOOR = 1e-12
CLAMP_LIMIT = 1e-6


@dataclass(frozen=True)
class SigmaWeights:
    """Scaled unscented weights for dimension d and spread alpha."""

    d: int
    alpha: float

    @property
    def lam(self) -> float:
        return (self.alpha**2 - 1.0) * self.d

    @property
    def spread(self) -> float:
        return float(np.sqrt(self.d + self.lam))

    @property
    def wj(self) -> float:
        return 1.0 / (2.0 * (self.d + self.lam))

    @property
    def wm0(self) -> float:
        return self.lam / (self.lam + self.d)

    @property
    def wc0(self) -> float:
        return self.lam / (self.lam + self.d) + 3.0 - self.alpha**2


@dataclass(frozen=True)
class UkfParams:
    Q: np.ndarray = field(default_factory=lambda: 0.01 * np.eye(DIM))
    R_meas: np.ndarray = field(default_factory=lambda: np.diag([0.005] * 3 + [0.05] * 3))
    alpha: tuple[float, float, float] = (0.01, 0.1, 0.01)  # state propagation, noise, update

    def __post_init__(self):
        Q = np.array(self.Q, dtype=float)
        Rm = np.array(self.R_meas, dtype=float)
        if Q.shape != (DIM, DIM) or Rm.shape != (DIM, DIM):
            raise ValueError("Q and R_meas must be 6x6")
        if np.any(np.linalg.eigvalsh(0.5 * (Q + Q.T)) < -1e-12):
            raise ValueError("Q must be positive semidefinite")
        if np.any(np.linalg.eigvalsh(0.5 * (Rm + Rm.T)) <= 0):
            raise ValueError("R_meas must be positive definite")
        if len(self.alpha) != 3 or min(self.alpha) <= 0:
            raise ValueError("scale parameters must be three positive numbers")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R_meas", Rm)
        object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))


@dataclass(frozen=True)
class UkfState:
    X: Pose
    P: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        P = np.array(self.P, dtype=float)
        if P.shape != (DIM, DIM):
            raise ValueError("covariance must be 6x6")
        object.__setattr__(self, "P", P)


def initial_state(measurement: Pose, params: UkfParams, t: float = 0.0) -> UkfState:
    """Start at a first measurement with the measurement covariance."""
    return UkfState(measurement, params.R_meas.copy(), t)


def repair_covariance(P) -> np.ndarray:
    """Symmetrize and clamp eigenvalues at a tiny floor; raise if that moves too much mass."""
    P = np.asarray(P, dtype=float)
    S = 0.5 * (P + P.T)
    vals, vecs = np.linalg.eigh(S)
    if vals.min() >= EIG_FLOOR:
        return S
    clamped = np.maximum(vals, EIG_FLOOR)
    if np.sum(clamped - vals) > CLAMP_LIMIT:
        raise CovarianceNotPSD(f"covariance has eigenvalue {vals.min():.3e}")
    out = (vecs * clamped) @ vecs.T
    return 0.5 * (out + out.T)


def _sqrt_psd(M) -> np.ndarray:
    """Rows r_j with sum_j r_j r_j^T = M (Cholesky when possible)."""
    try:
        return np.linalg.cholesky(M).T
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(0.5 * (M + M.T))
        return (vecs * np.sqrt(np.maximum(vals, 0.0))).T


def process(p, R, v_lin, v_ang, dt):
    """Batched process model: the target is fixed in the world while the camera moves."""
    p_new = p + dt * (-v_lin - cross(v_ang, p))
    return p_new, matmul(exp_so3(-dt * v_ang), R)


def _covariance_from(xis, w: SigmaWeights):
    mean = w.wj * np.sum(xis, axis=0)
    dev = xis - mean
    return w.wj * dev.T @ dev + w.wc0 * np.outer(mean, mean)


def propagate(state: UkfState, command: Twist, dt: float, params: UkfParams) -> UkfState:
    if dt <= 0:
        raise ValueError("dt must be positive")
    P = repair_covariance(state.P)
    p0, R0 = state.X.position, state.X.rotation
    v, w = command.linear, command.angular

    ws = SigmaWeights(DIM, params.alpha[0])
    wn = SigmaWeights(DIM, params.alpha[1])
    xis = ws.spread * _sqrt_psd(P)
    noise = wn.spread * _sqrt_psd(params.Q)
    xis = np.concatenate([xis, -xis])
    noise = np.concatenate([noise, -noise])
    sp, sR = retract_arrays(p0, R0, xis)
    # one batched pass: mean, state sigma points, noise sigma points
    n = 2 * DIM
    P_all = np.concatenate([p0[None], sp, np.broadcast_to(p0, (n, 3))])
    R_all = np.concatenate([R0[None], sR, np.broadcast_to(R0, (n, 3, 3))])
    V_all = np.concatenate([np.broadcast_to(v, (n + 1, 3)), v + noise[:, :3]])
    W_all = np.concatenate([np.broadcast_to(w, (n + 1, 3)), w + noise[:, 3:]])
    p_out, R_out = process(P_all, R_all, V_all, W_all, dt)
    p_new, R_new = p_out[0], R_out[0]
    chart = inverse_retract_arrays(p_out[1:], R_out[1:], p_new, R_new)
    P_out = _covariance_from(chart[:n], ws) + _covariance_from(chart[n:], wn)
    return UkfState(Pose(p_new, R_new), repair_covariance(P_out), state.t + dt)


def update(state: UkfState, measurement: Pose, params: UkfParams) -> UkfState:
    """Full-pose measurement; innovation taken in the chart at the prior mean."""
    P = repair_covariance(state.P)
    X = state.X
    wu = SigmaWeights(DIM, params.alpha[2])
    xis = wu.spread * _sqrt_psd(P)
    xis = np.concatenate([xis, -xis])
    sp, sR = retract_arrays(X.position, X.rotation, xis)
    ys = inverse_retract_arrays(sp, sR, X.position, X.rotation)
    y_bar = wu.wj * np.sum(ys, axis=0)  # the centre point maps to zero
    dev = ys - y_bar
    P_yy = wu.wc0 * np.outer(y_bar, y_bar) + wu.wj * dev.T @ dev + params.R_meas
    P_xy = wu.wj * xis.T @ dev
    K = np.linalg.solve(P_yy, P_xy.T).T
    y = inverse_retract_arrays(measurement.position, measurement.rotation, X.position, X.rotation)
    xi = K @ (y - y_bar)
    p_new, R_new = retract_arrays(X.position, X.rotation, xi)
    P_new = repair_covariance(P - K @ P_yy @ K.T)
    return UkfState(Pose(p_new, R_new), P_new, state.t)


def step(state: UkfState, command: Twist, dt: float, maybe_measurement: Pose | None, params: UkfParams) -> UkfState:
    """Propagate with the command, then fold in the measurement if there is one."""
    out = propagate(state, command, dt, params)
    if maybe_measurement is not None:
        out = update(out, maybe_measurement, params)
    return out


def process_jacobian(p, v_ang, dt) -> np.ndarray:
    """Linearized translation block (used by tests and the classical-filter comparison)."""
    return np.eye(3) - dt * skew(v_ang)
