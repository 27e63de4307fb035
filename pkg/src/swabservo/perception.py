"""Measurement side: rotation from the weak projection, nostril back-projection, swab ray fit, relative targets."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateMatrix,
    DegenerateProjection,
    DimensionMismatch,
    IllConditionedRay,
    MissingDepth,
)
from .manifold import exp_so3, minimal_rotation, nearest_rotation, rotation_angle, rotx
from .scene import FaceObservation, MorphableFaceModel, SwabObservation, insertion_direction

GATE_ANGLE = 0.5
GATE_RESET = 5


@dataclass(frozen=True)
class DecodedFacePose:
    R: np.ndarray  # face in camera frame
    p: np.ndarray  # nostril, camera frame
    valid: bool = True
    gated: bool = False


@dataclass(frozen=True)
class SwabPose:
    tip: np.ndarray
    shaft: np.ndarray
    direction: np.ndarray

    @classmethod
    def from_points(cls, tip, shaft) -> SwabPose:
        tip = np.asarray(tip, float)
        shaft = np.asarray(shaft, float)
        d = tip - shaft
        return cls(tip, shaft, d / np.linalg.norm(d))


@dataclass(frozen=True)
class RelativeTarget:
    """Pose error in the current camera frame.

    ``translation`` is where the controlled point should go relative to where it is,
    ``rotation`` is the desired camera orientation expressed in the current camera frame,
    ``point`` is the controlled point (camera origin for stage 2, swab tip for stage 3).
    """

    translation: np.ndarray
    rotation: np.ndarray
    stage: int
    point: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if self.stage not in (2, 3):
            raise ValueError("stage must be 2 or 3")
        object.__setattr__(self, "translation", np.asarray(self.translation, float))
        object.__setattr__(self, "rotation", np.asarray(self.rotation, float))
        object.__setattr__(self, "point", np.asarray(self.point, float))

    @property
    def position_error(self) -> float:
        return float(np.linalg.norm(self.translation))

    @property
    def rotation_error(self) -> float:
        return float(rotation_angle(self.rotation))


def morphable_vertices(model: MorphableFaceModel, beta, rows=None) -> np.ndarray:
    """u = mean + W beta, optionally restricted to a subset of vertex indices."""
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (model.n_basis,):
        raise DimensionMismatch(f"beta has shape {beta.shape}, expected ({model.n_basis},)")
    if rows is None:
        idx = np.arange(model.n_vertices)
    else:
        idx = np.asarray(rows, dtype=int).reshape(-1)
    W = model.basis.reshape(model.n_vertices, 3, model.n_basis)[idx]
    # row-wise reduction so a subset gives bit-identical rows
    return model.mean[idx] + np.sum(W * beta, axis=-1)


def recover_rotation(P_measured, p) -> np.ndarray:
    """Closest rotation to the 3x3 block, then undo the apparent off-axis rotation toward p."""
    P = np.asarray(P_measured, dtype=float)
    p = np.asarray(p, dtype=float)
    if p[2] <= 0:
        raise DegenerateProjection("face centre must be in front of the camera")
    try:
        R_tilde = nearest_rotation(P[:, :3])
    except DegenerateMatrix as exc:
        raise DegenerateProjection(str(exc)) from None
    phi = np.array([np.arctan2(p[1], p[2]), np.arctan2(p[0], p[2]), 0.0])
    return exp_so3(phi).T @ R_tilde


def backproject_nostril(K, c: float, r: float, depth) -> np.ndarray:
    if depth is None or not np.isfinite(depth):
        raise MissingDepth("no depth sample at the nostril pixel")
    if depth <= 0:
        raise ValueError("depth must be positive")
    return np.linalg.solve(np.asarray(K, float), np.array([c, r, 1.0])) * float(depth)


def _ray(K, px) -> np.ndarray:
    return np.linalg.solve(np.asarray(K, float), np.array([px[0], px[1], 1.0]))


def _fit_point(ray, X) -> np.ndarray:
    cos = np.dot(ray, X) / (np.linalg.norm(ray) * np.linalg.norm(X))
    if cos < np.cos(np.pi / 4):
        raise IllConditionedRay("back-projected ray is more than 45 degrees from the schematic point")
    return (np.dot(ray, X) / np.dot(ray, ray)) * ray


def fit_swab(obs: SwabObservation, K) -> SwabPose:
    """Place each schematic keypoint on its pixel ray at the least-squares depth."""
    if np.allclose(obs.tip_px, obs.shaft_px):
        raise IllConditionedRay("tip and shaft pixels coincide")
    tip = _fit_point(_ray(K, obs.tip_px), obs.tip_nominal)
    shaft = _fit_point(_ray(K, obs.shaft_px), obs.shaft_nominal)
    return SwabPose.from_points(tip, shaft)


class OutlierGate:
    """Rejects a decode whose rotation jumps more than `angle` from the last accepted one.

    After `reset_after` consecutive rejections the gate re-seeds from the next decode.
    """

    def __init__(self, angle: float = GATE_ANGLE, reset_after: int = GATE_RESET):
        self.angle = angle
        self.reset_after = reset_after
        self.last: np.ndarray | None = None
        self.rejections = 0

    def accept(self, R) -> bool:
        if self.last is None or self.rejections >= self.reset_after:
            ok = True
        else:
            ok = rotation_angle(self.last.T @ R) <= self.angle
        if ok:
            self.last = np.array(R)
            self.rejections = 0
        else:
            self.rejections += 1
        return ok


def decode_face(obs: FaceObservation, K, gate: OutlierGate | None = None) -> DecodedFacePose:
    """Full face measurement; `valid` is False on dropout, missing depth, degeneracy or gating."""
    nan = DecodedFacePose(np.eye(3), np.full(3, np.nan), valid=False)
    if not obs.valid:
        return nan
    try:
        R = recover_rotation(obs.P, obs.center)
        p = backproject_nostril(K, obs.nostril_px[0], obs.nostril_px[1], obs.depth)
    except (MissingDepth, DegenerateProjection, ValueError):
        return nan
    if gate is not None and not gate.accept(R):
        return DecodedFacePose(R, p, valid=False, gated=True)
    return DecodedFacePose(R, p)


def standoff_offset(standoff: float, pitch: float) -> np.ndarray:
    """Face-frame vector from the nostril to the desired camera origin."""
    return -standoff * insertion_direction(pitch)


def relative_target_stage2(decoded: DecodedFacePose, camera_standoff: float = 0.30, desired_pitch: float = 0.2):
    """Camera `camera_standoff` metres out along the insertion axis, looking along it."""
    R = np.asarray(decoded.R, float)
    t = np.asarray(decoded.p, float) + R @ standoff_offset(camera_standoff, desired_pitch)
    return RelativeTarget(t, R @ rotx(desired_pitch), 2)


def relative_target_stage3(decoded: DecodedFacePose, swab: SwabPose, desired_pitch: float = 0.2):
    """Tip onto the nostril; swab axis onto the insertion direction by the smallest rotation."""
    n = np.asarray(decoded.R, float) @ insertion_direction(desired_pitch)
    R_err = minimal_rotation(swab.direction, n / np.linalg.norm(n))
    return RelativeTarget(np.asarray(decoded.p, float) - swab.tip, R_err, 3, swab.tip)
