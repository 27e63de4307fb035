"""Synthetic ground truth: a small morphable face, head sway, pinhole camera, noisy weak projection, swab keypoints."""
from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import OutOfFrustum
from .manifold import Pose, exp_so3, rotx

# designated vertices in the face frame (x lateral, y down, z into the head)
FACE_CENTER = (0.0, 0.0, 0.0)
NOSTRILS = ((-0.012, 0.030, -0.020), (0.012, 0.030, -0.020))
EYES = ((-0.032, -0.030, 0.0), (0.032, -0.030, 0.0))

# insertion direction in the face frame: forward axis pitched toward the nasal floor
NOSTRIL_PITCH = 0.2


def insertion_direction(pitch: float = NOSTRIL_PITCH) -> np.ndarray:
    return rotx(pitch)[:, 2]


@dataclass(frozen=True)
class MorphableFaceModel:
    mean: np.ndarray  # (V, 3)
    basis: np.ndarray  # (3V, B), rows ordered (x0, y0, z0, x1, ...)
    nostrils: tuple[int, ...]
    center: int
    eyes: tuple[int, ...] = ()

    def __post_init__(self):
        for name in ("mean", "basis"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        V = self.mean.shape[0]
        if self.mean.shape != (V, 3) or self.basis.shape[0] != 3 * V:
            raise ValueError("basis must have 3V rows")
        if any(not 0 <= i < V for i in (*self.nostrils, self.center, *self.eyes)):
            raise ValueError("designated vertex index out of range")

    @property
    def n_vertices(self) -> int:
        return self.mean.shape[0]

    @property
    def n_basis(self) -> int:
        return self.basis.shape[1]


@dataclass(frozen=True)
class GroundTruthFace:
    beta: np.ndarray
    pose: Pose  # face frame -> world, before sway
    sway_pos: np.ndarray = field(default_factory=lambda: np.zeros(3))  # m
    sway_rot: np.ndarray = field(default_factory=lambda: np.zeros(3))  # rad
    sway_freq_pos: np.ndarray = field(default_factory=lambda: np.zeros(3))  # Hz
    sway_freq_rot: np.ndarray = field(default_factory=lambda: np.zeros(3))
    sway_phase: np.ndarray = field(default_factory=lambda: np.zeros(6))
    t: float = 0.0

    def __post_init__(self):
        for name in ("beta", "sway_pos", "sway_rot", "sway_freq_pos", "sway_freq_rot", "sway_phase"):
            object.__setattr__(self, name, np.array(getattr(self, name), dtype=float))
        if np.any(self.sway_pos < 0) or np.any(self.sway_rot < 0):
            raise ValueError("sway amplitudes must be non-negative")

    def pose_at(self, t: float) -> Pose:
        w = 2 * np.pi * t
        dp = self.sway_pos * np.sin(w * self.sway_freq_pos + self.sway_phase[:3])
        dr = self.sway_rot * np.sin(w * self.sway_freq_rot + self.sway_phase[3:])
        return Pose(self.pose.position + dp, self.pose.rotation @ exp_so3(dr))

    def current_pose(self) -> Pose:
        return self.pose_at(self.t)


@dataclass(frozen=True)
class CameraModel:
    K: np.ndarray = field(default_factory=lambda: np.array([[615.0, 0, 320.0], [0, 615.0, 240.0], [0, 0, 1.0]]))
    width: int = 640
    height: int = 480
    near: float = 0.11
    far: float = 2.0
    pose: Pose = field(default_factory=Pose)  # camera -> world

    def __post_init__(self):
        K = np.array(self.K, dtype=float)
        if K.shape != (3, 3) or K[0, 0] <= 0 or K[1, 1] <= 0 or np.any(np.tril(K, -1)):
            raise ValueError("K must be upper triangular with positive focal lengths")
        if not 0 < self.near < self.far:
            raise ValueError("depth range must satisfy 0 < near < far")
        object.__setattr__(self, "K", K)

    def with_pose(self, pose: Pose) -> CameraModel:
        return dataclasses.replace(self, pose=pose)

    @property
    def focal(self) -> float:
        return float(self.K[0, 0])

    def to_camera(self, world_points) -> np.ndarray:
        return (np.asarray(world_points, dtype=float) - self.pose.position) @ self.pose.rotation

    def project(self, cam_points) -> np.ndarray:
        X = np.asarray(cam_points, dtype=float)
        uvw = X @ self.K.T
        return uvw[..., :2] / uvw[..., 2:3]

    def in_image(self, px) -> bool:
        px = np.asarray(px)
        return bool(np.all((px[..., 0] >= 0) & (px[..., 0] < self.width) & (px[..., 1] >= 0) & (px[..., 1] < self.height)))


@dataclass(frozen=True)
class NoiseLevel:
    sigma_pos: float = 0.0  # m
    sigma_rot: float = 0.0  # rad
    p_drop: float = 0.0

    def __post_init__(self):
        if self.sigma_pos < 0 or self.sigma_rot < 0 or not 0 <= self.p_drop <= 1:
            raise ValueError("noise levels must be non-negative and p_drop in [0, 1]")


PAPER_STAGE2 = NoiseLevel(0.0082, 0.030, 0.05)
PAPER_STAGE3 = NoiseLevel(0.0023, 0.017, 0.05)


@dataclass(frozen=True)
class FaceObservation:
    P: np.ndarray  # 3x4 weak projection
    nostril_px: np.ndarray  # (c, r)
    depth: float  # NaN when missing
    center: np.ndarray  # face-centre translation estimate, camera frame
    valid: bool
    t: float
    nostril: int = 0

    @property
    def has_depth(self) -> bool:
        return bool(np.isfinite(self.depth))


@dataclass(frozen=True)
class SwabObservation:
    tip_px: np.ndarray
    shaft_px: np.ndarray
    tip_nominal: np.ndarray  # schematic estimates, camera frame
    shaft_nominal: np.ndarray
    tip_true: np.ndarray  # oracle only: perturbed points actually imaged
    shaft_true: np.ndarray


# ---------------------------------------------------------------- face model


def _mean_vertices() -> np.ndarray:
    xs = np.linspace(-0.07, 0.07, 9)
    ys = np.linspace(-0.09, 0.09, 11)
    X, Y = np.meshgrid(xs, ys)
    X, Y = X.ravel(), Y.ravel()
    keep = ~((np.abs(X) < 1e-12) & (np.abs(Y) < 1e-12))
    X, Y = X[keep], Y[keep]
    # gently curved sheet with a nose ridge toward the camera (negative z)
    nose = -0.025 * np.exp(-((X / 0.015) ** 2) - ((Y - 0.01) / 0.03) ** 2)
    Z = 1.5 * X * X + 0.5 * Y * Y + nose
    grid = np.column_stack([X, Y, Z])
    special = np.array([FACE_CENTER, *NOSTRILS, *EYES])
    return np.vstack([special, grid])


def synthesize_face(seed: int, n_basis: int = 8, shape_scale: float = 0.02, beta_scale: float = 0.3):
    """Deterministic face model plus a ground-truth face with random shape at the world origin.

    The basis is orthogonal with column norm ``shape_scale`` so ``||W beta|| = shape_scale ||beta||``.
    The face-centre vertex does not move with beta.
    """
    rng = np.random.default_rng(seed)
    mean = _mean_vertices()
    V = mean.shape[0]
    G = rng.standard_normal((3 * V, n_basis))
    G[0:3] = 0.0  # centre vertex is index 0
    Qb, _ = np.linalg.qr(G)
    model = MorphableFaceModel(mean, shape_scale * Qb, nostrils=(1, 2), center=0, eyes=(3, 4))
    beta = rng.uniform(-beta_scale, beta_scale, n_basis)
    return model, GroundTruthFace(beta=beta, pose=Pose())


def vertices(model: MorphableFaceModel, beta) -> np.ndarray:
    from .perception import morphable_vertices

    return morphable_vertices(model, beta)


def step_head_motion(face: GroundTruthFace, dt: float) -> GroundTruthFace:
    if dt <= 0:
        raise ValueError("dt must be positive")
    return dataclasses.replace(face, t=face.t + dt)


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def true_face_in_camera(model, face: GroundTruthFace, camera: CameraModel, t: float | None = None):
    """(rotation of face in camera, face-centre, nostril points) all in the camera frame."""
    fp = face.pose_at(face.t if t is None else t)
    verts = vertices(model, face.beta)
    world = fp.apply(verts)
    cam = camera.to_camera(world)
    R = camera.pose.rotation.T @ fp.rotation
    return R, cam[model.center], cam[list(model.nostrils)]


def weak_projection(R_face_cam, center, focal: float) -> np.ndarray:
    """Noiseless weak-perspective matrix; the off-axis viewing direction appears as an extra rotation."""
    px, py, pz = center
    phi = np.array([np.arctan2(py, pz), np.arctan2(px, pz), 0.0])
    s = focal / pz
    P = np.zeros((3, 4))
    P[:, :3] = s * exp_so3(phi) @ R_face_cam
    P[:, 3] = s * np.asarray(center)
    return P


def project_face(
    model: MorphableFaceModel,
    face: GroundTruthFace,
    camera: CameraModel,
    t: float,
    noise_seed,
    noise: NoiseLevel = NoiseLevel(),
    nostril: int = 0,
) -> FaceObservation:
    """Emulate the regressed projection matrix plus a tracked nostril pixel with depth."""
    rng = _rng(noise_seed)
    R, center, nostrils = true_face_in_camera(model, face, camera, t)
    target = nostrils[nostril]
    for pt in (center, target):
        if pt[2] <= 0 or pt[2] > camera.far or not camera.in_image(camera.project(pt)):
            raise OutOfFrustum("face is outside the camera frustum")
    # draw every variate each frame so the stream stays aligned across settings
    drop = rng.random()
    e_block = rng.standard_normal((3, 3))
    e_center = rng.standard_normal(3)
    e_px = rng.standard_normal(2)
    e_depth = rng.standard_normal()

    P = weak_projection(R, center, camera.focal)
    s = camera.focal / center[2]
    P[:, :3] += np.sqrt(2.0) * noise.sigma_rot * s * e_block
    c_est = center + noise.sigma_pos * e_center
    px = camera.project(target) + camera.focal * noise.sigma_pos / target[2] * e_px
    depth = float(target[2] + noise.sigma_pos * e_depth) if target[2] >= camera.near else np.nan
    valid = drop >= noise.p_drop and np.isfinite(depth)
    return FaceObservation(P, px, depth, c_est, bool(valid), float(t), nostril)


OBS_FIELDS = ["t", "valid", "nostril", "c", "r", "depth", "px", "py", "pz"] + [
    f"P{i}{j}" for i in range(3) for j in range(4)
]


def write_observations_csv(observations, path) -> None:
    """One row per face observation, for offline filter analysis. Missing depth is left blank."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(OBS_FIELDS)
        for o in observations:
            depth = f"{o.depth:.9e}" if o.has_depth else ""
            w.writerow([f"{o.t:.6f}", int(o.valid), o.nostril, *(f"{v:.9e}" for v in o.nostril_px), depth,
                        *(f"{v:.9e}" for v in o.center), *(f"{v:.9e}" for v in np.ravel(o.P))])


# ---------------------------------------------------------------- swab


@dataclass(frozen=True)
class SwabPerturbation:
    offset_mean: float = 0.0052
    offset_std: float = 0.0014
    angle_mean: float = np.deg2rad(3.5)
    angle_std: float = np.deg2rad(1.4)

    @classmethod
    def none(cls) -> SwabPerturbation:
        return cls(0.0, 0.0, 0.0, 0.0)


def _perp_unit(axis, rng) -> np.ndarray:
    a = np.asarray(axis, float) / np.linalg.norm(axis)
    ref = np.array([1.0, 0.0, 0.0]) if abs(a[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(a, ref)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(a, e1)
    psi = rng.uniform(0.0, 2 * np.pi)
    return np.cos(psi) * e1 + np.sin(psi) * e2


def perturb_swab(tip, shaft, rng, perturbation: SwabPerturbation = SwabPerturbation()):
    """Bend and shift the swab: tip offset perpendicular to its viewing ray, shaft rotated about the tip.

    Both points keep their range from the camera so that the error lies across the rays.
    """
    tip = np.asarray(tip, float)
    shaft = np.asarray(shaft, float)
    m = abs(perturbation.offset_mean + perturbation.offset_std * rng.standard_normal())
    a = abs(perturbation.angle_mean + perturbation.angle_std * rng.standard_normal())
    offset_dir = _perp_unit(tip, rng)
    tilt_dir = _perp_unit(tip - shaft, rng)
    new_tip = tip + m * offset_dir
    axis = np.cross(tip - shaft, tilt_dir)
    axis = axis / np.linalg.norm(axis) if np.linalg.norm(axis) > 0 else np.zeros(3)
    new_shaft = new_tip + exp_so3(a * axis) @ (shaft - tip)
    new_tip *= np.linalg.norm(tip) / np.linalg.norm(new_tip)
    new_shaft *= np.linalg.norm(shaft) / np.linalg.norm(new_shaft)
    return new_tip, new_shaft


def observe_swab(
    camera: CameraModel,
    swab_true,
    placement_error_seed,
    perturbation: SwabPerturbation = SwabPerturbation(),
) -> SwabObservation:
    """Project the (perturbed) tip and shaft points; the schematic estimates stay nominal.

    ``swab_true`` is the nominal (tip, shaft) pair in the camera frame.
    """
    tip, shaft = (np.asarray(p, float) for p in swab_true)
    rng = _rng(placement_error_seed)
    t_true, s_true = perturb_swab(tip, shaft, rng, perturbation)
    for p in (t_true, s_true):
        if p[2] <= 0 or not camera.in_image(camera.project(p)):
            raise OutOfFrustum("swab keypoint outside the camera frustum")
    return SwabObservation(camera.project(t_true), camera.project(s_true), tip, shaft, t_true, s_true)


def swab_offsets(obs: SwabObservation) -> tuple[float, float]:
    """Positional (m) and angular (rad) placement offset of the imaged swab."""
    d0 = obs.tip_nominal - obs.shaft_nominal
    d1 = obs.tip_true - obs.shaft_true
    c = np.dot(d0, d1) / (np.linalg.norm(d0) * np.linalg.norm(d1))
    return float(np.linalg.norm(obs.tip_true - obs.tip_nominal)), float(np.arccos(np.clip(c, -1.0, 1.0)))


# ---------------------------------------------------------------- configuration


@dataclass(frozen=True)
class SceneConfig:
    seed: int = 0
    focal: float = 615.0
    cx: float = 320.0
    cy: float = 240.0
    width: int = 640
    height: int = 480
    near: float = 0.11
    far: float = 2.0
    stage2: NoiseLevel = NoiseLevel()
    stage3: NoiseLevel = NoiseLevel()
    swab: SwabPerturbation = field(default_factory=SwabPerturbation.none)
    sway_pos: float = 0.0  # m, per axis
    sway_rot: float = 0.0  # rad, per axis
    sway_freq: tuple[float, float] = (0.1, 0.25)  # Hz range
    obs_rate: float = 30.0
    nostril: int = 0

    def camera(self, pose: Pose = Pose()) -> CameraModel:
        K = np.array([[self.focal, 0, self.cx], [0, self.focal, self.cy], [0, 0, 1.0]])
        return CameraModel(K, self.width, self.height, self.near, self.far, pose)


def noiseless_config(seed: int = 0) -> SceneConfig:
    return SceneConfig(seed=seed)


def paper_config(seed: int = 0) -> SceneConfig:
    return SceneConfig(
        seed=seed, stage2=PAPER_STAGE2, stage3=PAPER_STAGE3, swab=SwabPerturbation(),
        sway_pos=0.0015, sway_rot=0.003,
    )


PRESETS = {"none": noiseless_config, "paper": paper_config}

_FLAT_KEYS = {
    "seed": int, "focal": float, "cx": float, "cy": float, "width": int, "height": int, "near": float,
    "far": float, "sway_pos": float, "sway_rot": float, "obs_rate": float, "nostril": int,
}
_NESTED = {
    "stage2.sigma_pos": ("stage2", "sigma_pos"), "stage2.sigma_rot": ("stage2", "sigma_rot"),
    "stage2.p_drop": ("stage2", "p_drop"), "stage3.sigma_pos": ("stage3", "sigma_pos"),
    "stage3.sigma_rot": ("stage3", "sigma_rot"), "stage3.p_drop": ("stage3", "p_drop"),
    "swab.offset_mean": ("swab", "offset_mean"), "swab.offset_std": ("swab", "offset_std"),
    "swab.angle_mean": ("swab", "angle_mean"), "swab.angle_std": ("swab", "angle_std"),
}


def parse_scene_config(text: str, base: SceneConfig | None = None, source: str = "<scene>") -> SceneConfig:
    """key = value lines; `preset = paper|none` first resets the base. Angles in radians."""
    cfg = base or SceneConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            if key == "preset":
                if value not in PRESETS:
                    raise ValueError(f"unknown preset {value!r}")
                cfg = PRESETS[value](cfg.seed)
            elif key in _FLAT_KEYS:
                cfg = dataclasses.replace(cfg, **{key: _FLAT_KEYS[key](value)})
            elif key == "sway_freq":
                lo, hi = (float(v) for v in value.replace(",", " ").split())
                cfg = dataclasses.replace(cfg, sway_freq=(lo, hi))
            elif key in _NESTED:
                group, name = _NESTED[key]
                sub = dataclasses.replace(getattr(cfg, group), **{name: float(value)})
                cfg = dataclasses.replace(cfg, **{group: sub})
            else:
                raise ValueError(f"unknown key {key!r}")
        except ValueError as exc:
            raise ValueError(f"{source}:{lineno}: {exc}") from None
    return cfg


def load_scene_config(path: str | Path, base: SceneConfig | None = None) -> SceneConfig:
    return parse_scene_config(Path(path).read_text(), base, str(path))


def sample_sway(cfg: SceneConfig, rng) -> dict:
    lo, hi = cfg.sway_freq
    return dict(
        sway_pos=np.full(3, cfg.sway_pos),
        sway_rot=np.full(3, cfg.sway_rot),
        sway_freq_pos=rng.uniform(lo, hi, 3),
        sway_freq_rot=rng.uniform(lo, hi, 3),
        sway_phase=rng.uniform(0, 2 * np.pi, 6),
    )


def nominal_swab_camera(chain) -> tuple[np.ndarray, np.ndarray]:
    """Nominal swab tip and shaft point in the camera frame for a chain."""
    inv = chain.camera.inverse()
    return inv.apply(chain.swab_tip), inv.apply(chain.swab_shaft)

