"""Trial orchestration: sentry -> approach -> final alignment, plus outcome scoring."""
from __future__ import annotations

import csv
import dataclasses
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import IllConditionedRay, InfeasibleCell, LutInfeasible, OutOfFrustum, StageTimeout
from .kinematics import (
    SUCCESS,
    CollisionGeometry,
    KinematicChain,
    camera_pose,
    camera_pose_and_jacobian,
    forward_kinematics,
    solve_ik_batch,
)
from .lut import LutTable, _seed_configs, face_frame_rotation, query
from .manifold import Pose, exp_so3, log_so3, rotation_angle
from .pbvs import ControlParams, control
from .perception import (
    DecodedFacePose,
    OutlierGate,
    RelativeTarget,
    decode_face,
    fit_swab,
    relative_target_stage2,
    relative_target_stage3,
)
from .scene import (
    GroundTruthFace,
    SceneConfig,
    insertion_direction,
    nominal_swab_camera,
    observe_swab,
    project_face,
    sample_sway,
    synthesize_face,
    true_face_in_camera,
)
from .ukfm import UkfParams, initial_state, propagate, update

SENTRY, APPROACH, ALIGN, DONE = 1, 2, 3, 4
STAGE_NAMES = {SENTRY: "sentry", APPROACH: "approach", ALIGN: "final-align", DONE: "done"}
SUCCESS_RADIUS = 0.005
EXTENSION_TARGET = 0.13

LOG_FIELDS = (
    ["t", "stage"]
    + [f"raw_{k}" for k in ("x", "y", "z", "rx", "ry", "rz")]
    + [f"filt_{k}" for k in ("x", "y", "z", "rx", "ry", "rz")]
    + ["cov_trace"]
    + [f"vc_{k}" for k in ("vx", "vy", "vz", "wx", "wy", "wz")]
    + [f"vq{i}" for i in range(1, 8)]
    + [f"q{i}" for i in range(1, 8)]
)


def _default_thresholds():
    return {APPROACH: (0.010, np.deg2rad(2.0)), ALIGN: (0.003, np.deg2rad(1.0))}


@dataclass(frozen=True)
class StageContext:
    stage: int = SENTRY
    entry_time: float = 0.0
    thresholds: dict = field(default_factory=_default_thresholds)
    timeout: float = 60.0
    debounce: int = 10
    streak: int = 0

    def __post_init__(self):
        if any(p <= 0 or r <= 0 for p, r in self.thresholds.values()):
            raise ValueError("thresholds must be positive")
        if self.timeout <= 0 or self.debounce < 1:
            raise ValueError("timeout must be positive and debounce at least 1")

    def advance(self, t: float) -> StageContext:
        return dataclasses.replace(self, stage=min(self.stage + 1, DONE), entry_time=t, streak=0)

    def timed_out(self, t: float) -> bool:
        return self.stage in self.thresholds and t - self.entry_time > self.timeout


def stage_transition(ctx: StageContext, filtered_error: RelativeTarget, t: float | None = None) -> StageContext:
    """Debounced advance: the error must sit under both thresholds for `debounce` consecutive ticks."""
    if ctx.stage not in ctx.thresholds:
        return ctx
    pos, rot = ctx.thresholds[ctx.stage]
    if filtered_error.position_error < pos and filtered_error.rotation_error < rot:
        streak = ctx.streak + 1
        if streak >= ctx.debounce:
            return ctx.advance(ctx.entry_time if t is None else t)
        return dataclasses.replace(ctx, streak=streak)
    return dataclasses.replace(ctx, streak=0)


@dataclass(frozen=True)
class TrialRegion:
    """Where trial faces are placed: nostril heading, radius and height, plus head yaw/pitch jitter."""

    phi: tuple[float, float] = (np.deg2rad(-25.0), np.deg2rad(25.0))
    r: tuple[float, float] = (0.52, 0.60)
    z: tuple[float, float] = (1.32, 1.44)
    head_jitter: float = np.deg2rad(5.0)


@dataclass(frozen=True)
class MissionConfig:
    control_rate: float = 100.0
    stage_timeout: float = 60.0
    debounce: int = 10
    thresholds: dict = field(default_factory=_default_thresholds)
    control: ControlParams = field(default_factory=ControlParams)
    filter: UkfParams = field(default_factory=UkfParams)
    standoff: float = 0.30
    pitch: float = 0.2
    joint_speed: float = 1.0  # rad/s for the stage-1 joint move
    region: TrialRegion = field(default_factory=TrialRegion)
    extension_step: float = 0.005
    max_extension: float = 0.30
    settle_time: float = 4.0  # keep servoing after final alignment before scoring

    @property
    def dt(self) -> float:
        return 1.0 / self.control_rate


@dataclass(frozen=True)
class TrialResult:
    seed: int
    status: str  # "ok", "LutInfeasible", "StageTimeout", ...
    reached_nostril: bool
    distance: float
    pitch_error_deg: float
    yaw_error_deg: float
    duration: float
    extension: float
    stage_reached: int
    log_path: str = ""
    raw_pos_std: tuple = (np.nan, np.nan)  # per stage 2, 3 (m, mean of per-axis std)
    filt_pos_std: tuple = (np.nan, np.nan)
    raw_rot_std: tuple = (np.nan, np.nan)  # rad
    filt_rot_std: tuple = (np.nan, np.nan)

    def __post_init__(self):
        if not (self.distance >= 0 or np.isnan(self.distance)):
            raise ValueError("distance must be non-negative")


# ---------------------------------------------------------------- scene setup


def place_face(cfg: SceneConfig, region: TrialRegion, seed: int):
    """Face model and ground-truth head for a trial; the chosen nostril lands inside `region`."""
    rng = np.random.default_rng([int(seed), 0])
    model, face = synthesize_face(cfg.seed + int(seed))
    phi = rng.uniform(*region.phi)
    r = rng.uniform(*region.r)
    z = rng.uniform(*region.z)
    jitter = rng.uniform(-region.head_jitter, region.head_jitter, 2)
    R = face_frame_rotation(phi) @ exp_so3([jitter[0], jitter[1], 0.0])
    nostril_world = np.array([r * np.cos(phi), r * np.sin(phi), z])
    nostril_face = model.mean[model.nostrils[cfg.nostril]] + (
        model.basis.reshape(model.n_vertices, 3, -1)[model.nostrils[cfg.nostril]] @ face.beta
    )
    pose = Pose(nostril_world - R @ nostril_face, R)
    face = dataclasses.replace(face, pose=pose, **sample_sway(cfg, rng))
    return model, face


def nostril_world(model, face: GroundTruthFace, t: float, nostril: int = 0) -> np.ndarray:
    fp = face.pose_at(t)
    idx = model.nostrils[nostril]
    local = model.mean[idx] + model.basis.reshape(model.n_vertices, 3, -1)[idx] @ face.beta
    return fp.apply(local)


def camera_ik(chain: KinematicChain, q0, camera_target: Pose, geometry=None, tol=1e-6, max_iters=300,
              extra_seeds: int = 0, seed: int = 0):
    """Joint configuration placing the camera at `camera_target`, or None.

    Starts from q0; with `extra_seeds` > 0 also tries that many random seeds and keeps the first success.
    """
    flange = camera_target @ chain.camera.inverse()
    Q0 = np.asarray(q0, float)[None]
    if extra_seeds:
        Q0 = np.vstack([Q0, _seed_configs(chain, extra_seeds, np.random.default_rng(seed), flange.position)])
    Q, status, _ = solve_ik_batch(chain, Q0, flange.position, flange.rotation, max_iters, tol, 0.5, geometry)
    hits = np.nonzero(status == SUCCESS)[0]
    return Q[hits[0]] if hits.size else None


def desired_camera(face_pose: Pose, nostril_w, standoff: float = 0.30, pitch: float = 0.2) -> Pose:
    """World pose of the stage-2 goal camera."""
    n = face_pose.rotation @ insertion_direction(pitch)
    return Pose(np.asarray(nostril_w) - standoff * n, face_pose.rotation @ exp_so3([pitch, 0.0, 0.0]))


# ---------------------------------------------------------------- extension


def workspace_extension(
    chain: KinematicChain,
    geometry: CollisionGeometry | None,
    q_terminal,
    pitch: float = 0.2,
    max_extend: float = 0.30,
    step: float = 0.005,
    face_rotation=None,
) -> float:
    """Largest forward displacement of the swab reachable in `step` increments from q_terminal.

    The direction is the face's insertion direction when `face_rotation` is given, otherwise
    the current swab axis. Orientation is held fixed; the sweep stops at the first failure.
    """
    if step <= 0 or max_extend < 0:
        raise ValueError("step must be positive and max_extend non-negative")
    q = np.asarray(q_terminal, dtype=float)
    start = forward_kinematics(chain, q)
    if face_rotation is not None:
        direction = np.asarray(face_rotation, float) @ insertion_direction(pitch)
    else:
        direction = start.rotation @ (chain.swab_tip - chain.swab_shaft)
    direction = direction / np.linalg.norm(direction)
    reached = 0.0
    n_steps = int(np.floor(max_extend / step + 1e-9))
    for i in range(1, n_steps + 1):
        d = i * step
        Q, status, _ = solve_ik_batch(chain, q[None], start.position + d * direction, start.rotation,
                                      100, 1e-4, 0.5, geometry)
        if status[0] != SUCCESS:
            break
        q, reached = Q[0], d
    return reached


# ---------------------------------------------------------------- trial loop


def _fmt(values) -> list[str]:
    return [f"{v:.9e}" for v in values]


def _angles(direction_world, face_rotation, pitch):
    d = face_rotation.T @ direction_world
    p = np.arctan2(-d[1], d[2])
    y = np.arctan2(d[0], d[2])
    return np.rad2deg(p - pitch), np.rad2deg(y)


def _std(errors) -> float:
    if len(errors) < 2:
        return float("nan")
    return float(np.mean(np.std(np.asarray(errors), axis=0)))


@dataclass
class _Stats:
    raw_pos: dict = field(default_factory=lambda: {APPROACH: [], ALIGN: []})
    filt_pos: dict = field(default_factory=lambda: {APPROACH: [], ALIGN: []})
    raw_rot: dict = field(default_factory=lambda: {APPROACH: [], ALIGN: []})
    filt_rot: dict = field(default_factory=lambda: {APPROACH: [], ALIGN: []})

    def summary(self):
        def pair(d):
            return tuple(_std(d[s]) for s in (APPROACH, ALIGN))

        return dict(raw_pos_std=pair(self.raw_pos), filt_pos_std=pair(self.filt_pos),
                    raw_rot_std=pair(self.raw_rot), filt_rot_std=pair(self.filt_rot))


def run_trial(
    chain: KinematicChain,
    geometry: CollisionGeometry | None,
    table: LutTable,
    scene_config: SceneConfig,
    seed: int,
    mission: MissionConfig = MissionConfig(),
    log_path: str | Path | None = None,
) -> TrialResult:
    """One seeded trial. Failures are recorded in the result rather than raised."""
    dt = mission.dt
    model, face = place_face(scene_config, mission.region, seed)
    rows: list[list[str]] = []
    stats = _Stats()
    tick = 0
    t = 0.0
    q = np.array(chain.home, dtype=float)

    def finish(status, stage, q_end, extension=0.0, ok=False, dist=np.nan, pitch=np.nan, yaw=np.nan):
        if log_path is not None:
            _write_log(log_path, rows)
        return TrialResult(int(seed), status, bool(ok), float(dist), float(pitch), float(yaw), float(t),
                           float(extension), int(stage), str(log_path or ""), **stats.summary())

    def log(stage, raw, filt, cov, vc, vq, qq):
        blank6 = [""] * 6
        rows.append(
            _fmt([t]) + [str(stage)]
            + (_fmt(raw) if raw is not None else blank6)
            + (_fmt(filt) if filt is not None else blank6)
            + (_fmt([cov]) if cov is not None else [""])
            + _fmt(vc) + _fmt(vq) + _fmt(qq)
        )

    # stage 1: look up the start configuration and move there in joint space
    try:
        entry = query(table, nostril_world(model, face, 0.0, scene_config.nostril))
    except InfeasibleCell:
        return finish(LutInfeasible.__name__, SENTRY, q)
    q_goal = entry.q_best
    n_move = max(1, int(np.ceil(np.max(np.abs(q_goal - q)) / (mission.joint_speed * dt))))
    vq_move = (q_goal - q) / (n_move * dt)
    for k in range(n_move):
        log(SENTRY, None, None, None, np.zeros(6), vq_move, q)
        q = q + vq_move * dt
        tick += 1
        t = tick * dt
    q = q_goal.copy()

    ctx = StageContext(APPROACH, t, mission.thresholds, mission.stage_timeout, mission.debounce)
    cam0 = scene_config.camera()
    K = cam0.K
    placement_rng = np.random.default_rng([int(seed), 2])
    obs_rng = np.random.default_rng([int(seed), 1])
    try:
        swab_obs = observe_swab(cam0, nominal_swab_camera(chain), placement_rng, scene_config.swab)
        swab_est = fit_swab(swab_obs, K)
    except (OutOfFrustum, IllConditionedRay):
        return finish("SwabNotVisible", APPROACH, q)

    gate = OutlierGate()
    state = None
    obs_period = 1.0 / scene_config.obs_rate
    t_first, n_obs = t, 0
    while True:
        cam_pose, J = camera_pose_and_jacobian(chain, q)
        camera = cam0.with_pose(cam_pose)
        R_true, _, nostrils = true_face_in_camera(model, face, camera, t)
        p_true = nostrils[scene_config.nostril]
        noise = scene_config.stage2 if ctx.stage == APPROACH else scene_config.stage3
        bucket = min(ctx.stage, ALIGN)

        raw = None
        if t >= t_first + n_obs * obs_period - 1e-9:
            n_obs += 1
            try:
                obs = project_face(model, face, camera, t, obs_rng, noise, scene_config.nostril)
                dec = decode_face(obs, K, gate)
            except OutOfFrustum:
                dec = DecodedFacePose(np.eye(3), np.full(3, np.nan), valid=False)
            if dec.valid:
                meas = Pose(dec.p, dec.R)
                raw = np.concatenate([dec.p, log_so3(dec.R)])
                stats.raw_pos[bucket].append(dec.p - p_true)
                stats.raw_rot[bucket].append(log_so3(R_true.T @ dec.R))
                state = initial_state(meas, mission.filter, t) if state is None else update(state, meas, mission.filter)

        if state is None:
            log(ctx.stage, raw, None, None, np.zeros(6), np.zeros(7), q)
            q_next = q
            cmd = None
        else:
            est = DecodedFacePose(state.X.rotation, state.X.position)
            stats.filt_pos[bucket].append(state.X.position - p_true)
            stats.filt_rot[bucket].append(log_so3(R_true.T @ state.X.rotation))
            if ctx.stage == APPROACH:
                err = relative_target_stage2(est, mission.standoff, mission.pitch)
            else:
                err = relative_target_stage3(est, swab_est, mission.pitch)
            new_ctx = stage_transition(ctx, err, t)
            cmd = control(chain, q, err, mission.control, J)
            filt = np.concatenate([state.X.position, log_so3(state.X.rotation)])
            log(ctx.stage, raw, filt, float(np.trace(state.P)), cmd.twist.vector(), cmd.joint_velocities, q)
            if ctx.stage == DONE and t >= ctx.entry_time + mission.settle_time - 1e-9:
                break
            if new_ctx.stage != ctx.stage:
                gate = OutlierGate()
            ctx = new_ctx
            q_next = np.clip(q + cmd.joint_velocities * dt, chain.lower, chain.upper)
        if ctx.timed_out(t):
            return finish(StageTimeout.__name__, ctx.stage, q)
        q = q_next
        if cmd is not None:
            state = propagate(state, cmd.twist, dt, mission.filter)
        tick += 1
        t = tick * dt

    cam_pose = camera_pose(chain, q)
    tip = cam_pose.apply(swab_obs.tip_true)
    axis = cam_pose.rotation @ (swab_obs.tip_true - swab_obs.shaft_true)
    face_pose = face.pose_at(t)
    dist = float(np.linalg.norm(tip - nostril_world(model, face, t, scene_config.nostril)))
    pitch_err, yaw_err = _angles(axis / np.linalg.norm(axis), face_pose.rotation, mission.pitch)
    ext = workspace_extension(chain, geometry, q, mission.pitch, mission.max_extension, mission.extension_step,
                              face_rotation=face_pose.rotation)
    return finish("ok", DONE, q, ext, dist < SUCCESS_RADIUS, dist, pitch_err, yaw_err)


def _write_log(path, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_FIELDS)
        w.writerows(rows)


# ---------------------------------------------------------------- convergence helper


def servo_decay(
    chain: KinematicChain,
    face_position=(0.56, 0.0, 1.38),
    offset=0.10,
    angle=np.deg2rad(20.0),
    duration: float = 14.0,
    mission: MissionConfig = MissionConfig(),
    q_seed=None,
    seed: int = 0,
):
    """Noiseless stage-2 servo from a camera displaced by (offset, angle) from the goal.

    Returns (times, translation error norms, rotation error angles) measured against ground truth.
    """
    cfg = SceneConfig()
    model, face = synthesize_face(seed)
    phi = np.arctan2(face_position[1], face_position[0])
    R = face_frame_rotation(phi)
    nostril_face = model.mean[model.nostrils[0]] + model.basis.reshape(model.n_vertices, 3, -1)[model.nostrils[0]] @ face.beta
    face = dataclasses.replace(face, pose=Pose(np.asarray(face_position) - R @ nostril_face, R))
    goal = desired_camera(face.pose, face_position, mission.standoff, mission.pitch)
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(3)
    u /= np.linalg.norm(u)
    w = rng.standard_normal(3)
    w -= w.dot(u) * u
    w /= np.linalg.norm(w)
    start = goal @ Pose(offset * u, exp_so3(angle * w))
    q0 = chain.home if q_seed is None else q_seed
    q_goal = camera_ik(chain, q0, goal, extra_seeds=63, seed=seed)
    if q_goal is None:
        raise ValueError("goal camera pose is not reachable")
    q = camera_ik(chain, q_goal, start)
    if q is None:
        raise ValueError("displaced camera pose is not reachable")

    dt = mission.dt
    cam0 = cfg.camera()
    obs_rng = np.random.default_rng([seed, 1])
    n_ticks = int(round(duration / dt))
    obs_every = cfg.obs_rate
    state = None
    n_obs = 0
    times, terr, rerr = [], [], []
    for k in range(n_ticks + 1):
        t = k * dt
        cam, J = camera_pose_and_jacobian(chain, q)
        camera = cam0.with_pose(cam)
        R_true, _, nostrils = true_face_in_camera(model, face, camera, t)
        truth = relative_target_stage2(DecodedFacePose(R_true, nostrils[0]), mission.standoff, mission.pitch)
        times.append(t)
        terr.append(truth.position_error)
        rerr.append(truth.rotation_error)
        if t >= n_obs / obs_every - 1e-9:
            n_obs += 1
            obs = project_face(model, face, camera, t, obs_rng)
            dec = decode_face(obs, cam0.K)
            meas = Pose(dec.p, dec.R)
            state = initial_state(meas, mission.filter, t) if state is None else update(state, meas, mission.filter)
        err = relative_target_stage2(DecodedFacePose(state.X.rotation, state.X.position), mission.standoff, mission.pitch)
        cmd = control(chain, q, err, mission.control, J)
        q = q + cmd.joint_velocities * dt
        state = propagate(state, cmd.twist, dt, mission.filter)
    return np.array(times), np.array(terr), np.array(rerr)


# ---------------------------------------------------------------- batches and scoring


def _trial_job(payload):
    chain, geometry, table, cfg, seed, mission, log_dir = payload
    log_path = None if log_dir is None else Path(log_dir) / f"trial_{seed:05d}.csv"
    return run_trial(chain, geometry, table, cfg, seed, mission, log_path)


def run_batch(chain, geometry, table, scene_config, seeds, mission: MissionConfig = MissionConfig(),
              jobs: int = 1, log_dir=None) -> list[TrialResult]:
    """Run seeded trials, optionally over a process pool; results come back in seed order."""
    payloads = [(chain, geometry, table, scene_config, int(s), mission, log_dir) for s in seeds]
    if jobs > 1 and len(payloads) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_trial_job, payloads))
    return [_trial_job(p) for p in payloads]


EXTENSION_BINS = np.round(np.arange(0.0, 0.3001, 0.025), 6)


@dataclass(frozen=True)
class OutcomeSummary:
    trials: int
    success_rate: float
    pitch_mean: float
    pitch_std: float
    yaw_mean: float
    yaw_std: float
    distance_median: float
    raw_pos_std: tuple  # stage 2, stage 3
    filt_pos_std: tuple
    attenuation: tuple  # raw / filtered position std per stage
    extension_median: float
    extension_130: float  # fraction reaching 130 mm
    extension_hist: tuple
    status_counts: tuple  # sorted (status, count)

    def as_rows(self) -> list[tuple[str, str]]:
        rows = [
            ("trials", str(self.trials)),
            ("success_rate", f"{self.success_rate:.4f}"),
            ("pitch_mean_deg", f"{self.pitch_mean:.4f}"),
            ("pitch_std_deg", f"{self.pitch_std:.4f}"),
            ("yaw_mean_deg", f"{self.yaw_mean:.4f}"),
            ("yaw_std_deg", f"{self.yaw_std:.4f}"),
            ("distance_median_m", f"{self.distance_median:.6f}"),
            ("stage2_raw_pos_std_m", f"{self.raw_pos_std[0]:.6f}"),
            ("stage3_raw_pos_std_m", f"{self.raw_pos_std[1]:.6f}"),
            ("stage2_filt_pos_std_m", f"{self.filt_pos_std[0]:.6f}"),
            ("stage3_filt_pos_std_m", f"{self.filt_pos_std[1]:.6f}"),
            ("stage2_attenuation", f"{self.attenuation[0]:.4f}"),
            ("stage3_attenuation", f"{self.attenuation[1]:.4f}"),
            ("extension_median_m", f"{self.extension_median:.4f}"),
            ("extension_130mm_rate", f"{self.extension_130:.4f}"),
        ]
        for lo, count in zip(EXTENSION_BINS, self.extension_hist):
            rows.append((f"extension_bin_{lo:.3f}", str(count)))
        rows += [(f"status_{name}", str(n)) for name, n in self.status_counts]
        return rows


def _nanmean(values) -> float:
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    return float(np.mean(v)) if v.size else float("nan")


def _nanstd(values) -> float:
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    return float(np.std(v)) if v.size else float("nan")


def score_outcomes(results: list[TrialResult]) -> OutcomeSummary:
    if not results:
        raise ValueError("no results to score")
    ok = [r for r in results if r.status == "ok"]
    raw = tuple(_nanmean([r.raw_pos_std[i] for r in results]) for i in range(2))
    filt = tuple(_nanmean([r.filt_pos_std[i] for r in results]) for i in range(2))
    ext = np.array([r.extension for r in results])
    idx = np.clip(np.floor(ext / 0.025 + 1e-9).astype(int), 0, len(EXTENSION_BINS) - 1)
    hist = tuple(int(np.sum(idx == i)) for i in range(len(EXTENSION_BINS)))
    statuses = sorted({r.status for r in results})
    return OutcomeSummary(
        trials=len(results),
        success_rate=sum(r.reached_nostril for r in results) / len(results),
        pitch_mean=_nanmean([r.pitch_error_deg for r in ok]),
        pitch_std=_nanstd([r.pitch_error_deg for r in ok]),
        yaw_mean=_nanmean([r.yaw_error_deg for r in ok]),
        yaw_std=_nanstd([r.yaw_error_deg for r in ok]),
        distance_median=float(np.median([r.distance for r in ok])) if ok else float("nan"),
        raw_pos_std=raw,
        filt_pos_std=filt,
        attenuation=tuple(a / b if b > 0 else float("nan") for a, b in zip(raw, filt)),
        extension_median=float(np.median(ext)),
        extension_130=float(np.mean(ext >= EXTENSION_TARGET - 1e-9)),
        extension_hist=hist,
        status_counts=tuple((s, sum(r.status == s for r in results)) for s in statuses),
    )


def write_summary_csv(summary: OutcomeSummary, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "value"])
        w.writerows(summary.as_rows())


def write_results_csv(results: list[TrialResult], path) -> None:
    fields = ["seed", "status", "reached_nostril", "distance", "pitch_error_deg", "yaw_error_deg", "duration",
              "extension", "stage_reached", "raw_pos_std_2", "raw_pos_std_3", "filt_pos_std_2", "filt_pos_std_3"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for r in results:
            w.writerow([r.seed, r.status, int(r.reached_nostril), f"{r.distance:.9e}", f"{r.pitch_error_deg:.6f}",
                        f"{r.yaw_error_deg:.6f}", f"{r.duration:.4f}", f"{r.extension:.4f}", r.stage_reached,
                        *(f"{v:.9e}" for v in (*r.raw_pos_std, *r.filt_pos_std))])
