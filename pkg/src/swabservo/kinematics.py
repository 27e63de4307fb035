"""Seven-joint serial chain: forward kinematics, Jacobian, damped pseudo-inverse IK, capsule self-collision.

The hot paths are batched over a leading dimension of joint vectors so that the
lookup-table builder can run thousands of IK problems in lockstep.  Single-config
entry points call the batched code with a batch of one, so both give identical
numbers.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ChainFileError, JointLimitHit, MaxItersExceeded, SelfCollision
from .manifold import Pose, cross, exp_so3, log_so3, matmul, rpy_matrix

N_JOINTS = 7
DEFAULT_DAMPING = 1e-6

SUCCESS, LIMIT_HIT, COLLISION, MAX_ITERS = 0, 1, 2, 3
STATUS_NAMES = {SUCCESS: "success", LIMIT_HIT: "joint-limit", COLLISION: "self-collision", MAX_ITERS: "max-iters"}


@dataclass(frozen=True)
class Capsule:
    link: int  # 0 = base, 1..7 = frame after joint i
    a: np.ndarray
    b: np.ndarray
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("capsule radius must be positive")
        object.__setattr__(self, "a", np.asarray(self.a, dtype=float).reshape(3))
        object.__setattr__(self, "b", np.asarray(self.b, dtype=float).reshape(3))


@dataclass(frozen=True)
class CollisionGeometry:
    capsules: tuple[Capsule, ...]

    def pairs(self) -> list[tuple[int, int]]:
        """Index pairs of capsules on non-adjacent links."""
        out = []
        for i, ci in enumerate(self.capsules):
            for j in range(i + 1, len(self.capsules)):
                if abs(ci.link - self.capsules[j].link) >= 2:
                    out.append((i, j))
        return out


@dataclass(frozen=True)
class KinematicChain:
    base: Pose
    origins: np.ndarray  # (7, 3) fixed offset of each joint frame in its parent
    fixed_rotations: np.ndarray  # (7, 3, 3)
    axes: np.ndarray  # (7, 3) unit joint axes in the joint frame
    limits: np.ndarray  # (7, 2)
    flange: Pose  # link 7 -> flange
    camera: Pose  # flange -> camera (eMc)
    swab_tip: np.ndarray  # flange frame, metres
    swab_shaft: np.ndarray
    home: np.ndarray
    geometry: CollisionGeometry = field(default_factory=lambda: CollisionGeometry(()))

    def __post_init__(self):
        for name in ("origins", "fixed_rotations", "axes", "limits", "swab_tip", "swab_shaft", "home"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if self.origins.shape != (N_JOINTS, 3) or self.axes.shape != (N_JOINTS, 3):
            raise ValueError("chain must have exactly 7 joints")
        if not np.all(np.isfinite(self.origins)):
            raise ValueError("link offsets must be finite")
        if not np.allclose(np.linalg.norm(self.axes, axis=1), 1.0, atol=1e-9):
            raise ValueError("joint axes must be unit vectors")
        if np.any(self.limits[:, 0] >= self.limits[:, 1]):
            raise ValueError("joint limits must satisfy lower < upper")

    @property
    def lower(self) -> np.ndarray:
        return self.limits[:, 0]

    @property
    def upper(self) -> np.ndarray:
        return self.limits[:, 1]

    def within_limits(self, q) -> np.ndarray | bool:
        q = np.asarray(q, dtype=float)
        return np.all((q >= self.lower) & (q <= self.upper), axis=-1)

    def reach(self) -> float:
        """Upper bound on the distance from joint 1 to the flange."""
        return float(np.linalg.norm(self.origins[1:], axis=1).sum() + np.linalg.norm(self.flange.position))


# ---------------------------------------------------------------- forward kinematics


def link_frames(chain: KinematicChain, Q):
    """World poses of base (0), the 7 link frames (1..7) and the flange (8).

    Also returns world joint axes and joint origins for the Jacobian.
    Shapes: positions (N, 9, 3), rotations (N, 9, 3, 3), axes (N, 7, 3), origins (N, 7, 3).
    """
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    n = Q.shape[0]
    # fixed offset rotation times joint rotation, all joints at once
    FE = matmul(chain.fixed_rotations, exp_so3(Q[:, :, None] * chain.axes))
    p = np.broadcast_to(chain.base.position, (n, 3))
    R = np.broadcast_to(chain.base.rotation, (n, 3, 3))
    ps, Rs, axes, origins = [p], [R], [], []
    for i in range(N_JOINTS):
        p = p + np.sum(R * chain.origins[i], axis=-1)
        R = matmul(R, FE[:, i])
        # the joint rotation leaves its own axis fixed
        axes.append(np.sum(R * chain.axes[i], axis=-1))
        origins.append(p)
        ps.append(p)
        Rs.append(R)
    ps.append(p + np.sum(R * chain.flange.position, axis=-1))
    Rs.append(matmul(R, chain.flange.rotation))
    return np.stack(ps, 1), np.stack(Rs, 1), np.stack(axes, 1), np.stack(origins, 1)


def fk_batch(chain: KinematicChain, Q):
    ps, Rs, _, _ = link_frames(chain, Q)
    return ps[:, -1], Rs[:, -1]


def forward_kinematics(chain: KinematicChain, q) -> Pose:
    """Flange pose in the world frame."""
    p, R = fk_batch(chain, np.asarray(q, dtype=float)[None])
    return Pose(p[0], R[0])


def camera_pose(chain: KinematicChain, q) -> Pose:
    return forward_kinematics(chain, q) @ chain.camera


def fk_and_jacobian_batch(chain: KinematicChain, Q):
    ps, Rs, axes, origins = link_frames(chain, Q)
    pf, Rf = ps[:, -1], Rs[:, -1]
    J = np.empty((pf.shape[0], 6, N_JOINTS))
    J[:, :3, :] = np.swapaxes(cross(axes, pf[:, None, :] - origins), 1, 2)
    J[:, 3:, :] = np.swapaxes(axes, 1, 2)
    return pf, Rf, J


def jacobian(chain: KinematicChain, q) -> np.ndarray:
    """Geometric 6x7 Jacobian at the flange, world frame, rows (linear, angular)."""
    return fk_and_jacobian_batch(chain, np.asarray(q, dtype=float)[None])[2][0]


def camera_pose_and_jacobian(chain: KinematicChain, q) -> tuple[Pose, np.ndarray]:
    """Camera pose in the world and the Jacobian mapping joint rates to the camera twist in the camera frame."""
    pf, Rf, J = fk_and_jacobian_batch(chain, np.asarray(q, dtype=float)[None])
    pf, Rf, J = pf[0], Rf[0], J[0]
    Rc = Rf @ chain.camera.rotation
    lever = Rf @ chain.camera.position
    v = J[:3] + cross(J[3:].T, lever).T
    return Pose(pf + lever, Rc), np.vstack([Rc.T @ v, Rc.T @ J[3:]])


def camera_jacobian(chain: KinematicChain, q) -> np.ndarray:
    return camera_pose_and_jacobian(chain, q)[1]


def pseudo_inverse(J, damping: float = DEFAULT_DAMPING) -> np.ndarray:
    """Right pseudo-inverse J^T (J J^T + damping^2 I)^-1; plain Moore-Penrose when singular and undamped."""
    J = np.asarray(J, dtype=float)
    A = J @ J.T + damping**2 * np.eye(J.shape[0])
    try:
        return J.T @ np.linalg.solve(A, np.eye(J.shape[0]))
    except np.linalg.LinAlgError:
        return np.linalg.pinv(J)


def _solve_step(J, err, damping):
    A = matmul(J, np.swapaxes(J, 1, 2)) + damping**2 * np.eye(6)
    y = np.linalg.solve(A, err[..., None])[..., 0]
    return np.sum(J * y[:, :, None], axis=1)


def pose_error_batch(p, R, target_p, target_R):
    """Stacked (target - current) position and log(R_target R_current^T)."""
    dR = matmul(target_R, np.swapaxes(R, -1, -2))
    return np.concatenate([target_p - p, log_so3(dR)], axis=-1)


def pose_error(current: Pose, target: Pose) -> np.ndarray:
    return pose_error_batch(current.position, current.rotation, target.position, target.rotation)


def ik_step(chain: KinematicChain, q, target: Pose, step_scale: float, damping: float = DEFAULT_DAMPING):
    """One explicit-Euler step of qdot = J^+ (target - kappa(q))."""
    q = np.asarray(q, dtype=float)
    p, R, J = fk_and_jacobian_batch(chain, q[None])
    err = pose_error_batch(p, R, target.position[None], target.rotation[None])
    if not np.any(err):
        return q.copy()
    return q + step_scale * _solve_step(J, err, damping)[0]


# ---------------------------------------------------------------- self collision


def segment_distance(p1, q1, p2, q2):
    """Closest distance between segments [p1, q1] and [p2, q2], vectorized over leading dims."""
    d1 = q1 - p1
    d2 = q2 - p2
    r = p1 - p2
    a = np.sum(d1 * d1, axis=-1)
    e = np.sum(d2 * d2, axis=-1)
    f = np.sum(d2 * r, axis=-1)
    c = np.sum(d1 * r, axis=-1)
    b = np.sum(d1 * d2, axis=-1)
    eps = 1e-14
    a_ok = a > eps
    e_ok = e > eps
    a_s = np.where(a_ok, a, 1.0)
    e_s = np.where(e_ok, e, 1.0)
    denom = a * e - b * b
    s = np.where(denom > eps, np.clip((b * f - c * e) / np.where(denom > eps, denom, 1.0), 0.0, 1.0), 0.0)
    t = (b * s + f) / e_s
    s = np.where(t < 0.0, np.clip(-c / a_s, 0.0, 1.0), np.where(t > 1.0, np.clip((b - c) / a_s, 0.0, 1.0), s))
    t = np.clip(t, 0.0, 1.0)
    # degenerate segments (points)
    s = np.where(a_ok, s, 0.0)
    t = np.where(e_ok, np.where(a_ok, t, np.clip(f / e_s, 0.0, 1.0)), 0.0)
    s = np.where(a_ok & ~e_ok, np.clip(-c / a_s, 0.0, 1.0), s)
    diff = (p1 + d1 * s[..., None]) - (p2 + d2 * t[..., None])
    return np.linalg.norm(diff, axis=-1)


class _CollisionTables:
    """Pre-stacked capsule data for the batched checker."""

    def __init__(self, geometry: CollisionGeometry):
        caps = geometry.capsules
        self.links = np.array([c.link for c in caps], dtype=int)
        self.a = np.array([c.a for c in caps]).reshape(-1, 3)
        self.b = np.array([c.b for c in caps]).reshape(-1, 3)
        pairs = geometry.pairs()
        self.i = np.array([p[0] for p in pairs], dtype=int)
        self.j = np.array([p[1] for p in pairs], dtype=int)
        radii = np.array([c.radius for c in caps])
        self.rsum = radii[self.i] + radii[self.j] if pairs else np.zeros(0)


_TABLE_CACHE: dict[int, _CollisionTables] = {}


def _tables(geometry: CollisionGeometry) -> _CollisionTables:
    key = id(geometry)
    tab = _TABLE_CACHE.get(key)
    if tab is None or tab.links.size != len(geometry.capsules):
        tab = _CollisionTables(geometry)
        _TABLE_CACHE[key] = tab
    return tab


def collision_margins(chain: KinematicChain, geometry: CollisionGeometry, Q, frames=None):
    """Signed clearance (distance - radius sum) for each checked capsule pair: (N, n_pairs)."""
    tab = _tables(geometry)
    if frames is None:
        ps, Rs, _, _ = link_frames(chain, Q)
    else:
        ps, Rs = frames
    if tab.i.size == 0:
        return np.zeros((ps.shape[0], 0))
    P = ps[:, tab.links]  # (N, C, 3)
    R = Rs[:, tab.links]
    A = P + np.sum(R * tab.a[None, :, None, :], axis=-1)
    B = P + np.sum(R * tab.b[None, :, None, :], axis=-1)
    d = segment_distance(A[:, tab.i], B[:, tab.i], A[:, tab.j], B[:, tab.j])
    return d - tab.rsum


def self_collision_batch(chain, geometry, Q, frames=None) -> np.ndarray:
    m = collision_margins(chain, geometry, Q, frames)
    return np.any(m < 0.0, axis=-1)


def check_self_collision(chain: KinematicChain, geometry: CollisionGeometry | None, q) -> bool:
    """True iff two capsules on non-adjacent links intersect."""
    geometry = chain.geometry if geometry is None else geometry
    return bool(self_collision_batch(chain, geometry, np.asarray(q, dtype=float)[None])[0])


# ---------------------------------------------------------------- iterative IK


def solve_ik_batch(
    chain: KinematicChain,
    Q0,
    target_p,
    target_R,
    max_iters: int = 100,
    tol: float = 1e-4,
    step_scale: float = 0.5,
    geometry: CollisionGeometry | None = None,
    damping: float = DEFAULT_DAMPING,
    check_collisions: bool = True,
):
    """Run independent IK problems in lockstep.

    Returns (Q, status, iterations). ``status`` uses SUCCESS / LIMIT_HIT / COLLISION /
    MAX_ITERS; ``iterations`` is the index of the final (converged or failing) iterate.
    Every iterate, including the start, is checked against limits and collisions.
    """
    geometry = chain.geometry if geometry is None else geometry
    Q = np.array(np.atleast_2d(Q0), dtype=float)
    n = Q.shape[0]
    target_p = np.broadcast_to(np.asarray(target_p, dtype=float), (n, 3))
    target_R = np.broadcast_to(np.asarray(target_R, dtype=float), (n, 3, 3))
    status = np.full(n, -1, dtype=int)
    iters = np.zeros(n, dtype=int)
    active = np.arange(n)
    for k in range(max_iters + 1):
        if active.size == 0:
            break
        q = Q[active]
        ps, Rs, axes, origins = link_frames(chain, q)
        bad_limit = ~np.all((q >= chain.lower) & (q <= chain.upper), axis=-1)
        if check_collisions and geometry.capsules:
            bad_coll = self_collision_batch(chain, geometry, q, frames=(ps, Rs)) & ~bad_limit
        else:
            bad_coll = np.zeros(active.size, dtype=bool)
        pf, Rf = ps[:, -1], Rs[:, -1]
        err = pose_error_batch(pf, Rf, target_p[active], target_R[active])
        done = (np.linalg.norm(err, axis=-1) < tol) & ~bad_limit & ~bad_coll
        status[active[bad_limit]] = LIMIT_HIT
        status[active[bad_coll]] = COLLISION
        status[active[done]] = SUCCESS
        finished = bad_limit | bad_coll | done
        iters[active[finished]] = k
        keep = ~finished
        if k == max_iters:
            status[active[keep]] = MAX_ITERS
            iters[active[keep]] = k
            break
        active = active[keep]
        if active.size == 0:
            break
        J = np.empty((active.size, 6, N_JOINTS))
        J[:, :3, :] = np.swapaxes(cross(axes[keep], pf[keep][:, None, :] - origins[keep]), 1, 2)
        J[:, 3:, :] = np.swapaxes(axes[keep], 1, 2)
        Q[active] = q[keep] + step_scale * _solve_step(J, err[keep], damping)
    return Q, status, iters


def solve_ik(
    chain: KinematicChain,
    q0,
    target: Pose,
    max_iters: int = 100,
    tol: float = 1e-4,
    step_scale: float = 0.5,
    geometry: CollisionGeometry | None = None,
    damping: float = DEFAULT_DAMPING,
) -> np.ndarray:
    """Iterate ``ik_step`` until the pose error norm drops below ``tol``.

    Raises JointLimitHit, SelfCollision or MaxItersExceeded carrying the failing iterate.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    Q, status, iters = solve_ik_batch(
        chain, np.asarray(q0, dtype=float)[None], target.position, target.rotation,
        max_iters, tol, step_scale, geometry, damping,
    )
    st, k, q = int(status[0]), int(iters[0]), Q[0]
    if st == SUCCESS:
        return q
    if st == LIMIT_HIT:
        raise JointLimitHit(f"joint limit reached at iterate {k}", k, q)
    if st == COLLISION:
        raise SelfCollision(f"self-collision at iterate {k}", k, q)
    raise MaxItersExceeded(f"no convergence after {k} iterates", k, q)


def ik_path(chain, q0, target: Pose, max_iters=100, tol=1e-4, step_scale=0.5, damping=DEFAULT_DAMPING):
    """Unchecked iterate list from q0 toward target (for replay/inspection)."""
    path = [np.asarray(q0, dtype=float)]
    for _ in range(max_iters):
        cur = forward_kinematics(chain, path[-1])
        if np.linalg.norm(pose_error(cur, target)) < tol:
            break
        path.append(ik_step(chain, path[-1], target, step_scale, damping))
    return path


# ---------------------------------------------------------------- chain files

_VEC_KEYS = {
    "xyz": 3, "rpy": 3, "axis": 3, "limits": 2,
}


def _floats(value: str, count: int | None, where: str) -> np.ndarray:
    try:
        vals = np.array([float(x) for x in value.replace(",", " ").split()])
    except ValueError:
        raise ChainFileError(f"{where}: expected numbers, got {value!r}") from None
    if count is not None and vals.size != count:
        raise ChainFileError(f"{where}: expected {count} numbers, got {vals.size}")
    return vals


def parse_chain(text: str, source: str = "<chain>") -> KinematicChain:
    """Parse the key = value chain description (see data/reference_chain.txt)."""
    entries: dict[str, tuple[str, int]] = {}
    capsules: list[tuple[str, int]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ChainFileError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "capsule":
            capsules.append((value, lineno))
            continue
        if key in entries:
            raise ChainFileError(f"{source}:{lineno}: duplicate key {key!r}")
        entries[key] = (value, lineno)

    def get(key: str, count: int | None, default=None) -> np.ndarray:
        if key not in entries:
            if default is not None:
                return np.asarray(default, dtype=float)
            raise ChainFileError(f"{source}: missing key {key!r}")
        value, lineno = entries[key]
        return _floats(value, count, f"{source}:{lineno}: {key}")

    def pose(prefix: str) -> Pose:
        return Pose(get(f"{prefix}.xyz", 3, np.zeros(3)), rpy_matrix(*get(f"{prefix}.rpy", 3, np.zeros(3))))

    known = {f"{p}.{k}" for p in ("base", "flange", "camera") for k in ("xyz", "rpy")}
    known |= {f"joint{i}.{k}" for i in range(1, N_JOINTS + 1) for k in ("xyz", "rpy", "axis", "limits")}
    known |= {"swab.tip", "swab.shaft", "home"}
    for key, (_, lineno) in entries.items():
        if key not in known:
            raise ChainFileError(f"{source}:{lineno}: unknown key {key!r}")

    origins, rots, axes, limits = [], [], [], []
    for i in range(1, N_JOINTS + 1):
        origins.append(get(f"joint{i}.xyz", 3))
        rots.append(rpy_matrix(*get(f"joint{i}.rpy", 3, np.zeros(3))))
        ax = get(f"joint{i}.axis", 3, [0.0, 0.0, 1.0])
        if np.linalg.norm(ax) == 0:
            raise ChainFileError(f"{source}:{entries[f'joint{i}.axis'][1]}: zero joint axis")
        axes.append(ax / np.linalg.norm(ax))
        lim = get(f"joint{i}.limits", 2)
        if lim[0] >= lim[1]:
            raise ChainFileError(f"{source}:{entries[f'joint{i}.limits'][1]}: lower limit must be below upper")
        limits.append(lim)

    caps = []
    for value, lineno in capsules:
        nums = _floats(value, 8, f"{source}:{lineno}: capsule")
        link = int(nums[0])
        if nums[0] != link or not 0 <= link <= N_JOINTS:
            raise ChainFileError(f"{source}:{lineno}: capsule link index must be an integer in 0..7")
        if nums[7] <= 0:
            raise ChainFileError(f"{source}:{lineno}: capsule radius must be positive")
        caps.append(Capsule(link, nums[1:4], nums[4:7], float(nums[7])))

    try:
        return KinematicChain(
            base=pose("base"),
            origins=np.array(origins),
            fixed_rotations=np.array(rots),
            axes=np.array(axes),
            limits=np.array(limits),
            flange=pose("flange"),
            camera=pose("camera"),
            swab_tip=get("swab.tip", 3),
            swab_shaft=get("swab.shaft", 3),
            home=get("home", N_JOINTS),
            geometry=CollisionGeometry(tuple(caps)),
        )
    except ValueError as exc:
        raise ChainFileError(f"{source}: {exc}") from None


def load_chain(path: str | Path) -> KinematicChain:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ChainFileError(f"{path}: cannot read chain file ({exc.strerror})") from None
    return parse_chain(text, str(path))


def reference_chain_text() -> str:
    return resources.files("swabservo").joinpath("data/reference_chain.txt").read_text()


_REFERENCE: KinematicChain | None = None


def reference_chain() -> KinematicChain:
    """The shipped seven-joint collaborative-arm parameter set."""
    global _REFERENCE
    if _REFERENCE is None:
        _REFERENCE = parse_chain(reference_chain_text(), "reference_chain.txt")
    return _REFERENCE
