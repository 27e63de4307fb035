"""Joint lookup table: sample start cells, seed IK candidates, grade by follow-on reachability."""
from __future__ import annotations

import csv
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InfeasibleCell, NoFeasibleCandidate
from .kinematics import SUCCESS, CollisionGeometry, KinematicChain, solve_ik_batch
from .manifold import Pose, matmul, rotx, roty

MAGIC = b"SWLUT\x00\x00\x01"
VERSION = 1

CANDIDATE_ITERS = 200
GRADE_ITERS = 100
LUT_TOL = 1e-3
LUT_STEP = 0.5
SEEDING = ("uniform", "mixed")
HOME_SPREAD = 0.4
AZIMUTH_SPREAD = 0.3


@dataclass(frozen=True)
class ConeStartSpec:
    """Grid of face positions in front of the robot; cells are centred in each bin."""

    phi_min: float = -np.pi / 4
    phi_max: float = np.pi / 4
    r_min: float = 0.48
    r_max: float = 0.68
    z_min: float = 1.0
    z_max: float = 1.85
    theta_x: float = 0.2
    resolution: tuple[int, int, int] = (9, 3, 9)
    standoff: float = 0.30

    def __post_init__(self):
        object.__setattr__(self, "resolution", tuple(int(n) for n in self.resolution))
        if not (self.phi_min < self.phi_max and self.r_min < self.r_max and self.z_min < self.z_max):
            raise ValueError("cone bounds must satisfy min < max on every axis")
        if len(self.resolution) != 3 or min(self.resolution) < 1:
            raise ValueError("grid resolution must be three counts >= 1")
        if self.standoff < 0:
            raise ValueError("standoff must be non-negative")

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.resolution))

    def axes(self):
        """Cell-centre coordinates along (phi, r, z)."""
        out = []
        for lo, hi, n in zip(
            (self.phi_min, self.r_min, self.z_min), (self.phi_max, self.r_max, self.z_max), self.resolution
        ):
            out.append(lo + (np.arange(n) + 0.5) * (hi - lo) / n)
        return tuple(out)

    def cell_index(self, i: int, j: int, k: int) -> int:
        nphi, nr, nz = self.resolution
        return (i * nr + j) * nz + k

    def cell_coords(self, index: int) -> tuple[int, int, int]:
        nphi, nr, nz = self.resolution
        return index // (nr * nz), (index // nz) % nr, index % nz


@dataclass(frozen=True)
class ConeEndSpec:
    d: float = 0.35
    phi_max: float = np.deg2rad(15.0)
    theta_min: float = np.deg2rad(-10.0)
    theta_max: float = np.deg2rad(10.0)
    counts: tuple[int, int, int, int] = (3, 8, 3, 3)  # phi, zeta, theta_x, theta_y

    def __post_init__(self):
        object.__setattr__(self, "counts", tuple(int(n) for n in self.counts))
        if self.d <= 0:
            raise ValueError("d must be positive")
        if not self.theta_min < self.theta_max:
            raise ValueError("theta_min must be below theta_max")
        if len(self.counts) != 4 or min(self.counts) < 1:
            raise ValueError("sample counts must be four integers >= 1")

    @property
    def n_targets(self) -> int:
        return int(np.prod(self.counts))


@dataclass(frozen=True)
class LutEntry:
    cell_pose: Pose  # face position; rotation is the desired camera orientation
    start_pose: Pose  # flange target for stage 1
    q_best: np.ndarray  # NaN when infeasible
    reach_count: int
    total_targets: int

    @property
    def feasible(self) -> bool:
        return self.reach_count > 0


@dataclass(frozen=True)
class LutTable:
    start_spec: ConeStartSpec
    end_spec: ConeEndSpec
    entries: tuple[LutEntry, ...]
    seed: int
    candidates_per_cell: int
    camera_extrinsic: Pose = field(default_factory=Pose)
    seeding: str = "mixed"

    def __post_init__(self):
        if self.seeding not in SEEDING:
            raise ValueError(f"seeding must be one of {SEEDING}")
        if len(self.entries) != self.start_spec.n_cells:
            raise ValueError("table must hold one entry per grid cell")

    def counts(self) -> np.ndarray:
        return np.array([e.reach_count for e in self.entries])

    def entry(self, i: int, j: int, k: int) -> LutEntry:
        return self.entries[self.start_spec.cell_index(i, j, k)]


# ---------------------------------------------------------------- cone sampling


def face_frame_rotation(phi: float) -> np.ndarray:
    """Rotation of a face looking back along heading phi (x lateral, y down, z into the head)."""
    s, c = np.sin(phi), np.cos(phi)
    return np.array([[s, 0.0, c], [-c, 0.0, s], [0.0, -1.0, 0.0]])


def sample_cone_start(spec: ConeStartSpec) -> list[Pose]:
    """One pose per cell: the face position, oriented as a camera looking at it with the fixed pitch."""
    phis, rs, zs = spec.axes()
    poses = []
    for phi in phis:
        R = face_frame_rotation(phi) @ rotx(spec.theta_x)
        for r in rs:
            for z in zs:
                poses.append(Pose([r * np.cos(phi), r * np.sin(phi), z], R))
    return poses


def start_target(cell: Pose, standoff: float, camera_extrinsic: Pose) -> Pose:
    """Flange pose that puts the camera `standoff` metres back along its optical axis from the cell."""
    cam = Pose(cell.position - standoff * cell.rotation[:, 2], cell.rotation)
    return cam @ camera_extrinsic.inverse()


def _end_offsets(spec: ConeEndSpec):
    nphi, nzeta, ntx, nty = spec.counts
    phis = np.linspace(0.0, spec.phi_max, nphi) if nphi > 1 else np.zeros(1)
    zetas = 2 * np.pi * np.arange(nzeta) / nzeta
    txs = np.linspace(spec.theta_min, spec.theta_max, ntx) if ntx > 1 else np.zeros(1)
    tys = np.linspace(spec.theta_min, spec.theta_max, nty) if nty > 1 else np.zeros(1)
    pos, rot = [], []
    for phi in phis:
        for zeta in zetas:
            offset = spec.d * np.array([np.sin(phi) * np.cos(zeta), np.sin(phi) * np.sin(zeta), np.cos(phi)])
            for tx in txs:
                for ty in tys:
                    pos.append(offset)
                    rot.append(rotx(tx) @ roty(ty))
    return np.array(pos), np.array(rot)


def sample_cone_end(spec: ConeEndSpec, start: Pose) -> list[Pose]:
    """Follow-on targets a distance d ahead of `start` within a cone about its z axis."""
    pos, rot = _end_offsets(spec)
    return [start @ Pose(p, R) for p, R in zip(pos, rot)]


def _end_arrays(spec: ConeEndSpec, start: Pose):
    pos, rot = _end_offsets(spec)
    return start.position + pos @ start.rotation.T, matmul(np.broadcast_to(start.rotation, rot.shape), rot)


# ---------------------------------------------------------------- candidates and grading


def _seed_configs(chain: KinematicChain, count: int, rng, target=None, seeding: str = "mixed") -> np.ndarray:
    """IK seeds. "uniform" draws within the joint limits; "mixed" replaces the second half
    with draws around the home posture, joint 1 turned toward the target."""
    if seeding not in SEEDING:
        raise ValueError(f"seeding must be one of {SEEDING}")
    n_uniform = count if seeding == "uniform" else count // 2
    U = rng.uniform(chain.lower, chain.upper, size=(n_uniform, chain.lower.size))
    if n_uniform == count:
        return U
    m = count - n_uniform
    H = chain.home + rng.normal(0.0, HOME_SPREAD, size=(m, chain.lower.size))
    if target is not None:
        H[:, 0] = np.arctan2(target[1] - chain.base.position[1], target[0] - chain.base.position[0])
        H[:, 0] += rng.normal(0.0, AZIMUTH_SPREAD, m)
    return np.vstack([U, np.clip(H, chain.lower, chain.upper)])


def generate_candidates(
    chain: KinematicChain,
    start: Pose,
    count: int,
    rng_seed,
    geometry: CollisionGeometry | None = None,
    max_iters: int = CANDIDATE_ITERS,
    tol: float = LUT_TOL,
    seeding: str = "mixed",
) -> list[np.ndarray]:
    """Solve IK to `start` from `count` random seeds; keep the successes in seed order."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(rng_seed)
    Q0 = _seed_configs(chain, count, rng, start.position, seeding)
    Q, status, _ = solve_ik_batch(chain, Q0, start.position, start.rotation, max_iters, tol, LUT_STEP, geometry)
    good = [Q[i] for i in range(count) if status[i] == SUCCESS]
    if not good:
        raise NoFeasibleCandidate("no IK seed reached the start pose")
    return good


def grade_candidate(
    chain: KinematicChain,
    geometry: CollisionGeometry | None,
    q,
    targets: list[Pose],
    max_iters: int = GRADE_ITERS,
    tol: float = LUT_TOL,
) -> int:
    """Number of targets reached by IK started at q without limit or collision failures."""
    if not targets:
        raise ValueError("targets must be nonempty")
    tp = np.array([t.position for t in targets])
    tR = np.array([t.rotation for t in targets])
    Q0 = np.broadcast_to(np.asarray(q, dtype=float), (len(targets), 7))
    _, status, _ = solve_ik_batch(chain, Q0, tp, tR, max_iters, tol, LUT_STEP, geometry)
    return int(np.sum(status == SUCCESS))


# ---------------------------------------------------------------- building


def _cell_seed(seed: int, cell: int):
    return [int(seed), int(cell)]


def _build_cells(chain, geometry, start_spec, end_spec, candidates, seed, cells, seeding="mixed"):
    """Evaluate a block of cells in lockstep. Returns {cell: (q_best, N)}."""
    geometry = chain.geometry if geometry is None else geometry
    cell_poses = sample_cone_start(start_spec)
    targets = [start_target(cell_poses[c], start_spec.standoff, chain.camera) for c in cells]
    K = candidates
    Q0 = np.concatenate([
        _seed_configs(chain, K, np.random.default_rng(_cell_seed(seed, c)), t.position, seeding)
        for c, t in zip(cells, targets)
    ])
    tp = np.repeat(np.array([t.position for t in targets]), K, axis=0)
    tR = np.repeat(np.array([t.rotation for t in targets]), K, axis=0)
    Q, status, _ = solve_ik_batch(chain, Q0, tp, tR, CANDIDATE_ITERS, LUT_TOL, LUT_STEP, geometry)
    ok = np.nonzero(status == SUCCESS)[0]

    M = end_spec.n_targets
    ends = [_end_arrays(end_spec, t) for t in targets]
    counts = np.zeros(len(ok), dtype=int)
    if ok.size:
        owner = ok // K
        gq = np.repeat(Q[ok], M, axis=0)
        gp = np.concatenate([ends[o][0] for o in owner])
        gR = np.concatenate([ends[o][1] for o in owner])
        _, gstat, _ = solve_ik_batch(chain, gq, gp, gR, GRADE_ITERS, LUT_TOL, LUT_STEP, geometry)
        counts = np.sum((gstat == SUCCESS).reshape(len(ok), M), axis=1)

    out = {}
    for local, c in enumerate(cells):
        mine = np.nonzero(ok // K == local)[0]
        if mine.size == 0:
            out[c] = (np.full(7, np.nan), 0)
            continue
        best = mine[np.argmax(counts[mine])]  # argmax keeps the lowest index on ties
        out[c] = (Q[ok[best]].copy(), int(counts[best]))
    return out


def _build_block(payload):
    return _build_cells(*payload)


def build_table(
    chain: KinematicChain,
    geometry: CollisionGeometry | None = None,
    start_spec: ConeStartSpec | None = None,
    end_spec: ConeEndSpec | None = None,
    candidates_per_cell: int = 32,
    rng_seed: int = 0,
    jobs: int = 1,
    block: int = 4,
    progress=None,
    seeding: str = "mixed",
) -> LutTable:
    """Grade `candidates_per_cell` IK seeds per cell and keep the best.

    Every cell draws from its own generator seeded by (rng_seed, cell index), so the
    result does not depend on `jobs` or `block`.
    """
    start_spec = start_spec or ConeStartSpec()
    end_spec = end_spec or ConeEndSpec()
    if candidates_per_cell < 1:
        raise ValueError("candidates_per_cell must be >= 1")
    if seeding not in SEEDING:
        raise ValueError(f"seeding must be one of {SEEDING}")
    cells = list(range(start_spec.n_cells))
    blocks = [cells[i : i + block] for i in range(0, len(cells), block)]
    payloads = [(chain, geometry, start_spec, end_spec, candidates_per_cell, rng_seed, b, seeding) for b in blocks]
    results: dict[int, tuple[np.ndarray, int]] = {}
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for res in pool.map(_build_block, payloads):
                results.update(res)
                if progress:
                    progress(len(results), len(cells))
    else:
        for p in payloads:
            results.update(_build_block(p))
            if progress:
                progress(len(results), len(cells))
    return _assemble(chain.camera, start_spec, end_spec, results, rng_seed, candidates_per_cell, seeding)


def _assemble(extrinsic, start_spec, end_spec, results, seed, candidates, seeding) -> LutTable:
    cell_poses = sample_cone_start(start_spec)
    entries = []
    for c, cell in enumerate(cell_poses):
        q, n = results[c]
        entries.append(
            LutEntry(cell, start_target(cell, start_spec.standoff, extrinsic), np.asarray(q, float), int(n),
                     end_spec.n_targets)
        )
    return LutTable(start_spec, end_spec, tuple(entries), int(seed), int(candidates), extrinsic, seeding)


# ---------------------------------------------------------------- query


def query_index(spec: ConeStartSpec, face_position) -> int:
    """Index of the cell centre nearest to `face_position`, by index arithmetic."""
    x, y, z = np.asarray(face_position, dtype=float)
    nphi, nr, nz = spec.resolution
    dphi = (spec.phi_max - spec.phi_min) / nphi
    dr = (spec.r_max - spec.r_min) / nr
    dz = (spec.z_max - spec.z_min) / nz
    rho = np.hypot(x, y)
    psi = np.arctan2(y, x)
    k = int(np.clip(np.floor((z - spec.z_min) / dz), 0, nz - 1))
    i_near = int(np.clip(np.floor((psi - spec.phi_min) / dphi), 0, nphi - 1))
    best, best_d = 0, np.inf
    # for a fixed r the nearest heading wins; the grid ends cover wrap-around when psi is far outside
    for i in {i_near, 0, nphi - 1}:
        phi = spec.phi_min + (i + 0.5) * dphi
        proj = rho * np.cos(psi - phi)
        j = int(np.clip(np.floor((proj - spec.r_min) / dr), 0, nr - 1))
        r = spec.r_min + (j + 0.5) * dr
        d2 = rho * rho + r * r - 2.0 * rho * r * np.cos(psi - phi)
        if d2 < best_d - 1e-15:
            best, best_d = spec.cell_index(i, j, k), d2
    return best


def query(table: LutTable, face_position) -> LutEntry:
    entry = table.entries[query_index(table.start_spec, face_position)]
    if entry.reach_count == 0:
        raise InfeasibleCell("nearest lookup-table cell has no feasible configuration")
    return entry


# ---------------------------------------------------------------- serialization

_HEADER = struct.Struct("<8sI 8d 3I 4d 4I Q I I 12d I")
_ENTRY = struct.Struct("<I 7d I I")


def table_bytes(table: LutTable) -> bytes:
    s, e = table.start_spec, table.end_spec
    ext = table.camera_extrinsic
    head = _HEADER.pack(
        MAGIC, VERSION,
        s.phi_min, s.phi_max, s.r_min, s.r_max, s.z_min, s.z_max, s.theta_x, s.standoff,
        *s.resolution,
        e.d, e.phi_max, e.theta_min, e.theta_max,
        *e.counts,
        table.seed, table.candidates_per_cell, SEEDING.index(table.seeding),
        *ext.position, *ext.rotation.ravel(),
        len(table.entries),
    )
    body = b"".join(
        _ENTRY.pack(i, *ent.q_best, ent.reach_count, ent.total_targets) for i, ent in enumerate(table.entries)
    )
    return head + body


def save_table(table: LutTable, path: str | Path) -> None:
    Path(path).write_bytes(table_bytes(table))


def parse_table(data: bytes) -> LutTable:
    if len(data) < _HEADER.size or data[:8] != MAGIC:
        raise ValueError("not a lookup-table file")
    h = _HEADER.unpack_from(data, 0)
    if h[1] != VERSION:
        raise ValueError(f"unsupported table version {h[1]}")
    start = ConeStartSpec(
        phi_min=h[2], phi_max=h[3], r_min=h[4], r_max=h[5], z_min=h[6], z_max=h[7], theta_x=h[8],
        standoff=h[9], resolution=h[10:13],
    )
    end = ConeEndSpec(d=h[13], phi_max=h[14], theta_min=h[15], theta_max=h[16], counts=h[17:21])
    seed, candidates = h[21], h[22]
    if h[23] >= len(SEEDING):
        raise ValueError("unknown seeding mode in table header")
    ext = Pose(h[24:27], np.array(h[27:36]).reshape(3, 3))
    n = h[36]
    if n != start.n_cells or len(data) != _HEADER.size + n * _ENTRY.size:
        raise ValueError("lookup-table file is truncated or inconsistent")
    results = {}
    for c in range(n):
        rec = _ENTRY.unpack_from(data, _HEADER.size + c * _ENTRY.size)
        results[rec[0]] = (np.array(rec[1:8]), rec[8])
    return _assemble(ext, start, end, results, seed, candidates, SEEDING[h[23]])


def load_table(path: str | Path) -> LutTable:
    return parse_table(Path(path).read_bytes())


CSV_FIELDS = ["cell", "i_phi", "i_r", "i_z", "phi", "r", "z", "N", "total"] + [f"q{i}" for i in range(1, 8)]


def export_csv(table: LutTable, path: str | Path) -> None:
    phis, rs, zs = table.start_spec.axes()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for c, ent in enumerate(table.entries):
            i, j, k = table.start_spec.cell_coords(c)
            w.writerow([c, i, j, k, f"{phis[i]:.6f}", f"{rs[j]:.6f}", f"{zs[k]:.6f}", ent.reach_count,
                        ent.total_targets] + [f"{v:.9f}" for v in ent.q_best])
