"""Dense trajectory fields and their rigid/residual decomposition.

A trajectory field stores the 3D path of every tracked point over T frames,
in either world coordinates (the first camera frame) or the per-frame
camera coordinates. Point index order matches SceneDomain.tracked_points().

Per unit, motion splits into a rigid curve plus a residual:

    world(t, x) = rigid[t](x) + residual[t, x]

How the rigid curve is chosen depends on the unit category: the borderland
and brush units keep the identity (their residual is the full displacement
from the start), drag units take the per-frame least-squares fit, so their
residual measures deviation from rigidity. Motion strength is the
unit-averaged speed of the residual, which is invariant under a fixed rigid
change of coordinates.

Track file format ("TRCK"): magic b"TRCK", u32 version=1, u32 T, u32 N,
u8 frame flag (0 camera, 1 world), then T*N*3 float32 positions and T*N u8
validity bytes, little-endian.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    CorruptHeader,
    DegenerateGeometry,
    EmptyUnit,
    FrameMismatch,
    NonIdentityFirstExtrinsic,
    TruncatedPayload,
    UnreadableFile,
)
from .geometry import RigidTransform, fit_rigid
from .scene import CATEGORY_BORDERLAND, CATEGORY_BRUSH, CATEGORY_DRAG

log = logging.getLogger(__name__)

TRACK_MAGIC = b"TRCK"
TRACK_VERSION = 1

WORLD = "world"
CAMERA = "camera"

TRIM_ROUNDS = 3
TRIM_FRACTION = 0.1


@dataclass(frozen=True)
class TrajectoryField:
    """Dense point trajectories: positions (T, N, 3), valid (T, N)."""

    frame: str
    positions: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        if self.frame not in (WORLD, CAMERA):
            raise ValueError(f"frame must be '{WORLD}' or '{CAMERA}', got {self.frame!r}")
        pos = np.asarray(self.positions, dtype=np.float64)
        val = np.asarray(self.valid, dtype=bool)
        if pos.ndim != 3 or pos.shape[2] != 3:
            raise ValueError(f"positions must be (T, N, 3), got {pos.shape}")
        if val.shape != pos.shape[:2]:
            raise ValueError(f"valid shape {val.shape} != {pos.shape[:2]}")
        if pos.shape[0] < 1:
            raise ValueError("need at least one frame")
        if not np.all(val[0]):
            raise ValueError("every tracked point must be valid at frame 0")
        pos.flags.writeable = False
        val.flags.writeable = False
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "valid", val)

    @property
    def frame_count(self) -> int:
        return int(self.positions.shape[0])

    @property
    def point_count(self) -> int:
        return int(self.positions.shape[1])

    def initial_points(self) -> np.ndarray:
        return self.positions[0]


@dataclass(frozen=True)
class UnitMotion:
    """Decomposition of one unit's world motion.

    rigid[0] is the identity and strength[0] is 0. residual has shape
    (T, n_points, 3) over the unit's own points; entries at invalid samples
    are 0 and masked out by `valid`.
    """

    category: int
    indices: np.ndarray
    rigid: list[RigidTransform]
    strength: np.ndarray
    residual: np.ndarray
    valid: np.ndarray
    strength_flags: np.ndarray = field(default=None)

    @property
    def frame_count(self) -> int:
        return len(self.rigid)


def to_world(camera_traj: TrajectoryField, extrinsics: list[RigidTransform]) -> TrajectoryField:
    """Convert a camera-frame field to world coordinates via per-frame extrinsics."""
    if camera_traj.frame != CAMERA:
        raise FrameMismatch(f"expected a camera-frame field, got {camera_traj.frame!r}")
    if len(extrinsics) != camera_traj.frame_count:
        raise ValueError(f"{len(extrinsics)} extrinsics for {camera_traj.frame_count} frames")
    if not extrinsics[0].is_identity(tol=1e-9):
        raise NonIdentityFirstExtrinsic("extrinsics[0] must be the identity")
    out = np.empty_like(camera_traj.positions)
    out[0] = camera_traj.positions[0]
    for t in range(1, camera_traj.frame_count):
        out[t] = extrinsics[t].apply(camera_traj.positions[t])
    return TrajectoryField(WORLD, out, camera_traj.valid)


def to_camera(world_traj: TrajectoryField, extrinsics: list[RigidTransform]) -> TrajectoryField:
    """Inverse of to_world: positions become extrinsics[t]^-1 applied to world."""
    if world_traj.frame != WORLD:
        raise FrameMismatch(f"expected a world-frame field, got {world_traj.frame!r}")
    if len(extrinsics) != world_traj.frame_count:
        raise ValueError(f"{len(extrinsics)} extrinsics for {world_traj.frame_count} frames")
    if not extrinsics[0].is_identity(tol=1e-9):
        raise NonIdentityFirstExtrinsic("extrinsics[0] must be the identity")
    out = np.empty_like(world_traj.positions)
    out[0] = world_traj.positions[0]
    for t in range(1, world_traj.frame_count):
        out[t] = extrinsics[t].inverse().apply(world_traj.positions[t])
    return TrajectoryField(CAMERA, out, world_traj.valid)


def _trimmed_fit(source: np.ndarray, target: np.ndarray, rounds: int,
                 fraction: float) -> RigidTransform:
    """Least-squares rigid fit with iterative trimming of the largest residuals."""
    idx = np.arange(len(source))
    g = None
    for round_ in range(rounds):
        g = fit_rigid(source[idx], target[idx])
        if round_ == rounds - 1:
            break
        r = np.linalg.norm(target[idx] - g.apply(source[idx]), axis=1)
        cutoff = np.quantile(r, 1.0 - fraction)
        keep = r <= cutoff
        if np.count_nonzero(keep) < 3:
            break
        idx = idx[keep]
    return g


def solve_extrinsics(camera_traj: TrajectoryField, borderland_indices,
                     trim_rounds: int = TRIM_ROUNDS,
                     trim_fraction: float = TRIM_FRACTION) -> list[RigidTransform]:
    """Recover per-frame camera extrinsics from borderland tracks.

    Assumes the borderland is world-static: for each frame, the rigid map
    Q_t taking the initial borderland points to their camera-frame
    positions is the world-to-camera transform, so E_t = Q_t^-1. Fitting is
    trimmed (by default 3 rounds, dropping the top 10% residuals each
    round) to shrug off tracker outliers.
    """
    if camera_traj.frame != CAMERA:
        raise FrameMismatch(f"expected a camera-frame field, got {camera_traj.frame!r}")
    idx = np.asarray(borderland_indices, dtype=np.intp)
    if idx.size < 3:
        raise DegenerateGeometry(f"need >= 3 borderland points, have {idx.size}")
    origin = camera_traj.positions[0][idx]
    # Frame 0 is the world frame by definition; fitting it would only add
    # rounding noise around the identity.
    extrinsics = [RigidTransform.identity()]
    for t in range(1, camera_traj.frame_count):
        ok = camera_traj.valid[t][idx]
        if np.count_nonzero(ok) < 3:
            raise DegenerateGeometry(f"frame {t}: fewer than 3 valid borderland points")
        try:
            q = _trimmed_fit(origin[ok], camera_traj.positions[t][idx][ok],
                             trim_rounds, trim_fraction)
        except DegenerateGeometry as e:
            raise DegenerateGeometry(f"frame {t}: {e}") from e
        extrinsics.append(q.inverse())
    return extrinsics


def motion_strength(residual: np.ndarray, valid: np.ndarray, return_flags: bool = False):
    """Per-frame mean speed of a residual field.

    residual is (T, N, 3); strength[0] = 0 and strength[t] averages
    ||residual[t, i] - residual[t-1, i]|| over points valid at both frames.
    Frames with no such point get strength 0; pass return_flags=True to
    also receive the per-frame flag marking them.
    """
    res = np.asarray(residual, dtype=np.float64)
    val = np.asarray(valid, dtype=bool)
    if res.ndim != 3 or res.shape[2] != 3:
        raise ValueError(f"residual must be (T, N, 3), got {res.shape}")
    if val.shape != res.shape[:2]:
        raise ValueError(f"valid shape {val.shape} != {res.shape[:2]}")
    t_count = res.shape[0]
    out = np.zeros(t_count, dtype=np.float64)
    flags = np.zeros(t_count, dtype=bool)
    for t in range(1, t_count):
        both = val[t] & val[t - 1]
        n = np.count_nonzero(both)
        if n == 0:
            flags[t] = True
            log.warning("motion_strength: no valid points at frame %d; strength set to 0", t)
            continue
        step = res[t][both] - res[t - 1][both]
        out[t] = float(np.linalg.norm(step, axis=1).mean())
    if return_flags:
        return out, flags
    return out


def decompose_unit(world_traj: TrajectoryField, unit_indices, category: int) -> UnitMotion:
    """Split one unit's world trajectories into rigid curve + residual.

    Borderland (0) and brush (2) keep the identity rigid curve, so the
    residual is the raw displacement from the initial points; brush units
    additionally get a strength curve. Drag (1) fits the per-frame rigid
    transform to the unit's valid points and measures strength on what the
    fit cannot explain.
    """
    idx = np.asarray(unit_indices, dtype=np.intp)
    if idx.size == 0:
        raise EmptyUnit("unit has no tracked points")
    category = int(category)
    if category not in (CATEGORY_BORDERLAND, CATEGORY_DRAG, CATEGORY_BRUSH):
        raise ValueError(f"unknown category {category}")
    pos = world_traj.positions[:, idx, :]
    val = world_traj.valid[:, idx]
    origin = pos[0]
    t_count = world_traj.frame_count

    rigid: list[RigidTransform] = [RigidTransform.identity()]
    if category == CATEGORY_DRAG:
        for t in range(1, t_count):
            ok = val[t]
            if np.count_nonzero(ok) < 3:
                raise DegenerateGeometry(f"frame {t}: fewer than 3 valid points in drag unit")
            try:
                rigid.append(fit_rigid(origin[ok], pos[t][ok]))
            except DegenerateGeometry as e:
                raise DegenerateGeometry(f"frame {t}: {e}") from e
    else:
        rigid.extend(RigidTransform.identity() for _ in range(t_count - 1))

    residual = np.zeros_like(pos)
    for t in range(t_count):
        residual[t] = np.where(val[t][:, None], pos[t] - rigid[t].apply(origin), 0.0)

    if category == CATEGORY_BORDERLAND:
        strength = np.zeros(t_count)
        flags = np.zeros(t_count, dtype=bool)
    else:
        strength, flags = motion_strength(residual, val, return_flags=True)
    return UnitMotion(category=category, indices=idx, rigid=rigid,
                      strength=strength, residual=residual, valid=val,
                      strength_flags=flags)


def decompose_all(world_traj: TrajectoryField, partition, scene_valid) -> list[UnitMotion]:
    """Decompose every unit of a partition, borderland first."""
    motions = []
    for p in range(partition.unit_count):
        idx = partition.track_indices(scene_valid, p)
        motions.append(decompose_unit(world_traj, idx, int(partition.categories[p])))
    return motions


# ---------------------------------------------------------------------------
# Track files


def write_tracks(path, traj: TrajectoryField):
    t, n = traj.positions.shape[:2]
    with open(path, "wb") as f:
        f.write(TRACK_MAGIC)
        f.write(struct.pack("<III", TRACK_VERSION, t, n))
        f.write(struct.pack("<B", 1 if traj.frame == WORLD else 0))
        f.write(traj.positions.astype("<f4").tobytes())
        f.write(traj.valid.astype(np.uint8).tobytes())


def read_tracks(path) -> TrajectoryField:
    try:
        blob = Path(path).read_bytes()
    except OSError as e:
        raise UnreadableFile(f"cannot read track file {path}: {e}") from e
    if len(blob) < 17 or blob[:4] != TRACK_MAGIC:
        raise CorruptHeader(f"{path}: bad magic")
    version, t, n = struct.unpack("<III", blob[4:16])
    if version != TRACK_VERSION:
        raise CorruptHeader(f"{path}: unsupported version {version}")
    (flag,) = struct.unpack("<B", blob[16:17])
    if flag not in (0, 1):
        raise CorruptHeader(f"{path}: bad frame flag {flag}")
    expected = 17 + t * n * 3 * 4 + t * n
    if len(blob) < expected:
        raise TruncatedPayload(f"{path}: expected {expected} bytes, have {len(blob)}")
    pos = np.frombuffer(blob, dtype="<f4", count=t * n * 3, offset=17)
    val = np.frombuffer(blob, dtype=np.uint8, count=t * n, offset=17 + t * n * 3 * 4)
    return TrajectoryField(
        WORLD if flag == 1 else CAMERA,
        pos.reshape(t, n, 3).astype(np.float64),
        val.reshape(t, n).astype(bool),
    )
