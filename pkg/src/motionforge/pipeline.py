"""Synthetic scenes with exact ground truth, and the desk-scale
training-data pipeline that turns tracked scenes into control tensors.

The generator builds everything analytically from its configuration, so the
same config yields bit-identical output and every intermediate quantity
(extrinsics, per-unit rigid curves, residuals) is known exactly. Motion
families: static, pure translation, pure rotation about the unit centroid,
screw motion, and rigid motion with a sinusoidal nonrigid residual. Camera
families: static, dolly (advancing along +z), pan (rotating in place about
y), orbit (rotating about a pivot in front of the camera).
"""

from __future__ import annotations

import json
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field

import numpy as np

from .compose import ControlTensor, compose_from_pipeline
from .errors import InvalidConfig, MotionForgeError, PipelineStageError
from .geometry import CameraIntrinsics, RigidTransform
from .scene import (
    CATEGORY_DRAG,
    SceneDomain,
    build_partition,
    scene_from_depth,
    select_units_from_segments,
    selected_segment_indices,
)
from .trajectory import (
    CAMERA,
    TrajectoryField,
    UnitMotion,
    decompose_all,
    solve_extrinsics,
    to_camera,
    to_world,
)

DEFAULT_DYNAMIC_RATIO = 0.02


# ---------------------------------------------------------------------------
# Configuration


@dataclass
class UnitSpec:
    """One synthetic foreground unit: a shape, a motion family, parameters.

    shape: {"kind": "rect", "x0", "y0", "x1", "y1"} or
           {"kind": "disk", "cx", "cy", "r"} in pixels.
    family: static | translate | rotate | screw | sinusoid.
    velocity is world units/frame; rate is radians/frame; advance is the
    screw's axial step per frame. sinusoid adds a nonrigid residual of the
    given amplitude on top of a translation by velocity.
    """

    shape: dict
    family: str = "static"
    velocity: tuple = (0.0, 0.0, 0.0)
    axis: tuple = (0.0, 0.0, 1.0)
    rate: float = 0.0
    advance: float = 0.0
    amplitude: float = 0.0
    omega: float = 0.5
    category: str = "drag"
    depth_offset: float = -0.15

    def __post_init__(self):
        self.velocity = tuple(self.velocity)
        self.axis = tuple(self.axis)

    @property
    def is_rigid(self) -> bool:
        return self.family in ("static", "translate", "rotate", "screw")


@dataclass
class CameraSpec:
    """Camera extrinsic family. rate is radians/frame, advance units/frame."""

    family: str = "static"
    rate: float = 0.0
    advance: float = 0.0
    axis: tuple = (0.0, 1.0, 0.0)
    pivot_depth: float = 1.0

    def __post_init__(self):
        self.axis = tuple(self.axis)


@dataclass
class SyntheticConfig:
    width: int = 96
    height: int = 72
    frame_count: int = 12
    seed: int = 0
    units: list = field(default_factory=list)
    camera: CameraSpec = field(default_factory=CameraSpec)
    depth_ripple: float = 0.1

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, doc: dict) -> "SyntheticConfig":
        doc = dict(doc)
        doc["units"] = [UnitSpec(**u) for u in doc.get("units", [])]
        if "camera" in doc and isinstance(doc["camera"], dict):
            doc["camera"] = CameraSpec(**doc["camera"])
        return cls(**doc)


@dataclass(frozen=True)
class SyntheticScene:
    """A generated scene plus every ground-truth quantity the tests need."""

    config: SyntheticConfig
    scene: SceneDomain
    unit_masks: list
    partition: UnitPartition
    true_extrinsics: list
    true_unit_rigids: list    # [unit][frame] RigidTransform, borderland included
    true_residuals: np.ndarray  # (T, N, 3) world-frame nonrigid offsets
    world_traj: TrajectoryField
    camera_traj: TrajectoryField
    seed: int


def _unit_mask(shape: dict, width: int, height: int) -> np.ndarray:
    kind = shape.get("kind", "rect")
    m = np.zeros((height, width), dtype=bool)
    if kind == "rect":
        x0, y0, x1, y1 = (int(shape[k]) for k in ("x0", "y0", "x1", "y1"))
        m[y0:y1, x0:x1] = True
    elif kind == "disk":
        cx, cy, r = float(shape["cx"]), float(shape["cy"]), float(shape["r"])
        u = np.arange(width)[None, :]
        v = np.arange(height)[:, None]
        m = (u - cx) ** 2 + (v - cy) ** 2 <= r * r
    else:
        raise InvalidConfig(f"unknown shape kind {kind!r}")
    if not m.any():
        raise InvalidConfig(f"shape {shape} covers no pixel")
    return m


def _axis_unit(axis) -> np.ndarray:
    a = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(a)
    if n == 0:
        raise InvalidConfig("axis must be nonzero")
    return a / n


def _rotation_about(point: np.ndarray, axis: np.ndarray, angle: float) -> RigidTransform:
    g = RigidTransform.from_axis_angle(axis * angle)
    return RigidTransform(g.rotation, point - g.rotation @ point)


def _unit_rigid(spec: UnitSpec, centroid: np.ndarray, t: int) -> RigidTransform:
    if spec.family == "static":
        return RigidTransform.identity()
    if spec.family in ("translate", "sinusoid"):
        return RigidTransform(np.eye(3), np.asarray(spec.velocity, dtype=np.float64) * t)
    axis = _axis_unit(spec.axis)
    if spec.family == "rotate":
        return _rotation_about(centroid, axis, spec.rate * t)
    if spec.family == "screw":
        g = _rotation_about(centroid, axis, spec.rate * t)
        return RigidTransform(g.rotation, g.translation + axis * spec.advance * t)
    raise InvalidConfig(f"unknown motion family {spec.family!r}")


def _unit_residual(spec: UnitSpec, points: np.ndarray, t: int) -> np.ndarray:
    """Nonrigid offsets at frame t; zero at t=0 by construction."""
    if spec.family != "sinusoid" or spec.amplitude == 0.0:
        return np.zeros_like(points)
    # Per-point direction and gain vary smoothly with the initial position.
    phase = 3.0 * points[:, 0] + 5.0 * points[:, 1]
    gain = spec.amplitude * (0.6 + 0.4 * np.sin(phase))
    direction = np.stack([np.cos(phase), np.sin(phase), 0.3 * np.cos(2.0 * phase)], axis=1)
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    return (gain * np.sin(spec.omega * t))[:, None] * direction


def _camera_extrinsic(spec: CameraSpec, t: int) -> RigidTransform:
    if spec.family == "static" or t == 0:
        return RigidTransform.identity()
    if spec.family == "dolly":
        return RigidTransform(np.eye(3), np.array([0.0, 0.0, spec.advance * t]))
    axis = _axis_unit(spec.axis)
    if spec.family == "pan":
        return RigidTransform.from_axis_angle(axis * spec.rate * t)
    if spec.family == "orbit":
        pivot = np.array([0.0, 0.0, spec.pivot_depth])
        return _rotation_about(pivot, axis, spec.rate * t)
    raise InvalidConfig(f"unknown camera family {spec.family!r}")


def generate_synthetic(config: SyntheticConfig) -> SyntheticScene:
    """Build a deterministic synthetic scene with exact ground truth."""
    w, h, t_count = config.width, config.height, config.frame_count
    if t_count < 2:
        raise InvalidConfig("frame_count must be >= 2")
    if w * h < 64:
        raise InvalidConfig("scene must have at least 64 pixels")
    if not config.units:
        raise InvalidConfig("need at least one unit")

    u = np.arange(w, dtype=np.float64)[None, :]
    v = np.arange(h, dtype=np.float64)[:, None]
    depth = 1.0 + config.depth_ripple * np.sin(2 * np.pi * u / w) * np.cos(2 * np.pi * v / h)
    masks = [_unit_mask(spec.shape, w, h) for spec in config.units]
    for i, (spec, mask) in enumerate(zip(config.units, masks)):
        for other in masks[:i]:
            if np.any(mask & other):
                raise InvalidConfig(f"unit {i} overlaps an earlier unit")
        depth = np.where(mask, depth + spec.depth_offset, depth)

    intrinsics = CameraIntrinsics.default_for(w, h)
    scene = scene_from_depth(depth, intrinsics)
    partition = build_partition(scene, masks, [spec.category for spec in config.units])

    points0 = scene.tracked_points()
    n = len(points0)
    labels_flat = partition.labels[scene.valid]

    extrinsics = [_camera_extrinsic(config.camera, t) for t in range(t_count)]
    unit_points = [points0[labels_flat == p + 1] for p in range(len(config.units))]
    centroids = [pts.mean(axis=0) for pts in unit_points]

    true_rigids = [[RigidTransform.identity() for _ in range(t_count)]]  # borderland
    for spec, c in zip(config.units, centroids):
        true_rigids.append([_unit_rigid(spec, c, t) for t in range(t_count)])

    world = np.empty((t_count, n, 3), dtype=np.float64)
    residuals = np.zeros((t_count, n, 3), dtype=np.float64)
    world[0] = points0
    for t in range(1, t_count):
        world[t] = points0  # borderland stays put
        for p, spec in enumerate(config.units, start=1):
            sel = labels_flat == p
            res = _unit_residual(spec, points0[sel], t)
            world[t][sel] = true_rigids[p][t].apply(points0[sel]) + res
            residuals[t][sel] = res

    valid = np.ones((t_count, n), dtype=bool)
    world_traj = TrajectoryField("world", world, valid)
    camera_traj = to_camera(world_traj, extrinsics)
    return SyntheticScene(
        config=config, scene=scene, unit_masks=masks, partition=partition,
        true_extrinsics=extrinsics, true_unit_rigids=true_rigids,
        true_residuals=residuals, world_traj=world_traj,
        camera_traj=camera_traj, seed=config.seed,
    )


def analytic_brush_strength(spec: UnitSpec, points: np.ndarray, centroid: np.ndarray,
                            frame_count: int) -> np.ndarray:
    """Closed-form motion strength of a rigid unit treated as a brush.

    Brush strength averages each point's per-frame displacement, measured
    about the identity. Only defined for the rigid families.
    """
    out = np.zeros(frame_count)
    if spec.family == "static":
        return out
    if spec.family == "translate":
        out[1:] = np.linalg.norm(np.asarray(spec.velocity, dtype=np.float64))
        return out
    if spec.family in ("rotate", "screw"):
        axis = _axis_unit(spec.axis)
        rel = points - centroid
        radial = rel - np.outer(rel @ axis, axis)
        radii = np.linalg.norm(radial, axis=1)
        chord = 2.0 * np.sin(abs(spec.rate) / 2.0) * radii
        if spec.family == "screw":
            step = np.hypot(chord, spec.advance)
        else:
            step = chord
        out[1:] = step.mean()
        return out
    raise InvalidConfig(f"no closed-form strength for family {spec.family!r}")


def ground_truth_motions(syn: SyntheticScene, categories) -> list[UnitMotion]:
    """Unit motions built from the generator's truth, for oracle tensors.

    categories maps generator unit index 1..P to a category code (missing
    entries default to drag); drag units carry the true rigid curve with
    zero strength, brush units the identity curve with the closed-form
    strength.
    """
    categories = dict(categories)
    t_count = syn.config.frame_count
    labels_flat = syn.partition.labels[syn.scene.valid]
    points0 = syn.scene.tracked_points()
    motions = []
    border_idx = np.nonzero(labels_flat == 0)[0]
    identity_curve = [RigidTransform.identity() for _ in range(t_count)]
    motions.append(UnitMotion(
        category=0, indices=border_idx, rigid=identity_curve,
        strength=np.zeros(t_count), residual=np.zeros((t_count, len(border_idx), 3)),
        valid=np.ones((t_count, len(border_idx)), dtype=bool)))
    for p, spec in enumerate(syn.config.units, start=1):
        idx = np.nonzero(labels_flat == p)[0]
        pts = points0[idx]
        centroid = pts.mean(axis=0)
        cat = int(categories.get(p, CATEGORY_DRAG))
        if cat == CATEGORY_DRAG:
            rigid = list(syn.true_unit_rigids[p])
            strength = np.zeros(t_count)
        else:
            rigid = list(identity_curve)
            strength = analytic_brush_strength(spec, pts, centroid, t_count)
        motions.append(UnitMotion(
            category=cat, indices=idx, rigid=rigid, strength=strength,
            residual=np.zeros((t_count, len(idx), 3)),
            valid=np.ones((t_count, len(idx)), dtype=bool)))
    return motions


# ---------------------------------------------------------------------------
# Track perturbation (mimics tracker error without embedding a tracker)


def pixel_tracks(syn: SyntheticScene) -> TrajectoryField:
    """Project the camera-frame trajectories to 2D pixel tracks.

    Positions hold (u, v, 0); samples behind the camera or out of frame are
    invalid. This is the dense reference a generated video's tracks are
    scored against.
    """
    from .geometry import project_with_mask

    t_count, n = syn.camera_traj.positions.shape[:2]
    pos = np.zeros((t_count, n, 3))
    val = np.zeros((t_count, n), dtype=bool)
    for t in range(t_count):
        uv, ok = project_with_mask(syn.scene.intrinsics, syn.camera_traj.positions[t])
        pos[t, :, :2] = uv
        val[t] = syn.camera_traj.valid[t] & ok
    return TrajectoryField(syn.camera_traj.frame, pos, val)


def add_track_noise(traj: TrajectoryField, sigma: float = 0.0,
                    outlier_fraction: float = 0.0, outlier_scale: float = 1.0,
                    seed: int = 0, indices=None) -> TrajectoryField:
    """Gaussian jitter plus a seeded fraction of persistently-offset points.

    Frame 0 is never touched (tracks start exactly at the initial points).
    Outliers are drawn from `indices` when given, else from all points.
    """
    rng = np.random.default_rng(seed)
    pos = traj.positions.copy()
    t_count, n = pos.shape[:2]
    if sigma > 0:
        pos[1:] += rng.normal(scale=sigma, size=(t_count - 1, n, 3))
    if outlier_fraction > 0:
        pool = np.arange(n) if indices is None else np.asarray(indices, dtype=np.intp)
        k = int(round(outlier_fraction * len(pool)))
        chosen = rng.choice(pool, size=k, replace=False)
        offsets = rng.normal(size=(k, 3))
        offsets *= outlier_scale / np.linalg.norm(offsets, axis=1, keepdims=True)
        pos[1:, chosen] += offsets
    return TrajectoryField(traj.frame, pos, traj.valid)


# ---------------------------------------------------------------------------
# Training-data pipeline


def dynamic_mask(scene: SceneDomain, world_traj: TrajectoryField,
                 threshold_ratio: float = DEFAULT_DYNAMIC_RATIO) -> np.ndarray:
    """Pixels whose peak world displacement exceeds threshold_ratio times
    the median scene depth."""
    if threshold_ratio <= 0:
        raise ValueError("threshold_ratio must be positive")
    disp = np.linalg.norm(world_traj.positions - world_traj.positions[0], axis=2)
    disp = np.where(world_traj.valid, disp, 0.0)
    peak = disp.max(axis=0)
    mask = np.zeros((scene.height, scene.width), dtype=bool)
    mask[scene.valid] = peak > threshold_ratio * scene.median_depth()
    return mask


@contextmanager
def _stage(name: str):
    try:
        yield
    except MotionForgeError as e:
        raise PipelineStageError(name, e) from e


def build_training_sample(scene: SceneDomain, segments, camera_traj: TrajectoryField,
                          rng_seed: int = 0,
                          threshold_ratio: float = DEFAULT_DYNAMIC_RATIO
                          ) -> tuple[ControlTensor, dict]:
    """Run the full training-data pipeline on one tracked scene.

    Stages: preliminary extrinsics over all tracks (the dynamic mask needs
    world coordinates before the borderland is known) -> dynamic mask ->
    unit selection by the strict majority-overlap rule -> fair-coin
    category assignment -> final extrinsics from the borderland ->
    world-frame conversion -> per-unit decomposition -> tensor composition.
    Returns the tensor and a JSON-ready provenance record.
    """
    if camera_traj.frame != CAMERA:
        raise PipelineStageError("input", MotionForgeError("camera_traj must be camera-frame"))
    rng = np.random.default_rng(rng_seed)

    with _stage("preliminary_extrinsics"):
        all_idx = np.arange(camera_traj.point_count)
        prelim = solve_extrinsics(camera_traj, all_idx, trim_rounds=6)
        world_prelim = to_world(camera_traj, prelim)
    with _stage("dynamic_mask"):
        dyn = dynamic_mask(scene, world_prelim, threshold_ratio)
    with _stage("select_units"):
        selected = select_units_from_segments(segments, dyn)
        kept_indices = selected_segment_indices(segments, dyn)
    with _stage("assign_categories"):
        categories = [int(rng.integers(1, 3)) for _ in selected]
    with _stage("build_partition"):
        partition = build_partition(scene, selected, categories)
    with _stage("solve_extrinsics"):
        border_idx = partition.track_indices(scene.valid, 0)
        extrinsics = solve_extrinsics(camera_traj, border_idx)
    with _stage("to_world"):
        world = to_world(camera_traj, extrinsics)
    with _stage("decompose"):
        motions = decompose_all(world, partition, scene.valid)
    with _stage("compose"):
        tensor = compose_from_pipeline(scene, partition, motions, extrinsics)

    provenance = {
        "seed": int(rng_seed),
        "threshold_ratio": float(threshold_ratio),
        "selected_segments": kept_indices,
        "units": [
            {
                "id": p,
                "segment_index": (kept_indices[p - 1] if p > 0 else None),
                "category": int(partition.categories[p]),
                "pixels": int(np.count_nonzero(partition.labels == p)),
                "mean_fit_residual": float(
                    np.linalg.norm(motions[p].residual[motions[p].valid], axis=-1).mean()
                    if motions[p].valid.any() else 0.0),
                "strength": [float(s) for s in motions[p].strength],
            }
            for p in range(partition.unit_count)
        ],
        "extrinsics": [_rigid_to_json(e) for e in extrinsics],
    }
    return tensor, provenance


def _rigid_to_json(g: RigidTransform) -> dict:
    from scipy.spatial.transform import Rotation

    return {
        "rotation": Rotation.from_matrix(g.rotation).as_rotvec().tolist(),
        "translation": g.translation.tolist(),
    }


def process_batch(batch_path) -> list[dict]:
    """Run the training pipeline over a batch manifest.

    The manifest is a JSON document naming scene manifests, their track
    files, and an output directory::

        {"output_dir": "out",
         "scenes": [{"scene": "a/scene.json", "tracks": "a/camera.trck",
                     "seed": 1, "name": "a"}, ...]}

    Relative paths resolve against the manifest's directory. Each scene
    gets its own subdirectory with sample.ctrl + provenance.json; the
    returned summaries carry name, seed, and unit count per scene.
    """
    import json as _json
    from pathlib import Path

    from .compose import write_tensor
    from .scene import load_manifest
    from .trajectory import read_tracks

    batch_path = Path(batch_path)
    doc = _json.loads(batch_path.read_text())
    base = batch_path.parent
    out_root = Path(doc["output_dir"])
    if not out_root.is_absolute():
        out_root = base / out_root
    summaries = []
    for i, entry in enumerate(doc.get("scenes", [])):
        name = str(entry.get("name", i))
        scene_path = Path(entry["scene"])
        tracks_path = Path(entry["tracks"])
        scene, masks, _ = load_manifest(
            scene_path if scene_path.is_absolute() else base / scene_path)
        camera_traj = read_tracks(
            tracks_path if tracks_path.is_absolute() else base / tracks_path)
        seed = int(entry.get("seed", 0))
        tensor, provenance = build_training_sample(scene, masks, camera_traj,
                                                   rng_seed=seed)
        out_dir = out_root / name
        out_dir.mkdir(parents=True, exist_ok=True)
        write_tensor(tensor, out_dir / "sample.ctrl")
        (out_dir / "provenance.json").write_text(
            _json.dumps(provenance, indent=2, sort_keys=True))
        summaries.append({"name": name, "seed": seed,
                          "units": len(provenance["units"])})
    return summaries


# ---------------------------------------------------------------------------
# Standard presets (used by the CLI and the test fixtures)


def _rect(x0, y0, x1, y1):
    return {"kind": "rect", "x0": x0, "y0": y0, "x1": x1, "y1": y1}


def _disk(cx, cy, r):
    return {"kind": "disk", "cx": cx, "cy": cy, "r": r}


PRESETS: dict[str, SyntheticConfig] = {
    "static": SyntheticConfig(
        units=[UnitSpec(shape=_rect(30, 22, 56, 46), family="static")]),
    "translate": SyntheticConfig(
        units=[UnitSpec(shape=_rect(28, 20, 52, 44), family="translate",
                        velocity=(0.012, 0.004, 0.0))]),
    "rotate_dolly": SyntheticConfig(
        units=[UnitSpec(shape=_disk(48, 36, 13), family="rotate",
                        axis=(0.0, 0.0, 1.0), rate=0.06)],
        camera=CameraSpec(family="dolly", advance=0.008)),
    "screw_orbit": SyntheticConfig(
        units=[UnitSpec(shape=_disk(40, 34, 12), family="screw",
                        axis=(0.2, 0.3, 0.93), rate=0.05, advance=0.006)],
        camera=CameraSpec(family="orbit", rate=0.01, axis=(0, 1, 0), pivot_depth=1.0)),
    "two_units_pan": SyntheticConfig(
        units=[
            UnitSpec(shape=_rect(12, 12, 34, 34), family="translate",
                     velocity=(0.010, 0.0, 0.003)),
            UnitSpec(shape=_disk(66, 48, 11), family="rotate",
                     axis=(0.1, 0.9, 0.4), rate=0.07),
        ],
        camera=CameraSpec(family="pan", rate=0.004, axis=(0, 1, 0))),
    "sinusoid_pan": SyntheticConfig(
        units=[UnitSpec(shape=_rect(36, 24, 62, 50), family="sinusoid",
                        velocity=(0.006, 0.002, 0.0), amplitude=0.02, omega=0.7)],
        camera=CameraSpec(family="pan", rate=0.003, axis=(0, 1, 0))),
}


def write_synthetic_files(syn: SyntheticScene, out_dir) -> dict:
    """Write a synthetic scene as loadable files: depth, masks, manifest,
    camera tracks, and the ground-truth record. Returns the manifest doc."""
    from pathlib import Path

    from . import scene as scene_io
    from . import trajectory as traj_io

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scene_io.write_depth(out / "scene.dpth", syn.scene.depth)
    units = []
    for i, (mask, spec) in enumerate(zip(syn.unit_masks, syn.config.units), start=1):
        name = f"unit{i}.png"
        scene_io.write_mask(out / name, mask)
        units.append({"mask": name, "category": spec.category})
    manifest = {
        "depth": "scene.dpth",
        "intrinsics": syn.scene.intrinsics.to_dict(),
        "normalize": False,
        "units": units,
    }
    (out / "scene.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    traj_io.write_tracks(out / "camera.trck", syn.camera_traj)
    traj_io.write_tracks(out / "world.trck", syn.world_traj)
    traj_io.write_tracks(out / "pixel.trck", pixel_tracks(syn))
    truth = {
        "seed": syn.seed,
        "config": syn.config.to_json(),
        "extrinsics": [_rigid_to_json(e) for e in syn.true_extrinsics],
        "unit_rigids": [[_rigid_to_json(g) for g in curve] for curve in syn.true_unit_rigids],
    }
    (out / "truth.json").write_text(json.dumps(truth, indent=2, sort_keys=True))
    return manifest
