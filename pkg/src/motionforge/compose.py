"""Control-signal composition: four control maps stacked into a
(T, 5, H, W) tensor, preview rendering, and tensor serialization.

Channel order: 0 trajectory u, 1 trajectory v, 2 motion strength,
3 partition index, 4 category code. Trajectory channels hold absolute
pixel coordinates of each unit's points after its rigid curve and the
inverse camera extrinsic, so at frame 0 they equal the pixel grid itself.
Samples that land behind the camera or outside the frame are written as
the sentinel -1 (never clamped); pixels with no valid depth also carry the
sentinel, with partition/category/strength left at 0.

Tensor file format ("CTRL"): magic b"CTRL", u32 version=1, u32 T, u32 C=5,
u32 H, u32 W (little-endian), then the float32 payload in (T, C, H, W)
order. A JSON sidecar (same path + ".json") records units, categories and
validity statistics.
"""

from __future__ import annotations

import colorsys
import json
import struct
from bisect import bisect_right
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .errors import (
    CorruptHeader,
    FrameOutOfRange,
    KeyframeOutOfRange,
    MissingUnitScript,
    TruncatedPayload,
    UnreadableFile,
)
from .geometry import RigidTransform, interpolate_rigid, project_with_mask
from .scene import CATEGORY_BRUSH, CATEGORY_DRAG, SceneDomain, UnitPartition, category_name
from .trajectory import UnitMotion

TENSOR_MAGIC = b"CTRL"
TENSOR_VERSION = 1
CHANNELS = 5
SENTINEL = -1.0

CH_U, CH_V, CH_STRENGTH, CH_PARTITION, CH_CATEGORY = range(5)


@dataclass(frozen=True)
class ControlTensor:
    """The composed (T, 5, H, W) float32 control signal."""

    data: np.ndarray
    meta: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        d = np.ascontiguousarray(self.data, dtype=np.float32)
        if d.ndim != 4 or d.shape[1] != CHANNELS:
            raise ValueError(f"tensor must be (T, {CHANNELS}, H, W), got {d.shape}")
        d.flags.writeable = False
        object.__setattr__(self, "data", d)

    @property
    def frame_count(self) -> int:
        return int(self.data.shape[0])

    @property
    def height(self) -> int:
        return int(self.data.shape[2])

    @property
    def width(self) -> int:
        return int(self.data.shape[3])

    def to_bytes(self) -> bytes:
        t, c, h, w = self.data.shape
        header = TENSOR_MAGIC + struct.pack("<IIIII", TENSOR_VERSION, t, c, h, w)
        return header + self.data.astype("<f4").tobytes()


# ---------------------------------------------------------------------------
# Motion scripts


def _sorted_keyframes(curve, what: str):
    frames = [k[0] for k in curve]
    if len(set(frames)) != len(frames):
        raise ValueError(f"duplicate keyframe frames in {what}")
    return sorted(curve, key=lambda k: k[0])


@dataclass
class MotionScript:
    """User-authored control intent as keyframe curves.

    camera and unit_rigids map to lists of (frame, RigidTransform);
    unit_strengths to lists of (frame, value). Frame-0 entries are pinned
    to the identity / zero; curves hold their last value past the final
    keyframe.
    """

    frame_count: int
    camera: list = dc_field(default_factory=list)
    unit_rigids: dict = dc_field(default_factory=dict)
    unit_strengths: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        if self.frame_count < 1:
            raise ValueError("frame_count must be >= 1")
        self.camera = self._norm_rigid_curve(self.camera, "camera")
        self.unit_rigids = {
            int(u): self._norm_rigid_curve(c, f"unit {u} rigid")
            for u, c in self.unit_rigids.items()
        }
        self.unit_strengths = {
            int(u): self._norm_strength_curve(c, f"unit {u} strength")
            for u, c in self.unit_strengths.items()
        }

    def _check_range(self, frame: int, what: str):
        if not (0 <= frame <= self.frame_count - 1):
            raise KeyframeOutOfRange(
                f"{what}: keyframe at frame {frame} outside [0, {self.frame_count - 1}]")

    def _norm_rigid_curve(self, curve, what: str):
        curve = _sorted_keyframes(list(curve), what)
        for frame, _ in curve:
            self._check_range(frame, what)
        if not curve or curve[0][0] != 0:
            curve.insert(0, (0, RigidTransform.identity()))
        elif not curve[0][1].is_identity(tol=1e-9):
            raise ValueError(f"{what}: frame-0 keyframe must be the identity")
        return curve

    def _norm_strength_curve(self, curve, what: str):
        if np.isscalar(curve):
            value = float(curve)
            curve = [(0, 0.0)] if value == 0.0 else [(0, 0.0), (1, value)]
        curve = [(int(f), float(v)) for f, v in _sorted_keyframes(list(curve), what)]
        for frame, value in curve:
            self._check_range(frame, what)
            if value < 0:
                raise ValueError(f"{what}: strength must be nonnegative, got {value}")
        if not curve or curve[0][0] != 0:
            curve.insert(0, (0, 0.0))
        elif curve[0][1] != 0.0:
            raise ValueError(f"{what}: frame-0 strength must be 0")
        return curve

    @classmethod
    def identity(cls, frame_count: int) -> "MotionScript":
        return cls(frame_count=frame_count)

    def camera_at(self, t: int) -> RigidTransform:
        return _eval_rigid_curve(self.camera, t)

    def unit_rigid_at(self, unit: int, t: int) -> RigidTransform:
        curve = self.unit_rigids.get(unit)
        return RigidTransform.identity() if curve is None else _eval_rigid_curve(curve, t)

    def unit_strength_at(self, unit: int, t: int) -> float:
        curve = self.unit_strengths.get(unit)
        return 0.0 if curve is None else _eval_strength_curve(curve, t)

    def validate_against(self, partition: UnitPartition):
        """Check coverage: drag units need rigid curves, brush units need
        strength curves, and no curve may target a nonexistent unit."""
        known = set(range(1, partition.unit_count))
        stray = (set(self.unit_rigids) | set(self.unit_strengths)) - known
        if stray:
            raise MissingUnitScript(stray, f"script names unknown units {sorted(stray)}")
        missing = []
        for p in range(1, partition.unit_count):
            cat = int(partition.categories[p])
            if cat == CATEGORY_DRAG and p not in self.unit_rigids:
                missing.append(p)
            elif cat == CATEGORY_BRUSH and p not in self.unit_strengths:
                missing.append(p)
        if missing:
            raise MissingUnitScript(missing)

    def to_json(self) -> dict:
        def rigid_curve(curve):
            return [_keyframe_to_json(f, g) for f, g in curve]

        return {
            "frame_count": self.frame_count,
            "camera": rigid_curve(self.camera),
            "units": {
                str(u): {
                    **({"rigid": rigid_curve(self.unit_rigids[u])} if u in self.unit_rigids else {}),
                    **({"strength": [{"frame": f, "value": v} for f, v in self.unit_strengths[u]]}
                       if u in self.unit_strengths else {}),
                }
                for u in sorted(set(self.unit_rigids) | set(self.unit_strengths))
            },
        }

    @classmethod
    def from_json(cls, doc: dict) -> "MotionScript":
        frame_count = int(doc.get("frame_count", 24))
        camera = [_keyframe_from_json(k) for k in doc.get("camera", [])]
        unit_rigids, unit_strengths = {}, {}
        for key, entry in (doc.get("units") or {}).items():
            u = int(key)
            if "rigid" in entry:
                unit_rigids[u] = [_keyframe_from_json(k) for k in entry["rigid"]]
            if "strength" in entry:
                s = entry["strength"]
                if isinstance(s, (int, float)):
                    unit_strengths[u] = s
                else:
                    unit_strengths[u] = [(int(k["frame"]), float(k["value"])) for k in s]
        return cls(frame_count=frame_count, camera=camera,
                   unit_rigids=unit_rigids, unit_strengths=unit_strengths)


def _keyframe_to_json(frame: int, g: RigidTransform) -> dict:
    from scipy.spatial.transform import Rotation

    return {
        "frame": int(frame),
        "rotation": Rotation.from_matrix(g.rotation).as_rotvec().tolist(),
        "translation": g.translation.tolist(),
    }


def _keyframe_from_json(k: dict):
    return (
        int(k["frame"]),
        RigidTransform.from_axis_angle(k.get("rotation", (0, 0, 0)),
                                       k.get("translation", (0, 0, 0))),
    )


def _eval_rigid_curve(curve, t: int) -> RigidTransform:
    frames = [f for f, _ in curve]
    i = bisect_right(frames, t) - 1
    if i < 0:
        return RigidTransform.identity()
    if i == len(curve) - 1 or frames[i] == t:
        return curve[i][1]
    f0, g0 = curve[i]
    f1, g1 = curve[i + 1]
    return interpolate_rigid(g0, g1, (t - f0) / (f1 - f0))


def _eval_strength_curve(curve, t: int) -> float:
    frames = [f for f, _ in curve]
    i = bisect_right(frames, t) - 1
    if i < 0:
        return 0.0
    if i == len(curve) - 1 or frames[i] == t:
        return curve[i][1]
    f0, v0 = curve[i]
    f1, v1 = curve[i + 1]
    s = (t - f0) / (f1 - f0)
    return (1.0 - s) * v0 + s * v1


# ---------------------------------------------------------------------------
# Composition


def compose_frame(scene: SceneDomain, partition: UnitPartition,
                  camera: RigidTransform, unit_rigids, unit_strengths) -> np.ndarray:
    """Render one frame's five channels (float32 (5, H, W)).

    unit_rigids / unit_strengths are indexable by unit id; the camera
    extrinsic is inverted here, so each unit's points go through
    camera^-1 ∘ rigid before projection.
    """
    h, w = scene.height, scene.width
    out = np.zeros((CHANNELS, h, w), dtype=np.float64)
    out[CH_U] = SENTINEL
    out[CH_V] = SENTINEL
    cam_inv = camera.inverse()
    for p in range(partition.unit_count):
        mask = partition.labels == p
        if not np.any(mask):
            continue
        pts = scene.points[mask]
        moved = (cam_inv @ unit_rigids[p]).apply(pts)
        uv, ok = project_with_mask(scene.intrinsics, moved)
        out[CH_U][mask] = np.where(ok, uv[:, 0], SENTINEL)
        out[CH_V][mask] = np.where(ok, uv[:, 1], SENTINEL)
        out[CH_STRENGTH][mask] = unit_strengths[p]
        out[CH_PARTITION][mask] = p
        out[CH_CATEGORY][mask] = int(partition.categories[p])
    return out.astype(np.float32)


def _tensor_meta(scene: SceneDomain, partition: UnitPartition, data: np.ndarray) -> dict:
    in_frame = (data[:, CH_U, :, :] != SENTINEL).sum(axis=(1, 2))
    return {
        "frame_count": int(data.shape[0]),
        "height": scene.height,
        "width": scene.width,
        "units": [
            {
                "id": p,
                "category": category_name(int(partition.categories[p])),
                "pixels": int(np.count_nonzero(partition.labels == p)),
            }
            for p in range(partition.unit_count)
        ],
        "validity": {
            "valid_pixels": scene.valid_count,
            "in_frame_per_frame": [int(n) for n in in_frame],
        },
    }


def compose(scene: SceneDomain, partition: UnitPartition, script: MotionScript) -> ControlTensor:
    """Compose the control tensor from a user script (the authoring path)."""
    script.validate_against(partition)
    t_count = script.frame_count
    data = np.empty((t_count, CHANNELS, scene.height, scene.width), dtype=np.float32)
    for t in range(t_count):
        rigids = [script.unit_rigid_at(p, t) if partition.categories[p] == CATEGORY_DRAG
                  else RigidTransform.identity()
                  for p in range(partition.unit_count)]
        strengths = [0.0 if p == 0 else script.unit_strength_at(p, t)
                     for p in range(partition.unit_count)]
        data[t] = compose_frame(scene, partition, script.camera_at(t), rigids, strengths)
    return ControlTensor(data, _tensor_meta(scene, partition, data))


def compose_from_pipeline(scene: SceneDomain, partition: UnitPartition,
                          unit_motions: list[UnitMotion],
                          extrinsics: list[RigidTransform]) -> ControlTensor:
    """Compose the control tensor from decomposed unit motions (the
    training-data path). Semantics match `compose` with the fitted rigid
    curves and computed strength curves."""
    if len(unit_motions) != partition.unit_count:
        raise ValueError(f"{len(unit_motions)} unit motions for "
                         f"{partition.unit_count} units")
    t_count = len(extrinsics)
    for um in unit_motions:
        if um.frame_count != t_count:
            raise ValueError("unit motion frame count disagrees with extrinsics")
    data = np.empty((t_count, CHANNELS, scene.height, scene.width), dtype=np.float32)
    for t in range(t_count):
        rigids = [um.rigid[t] for um in unit_motions]
        strengths = [float(um.strength[t]) for um in unit_motions]
        data[t] = compose_frame(scene, partition, extrinsics[t], rigids, strengths)
    return ControlTensor(data, _tensor_meta(scene, partition, data))


# ---------------------------------------------------------------------------
# Preview


def unit_color(unit: int) -> tuple[int, int, int]:
    """Deterministic display color for a unit id (borderland is gray)."""
    if unit == 0:
        return (128, 128, 128)
    hue = (unit * 0.61803398875) % 1.0
    r, g, b = colorsys.hsv_to_rgb(hue, 0.85, 0.95)
    return (int(r * 255), int(g * 255), int(b * 255))


@dataclass(frozen=True)
class PreviewFrame:
    """Projected point set for one frame, plus an optional raster overlay."""

    frame: int
    points: list
    raster: np.ndarray | None = None


def render_preview(tensor: ControlTensor, frame: int, stride: int = 1,
                   raster: bool = False) -> PreviewFrame:
    """Read one frame's point set from the tensor (sentinels skipped).

    stride subsamples the pixel grid for lighter payloads. With
    raster=True an (H, W, 3) uint8 overlay is drawn, colored per unit.
    """
    if not (0 <= frame < tensor.frame_count):
        raise FrameOutOfRange(f"frame {frame} outside [0, {tensor.frame_count - 1}]")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    sl = np.s_[::stride, ::stride]
    u = tensor.data[frame, CH_U][sl]
    v = tensor.data[frame, CH_V][sl]
    part = tensor.data[frame, CH_PARTITION][sl]
    cat = tensor.data[frame, CH_CATEGORY][sl]
    keep = (u != SENTINEL) & (v != SENTINEL)
    points = [
        {"unit": int(p), "category": int(c), "u": float(uu), "v": float(vv)}
        for p, c, uu, vv in zip(part[keep], cat[keep], u[keep], v[keep])
    ]
    image = None
    if raster:
        image = np.zeros((tensor.height, tensor.width, 3), dtype=np.uint8)
        if np.any(keep):
            ui = np.rint(u[keep]).astype(int).clip(0, tensor.width - 1)
            vi = np.rint(v[keep]).astype(int).clip(0, tensor.height - 1)
            colors = np.array([unit_color(int(p)) for p in part[keep]], dtype=np.uint8)
            image[vi, ui] = colors
    return PreviewFrame(frame=frame, points=points, raster=image)


# ---------------------------------------------------------------------------
# Serialization


def tensor_from_bytes(blob: bytes, name: str = "<bytes>", meta: dict | None = None) -> ControlTensor:
    if len(blob) < 24 or blob[:4] != TENSOR_MAGIC:
        raise CorruptHeader(f"{name}: bad magic")
    version, t, c, h, w = struct.unpack("<IIIII", blob[4:24])
    if version != TENSOR_VERSION:
        raise CorruptHeader(f"{name}: unsupported version {version}")
    if c != CHANNELS:
        raise CorruptHeader(f"{name}: expected {CHANNELS} channels, header says {c}")
    expected = 24 + t * c * h * w * 4
    if len(blob) < expected:
        raise TruncatedPayload(f"{name}: expected {expected} bytes, have {len(blob)}")
    data = np.frombuffer(blob, dtype="<f4", count=t * c * h * w, offset=24)
    return ControlTensor(data.reshape(t, c, h, w), meta or {})


def write_tensor(tensor: ControlTensor, path):
    path = Path(path)
    path.write_bytes(tensor.to_bytes())
    sidecar = path.with_name(path.name + ".json")
    sidecar.write_text(json.dumps(tensor.meta, indent=2, sort_keys=True))


def read_tensor(path) -> ControlTensor:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise UnreadableFile(f"cannot read tensor {path}: {e}") from e
    meta = {}
    sidecar = path.with_name(path.name + ".json")
    if sidecar.exists():
        meta = json.loads(sidecar.read_text())
    return tensor_from_bytes(blob, name=str(path), meta=meta)
