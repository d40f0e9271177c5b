"""First-frame scene model: depth ingestion, backprojected point grid, and
the disjoint unit partition with per-unit categories.

Categories are encoded as integers: 0 borderland, 1 drag, 2 brush. The
borderland always has unit index 0; foreground units are numbered 1..P in
input order. Pixels without a finite positive depth are excluded from every
unit (label -1) and from all downstream fits.

Depth file format ("DPTH"): 16-byte header of magic b"DPTH", u32 version=1,
u32 height, u32 width (little-endian), followed by H*W float32 row-major
depths. Masks are 8-bit single-channel images, nonzero = inside. A scene
manifest is a JSON document naming the image, depth, intrinsics and mask
files; see `load_manifest`.
"""

from __future__ import annotations

import base64
import io
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import (
    CorruptHeader,
    DimensionMismatch,
    EmptyMask,
    OverlappingMasks,
    TruncatedPayload,
    UnreadableFile,
)
from .geometry import CameraIntrinsics, backproject_grid

DEPTH_MAGIC = b"DPTH"
DEPTH_VERSION = 1

CATEGORY_BORDERLAND = 0
CATEGORY_DRAG = 1
CATEGORY_BRUSH = 2

_CATEGORY_NAMES = {CATEGORY_BORDERLAND: "borderland", CATEGORY_DRAG: "drag", CATEGORY_BRUSH: "brush"}
_CATEGORY_CODES = {v: k for k, v in _CATEGORY_NAMES.items()}


def category_code(value) -> int:
    """Accept 'drag'/'brush' strings or 1/2 integers."""
    if isinstance(value, str):
        try:
            code = _CATEGORY_CODES[value.lower()]
        except KeyError:
            raise ValueError(f"unknown category {value!r}") from None
    else:
        code = int(value)
    if code not in (CATEGORY_DRAG, CATEGORY_BRUSH):
        raise ValueError(f"unit category must be drag (1) or brush (2), got {value!r}")
    return code


def category_name(code: int) -> str:
    return _CATEGORY_NAMES[int(code)]


@dataclass(frozen=True)
class SceneDomain:
    """Backprojected first-frame pixel grid.

    points[v, u] = backproject(intrinsics, (u, v), depth[v, u]) wherever
    valid; invalid pixels hold NaN. depth_scale records the factor the raw
    depths were divided by during normalization (1.0 if none).
    """

    width: int
    height: int
    intrinsics: CameraIntrinsics
    depth: np.ndarray
    points: np.ndarray
    valid: np.ndarray
    depth_scale: float = 1.0

    @property
    def valid_count(self) -> int:
        return int(np.count_nonzero(self.valid))

    def tracked_points(self) -> np.ndarray:
        """Valid-pixel 3D points in row-major order, shape (N, 3).

        This ordering defines the point indexing used by trajectory fields.
        """
        return self.points[self.valid]

    def tracked_pixels(self) -> np.ndarray:
        """(N, 2) integer (u, v) coordinates of the tracked points."""
        vs, us = np.nonzero(self.valid)
        return np.stack([us, vs], axis=1)

    def median_depth(self) -> float:
        return float(np.median(self.depth[self.valid]))


def scene_from_depth(depth: np.ndarray, intrinsics: CameraIntrinsics,
                     normalize: bool = False) -> SceneDomain:
    """Build a SceneDomain from an H x W depth map.

    Non-finite or non-positive depths are flagged invalid, not errored.
    With normalize=True depths are divided by their valid median so the
    scene has median depth 1.0; the factor is recorded in depth_scale.
    """
    depth = np.asarray(depth, dtype=np.float64)
    if depth.ndim != 2:
        raise DimensionMismatch(f"depth must be 2D, got shape {depth.shape}")
    h, w = depth.shape
    if (h, w) != (intrinsics.height, intrinsics.width):
        raise DimensionMismatch(
            f"depth is {w}x{h} but intrinsics expect {intrinsics.width}x{intrinsics.height}")
    valid = np.isfinite(depth) & (depth > 0)
    scale = 1.0
    if normalize and np.any(valid):
        scale = float(np.median(depth[valid]))
        depth = depth / scale
    points = backproject_grid(intrinsics, depth)
    depth = depth.copy()
    for a in (depth, points, valid):
        a.flags.writeable = False
    return SceneDomain(width=w, height=h, intrinsics=intrinsics, depth=depth,
                       points=points, valid=valid, depth_scale=scale)


def load_scene(image_path, depth_path, intrinsics: CameraIntrinsics | None = None,
               normalize: bool = True) -> SceneDomain:
    """Load a scene from an image file plus a DPTH depth file.

    The image fixes the expected dimensions; intrinsics default to a
    centered pinhole if not given. image_path may be None, in which case
    dimensions come from the depth file alone.
    """
    depth = read_depth(depth_path)
    h, w = depth.shape
    if image_path is not None:
        try:
            with Image.open(image_path) as img:
                iw, ih = img.size
        except (OSError, ValueError) as e:
            raise UnreadableFile(f"cannot read image {image_path}: {e}") from e
        if (iw, ih) != (w, h):
            raise DimensionMismatch(f"image is {iw}x{ih} but depth is {w}x{h}")
    if intrinsics is None:
        intrinsics = CameraIntrinsics.default_for(w, h)
    elif (intrinsics.width, intrinsics.height) != (w, h):
        raise DimensionMismatch(
            f"depth is {w}x{h} but intrinsics expect {intrinsics.width}x{intrinsics.height}")
    return scene_from_depth(depth, intrinsics, normalize=normalize)


@dataclass(frozen=True)
class UnitPartition:
    """Disjoint labeling of the valid pixel grid into motion units.

    labels[v, u] in {0..P} on valid pixels (-1 on invalid ones);
    categories[p] gives the unit category (categories[0] == 0, the
    borderland).
    """

    labels: np.ndarray
    categories: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int32))
        object.__setattr__(self, "categories", np.asarray(self.categories, dtype=np.int32))
        self.labels.flags.writeable = False
        self.categories.flags.writeable = False

    @property
    def unit_count(self) -> int:
        """Number of units including the borderland (P + 1)."""
        return int(len(self.categories))

    def unit_mask(self, label: int) -> np.ndarray:
        return self.labels == label

    def track_indices(self, valid: np.ndarray, label: int) -> np.ndarray:
        """Indices into the scene's tracked-point ordering for one unit."""
        return np.nonzero(self.labels[valid] == label)[0]

    def pixel_counts(self) -> np.ndarray:
        return np.array([int(np.count_nonzero(self.labels == p))
                         for p in range(self.unit_count)])


def build_partition(scene: SceneDomain, unit_masks, categories) -> UnitPartition:
    """Assemble a partition from disjoint foreground masks.

    Everything valid and uncovered becomes the borderland (label 0);
    foreground labels 1..P follow input order. Raises OverlappingMasks with
    the first conflicting pixel, and EmptyMask for masks (or a borderland)
    with no valid pixel.
    """
    cats = [category_code(c) for c in categories]
    if len(cats) != len(unit_masks):
        raise ValueError(f"{len(unit_masks)} masks but {len(cats)} categories")
    labels = np.where(scene.valid, 0, -1).astype(np.int32)
    covered = np.zeros((scene.height, scene.width), dtype=bool)
    for i, mask in enumerate(unit_masks):
        m = np.asarray(mask, dtype=bool)
        if m.shape != (scene.height, scene.width):
            raise DimensionMismatch(
                f"mask {i} is {m.shape[1]}x{m.shape[0]}, scene is {scene.width}x{scene.height}")
        m = m & scene.valid
        overlap = m & covered
        if np.any(overlap):
            vs, us = np.nonzero(overlap)
            raise OverlappingMasks((us[0], vs[0]))
        if not np.any(m):
            raise EmptyMask(f"unit mask {i} covers no valid pixel")
        covered |= m
        labels[m] = i + 1
    if not np.any(labels == 0):
        raise EmptyMask("masks cover every valid pixel; the borderland is empty")
    return UnitPartition(labels, np.array([CATEGORY_BORDERLAND] + cats, dtype=np.int32))


def selected_segment_indices(segments, dynamic_mask) -> list[int]:
    """Indices of segments whose intersection with the dynamic mask exceeds
    half their own area (strictly)."""
    dyn = np.asarray(dynamic_mask, dtype=bool)
    kept = []
    for i, seg in enumerate(segments):
        s = np.asarray(seg, dtype=bool)
        if s.shape != dyn.shape:
            raise DimensionMismatch(f"segment {i} shape {s.shape} != mask shape {dyn.shape}")
        area = np.count_nonzero(s)
        if area and np.count_nonzero(s & dyn) * 2 > area:
            kept.append(i)
    return kept


def select_units_from_segments(segments, dynamic_mask) -> list[np.ndarray]:
    """Keep segments that pass the strict majority-overlap rule, in input
    order; everything else is the caller's borderland."""
    return [np.asarray(segments[i], dtype=bool)
            for i in selected_segment_indices(segments, dynamic_mask)]


# ---------------------------------------------------------------------------
# File formats


def write_depth(path, depth: np.ndarray):
    depth = np.asarray(depth, dtype=np.float32)
    if depth.ndim != 2:
        raise DimensionMismatch(f"depth must be 2D, got shape {depth.shape}")
    h, w = depth.shape
    with open(path, "wb") as f:
        f.write(DEPTH_MAGIC)
        f.write(struct.pack("<III", DEPTH_VERSION, h, w))
        f.write(depth.astype("<f4").tobytes())


def read_depth(path) -> np.ndarray:
    try:
        blob = Path(path).read_bytes()
    except OSError as e:
        raise UnreadableFile(f"cannot read depth file {path}: {e}") from e
    return depth_from_bytes(blob, name=str(path))


def depth_from_bytes(blob: bytes, name: str = "<bytes>") -> np.ndarray:
    if len(blob) < 16 or blob[:4] != DEPTH_MAGIC:
        raise CorruptHeader(f"{name}: bad magic")
    version, h, w = struct.unpack("<III", blob[4:16])
    if version != DEPTH_VERSION:
        raise CorruptHeader(f"{name}: unsupported version {version}")
    expected = 16 + h * w * 4
    if len(blob) < expected:
        raise TruncatedPayload(f"{name}: expected {expected} bytes, have {len(blob)}")
    data = np.frombuffer(blob, dtype="<f4", count=h * w, offset=16)
    return data.reshape(h, w).astype(np.float64)


def write_mask(path, mask: np.ndarray):
    m = (np.asarray(mask, dtype=bool) * np.uint8(255))
    Image.fromarray(m, mode="L").save(path)


def read_mask(path, expected_shape=None) -> np.ndarray:
    try:
        with Image.open(path) as img:
            arr = np.asarray(img.convert("L"))
    except (OSError, ValueError) as e:
        raise UnreadableFile(f"cannot read mask {path}: {e}") from e
    if expected_shape is not None and arr.shape != tuple(expected_shape):
        raise DimensionMismatch(
            f"mask {path} is {arr.shape[1]}x{arr.shape[0]}, expected "
            f"{expected_shape[1]}x{expected_shape[0]}")
    return arr > 0


def mask_from_payload(payload: dict, expected_shape) -> np.ndarray:
    """Decode an inline mask: {'png_b64': ...} or {'packbits_b64', 'width', 'height'}."""
    h, w = expected_shape
    if "png_b64" in payload:
        raw = base64.b64decode(payload["png_b64"])
        try:
            with Image.open(io.BytesIO(raw)) as img:
                arr = np.asarray(img.convert("L"))
        except (OSError, ValueError) as e:
            raise UnreadableFile(f"cannot decode inline png mask: {e}") from e
    elif "packbits_b64" in payload:
        if int(payload.get("width", w)) != w or int(payload.get("height", h)) != h:
            raise DimensionMismatch("inline mask dimensions disagree with scene")
        bits = np.unpackbits(
            np.frombuffer(base64.b64decode(payload["packbits_b64"]), dtype=np.uint8))
        if len(bits) < h * w:
            raise DimensionMismatch("inline mask payload too short for scene")
        arr = bits[: h * w].reshape(h, w)
    else:
        raise ValueError("mask payload needs 'png_b64' or 'packbits_b64'")
    if arr.shape != (h, w):
        raise DimensionMismatch(
            f"inline mask is {arr.shape[1]}x{arr.shape[0]}, expected {w}x{h}")
    return arr > 0


def mask_to_payload(mask: np.ndarray) -> dict:
    m = np.asarray(mask, dtype=bool)
    return {
        "packbits_b64": base64.b64encode(np.packbits(m).tobytes()).decode("ascii"),
        "width": int(m.shape[1]),
        "height": int(m.shape[0]),
    }


def load_manifest(doc: dict | str | Path, base_dir=None,
                  normalize: bool = True) -> tuple[SceneDomain, list[np.ndarray], list[int]]:
    """Load a scene manifest.

    Accepts a path to a JSON file or an already-parsed document. Returns
    (scene, unit_masks, categories); units without a category default to
    drag. Masks and depth may be file references (resolved against
    base_dir / the manifest's directory) or inline payloads. A "normalize"
    key in the document overrides the normalize argument (synthetic scenes
    are exported at their native order-unity scale).

    Document shape::

        {
          "image": "frame.png",            # optional
          "depth": "scene.dpth",           # or {"b64": "..."} inline DPTH bytes
          "intrinsics": {"fx":.., "fy":.., "cx":.., "cy":..},   # optional
          "normalize": true,               # optional
          "units": [{"mask": "m1.png", "category": "drag"}, ...]
        }
    """
    if isinstance(doc, (str, Path)):
        path = Path(doc)
        try:
            text = path.read_text()
        except OSError as e:
            raise UnreadableFile(f"cannot read manifest {path}: {e}") from e
        if base_dir is None:
            base_dir = path.parent
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as e:
            raise UnreadableFile(f"manifest {path} is not valid JSON: {e}") from e
    base_dir = Path(base_dir) if base_dir is not None else Path(".")
    if not isinstance(doc, dict):
        raise ValueError("manifest must be a JSON object")
    if "depth" not in doc:
        raise ValueError("manifest is missing 'depth'")

    def resolve(ref):
        p = Path(ref)
        return p if p.is_absolute() else base_dir / p

    depth_ref = doc["depth"]
    if isinstance(depth_ref, dict):
        depth = depth_from_bytes(base64.b64decode(depth_ref["b64"]), name="<inline depth>")
    else:
        depth = read_depth(resolve(depth_ref))
    h, w = depth.shape

    image_ref = doc.get("image")
    if image_ref is not None:
        try:
            with Image.open(resolve(image_ref)) as img:
                iw, ih = img.size
        except (OSError, ValueError) as e:
            raise UnreadableFile(f"cannot read image {image_ref}: {e}") from e
        if (iw, ih) != (w, h):
            raise DimensionMismatch(f"image is {iw}x{ih} but depth is {w}x{h}")

    intr = doc.get("intrinsics")
    if intr is None:
        intrinsics = CameraIntrinsics.default_for(w, h)
    else:
        intrinsics = CameraIntrinsics(
            fx=float(intr["fx"]), fy=float(intr["fy"]),
            cx=float(intr["cx"]), cy=float(intr["cy"]),
            width=int(intr.get("width", w)), height=int(intr.get("height", h)))
        if (intrinsics.width, intrinsics.height) != (w, h):
            raise DimensionMismatch(
                f"depth is {w}x{h} but intrinsics expect "
                f"{intrinsics.width}x{intrinsics.height}")

    scene = scene_from_depth(depth, intrinsics,
                             normalize=bool(doc.get("normalize", normalize)))

    masks, categories = [], []
    for entry in doc.get("units", []):
        ref = entry["mask"]
        if isinstance(ref, dict):
            masks.append(mask_from_payload(ref, (h, w)))
        else:
            masks.append(read_mask(resolve(ref), expected_shape=(h, w)))
        categories.append(category_code(entry.get("category", "drag")))
    return scene, masks, categories
