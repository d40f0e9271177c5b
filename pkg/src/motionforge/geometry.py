"""Rigid transforms, pinhole camera model, and weighted SE(3) least-squares.

Conventions used throughout the package:

* 3D points are float64 numpy arrays of shape (3,) or (N, 3), in world
  length units. Scenes are normalized to order-unity scale, so absolute
  tolerances (1e-9 for collinearity and near-zero depth) are meaningful.
* Pixel coordinates are (u, v) with u along image width and v along height.
* A RigidTransform maps points by ``rotation @ p + translation``. Camera
  extrinsics map camera coordinates to world coordinates; world-to-camera
  is their inverse.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import BehindCamera, DegenerateGeometry, InvalidDepth

MIN_DEPTH = 1e-9
COLLINEARITY_TOL = 1e-9


def _as_points(p) -> np.ndarray:
    a = np.asarray(p, dtype=np.float64)
    if a.shape[-1] != 3:
        raise ValueError(f"expected points with last dimension 3, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class RigidTransform:
    """Element of SE(3): orthonormal rotation (det +1) plus translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        r.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_axis_angle(cls, rotvec, translation=(0.0, 0.0, 0.0)) -> "RigidTransform":
        """Build from an axis-angle vector (axis * radians) and a translation."""
        rot = Rotation.from_rotvec(np.asarray(rotvec, dtype=np.float64))
        return cls(rot.as_matrix(), translation)

    def apply(self, p) -> np.ndarray:
        """Map one point or an (N, 3) batch: rotation @ p + translation."""
        pts = _as_points(p)
        return pts @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self after other: (self ∘ other)(p) = self(other(p))."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return self.compose(other)

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def is_identity(self, tol: float = 1e-9) -> bool:
        return bool(
            np.all(np.abs(self.rotation - np.eye(3)) <= tol)
            and np.all(np.abs(self.translation) <= tol)
        )

    def almost_equal(self, other: "RigidTransform", tol: float = 1e-9) -> bool:
        return bool(
            np.all(np.abs(self.rotation - other.rotation) <= tol)
            and np.all(np.abs(self.translation - other.translation) <= tol)
        )

    def as_matrix(self) -> np.ndarray:
        """4x4 homogeneous form."""
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @classmethod
    def default_for(cls, width: int, height: int, focal_scale: float = 1.0) -> "CameraIntrinsics":
        """Centered principal point, focal length tied to image width."""
        f = focal_scale * max(width, height)
        return cls(fx=f, fy=f, cx=width / 2.0, cy=height / 2.0, width=width, height=height)

    def to_dict(self) -> dict:
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height,
        }


def project(k: CameraIntrinsics, p) -> np.ndarray:
    """Project point(s) with positive depth to pixel coordinates.

    Raises BehindCamera if any depth is <= 1e-9.
    """
    pts = _as_points(p)
    z = pts[..., 2]
    if np.any(z <= MIN_DEPTH):
        raise BehindCamera(f"depth {float(np.min(z)):g} <= {MIN_DEPTH:g}")
    uv = np.empty(pts.shape[:-1] + (2,), dtype=np.float64)
    uv[..., 0] = k.fx * pts[..., 0] / z + k.cx
    uv[..., 1] = k.fy * pts[..., 1] / z + k.cy
    return uv


def project_with_mask(k: CameraIntrinsics, pts) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized projection that flags instead of raising.

    Returns (uv, ok) where ok marks points in front of the camera whose
    projection lands inside the image footprint [-0.5, W-0.5) x
    [-0.5, H-0.5) (each pixel center owns a half-open unit cell, so the
    border pixels themselves are inside). uv is undefined where ok is
    False.
    """
    pts = _as_points(pts)
    z = pts[..., 2]
    in_front = z > MIN_DEPTH
    safe_z = np.where(in_front, z, 1.0)
    u = k.fx * pts[..., 0] / safe_z + k.cx
    v = k.fy * pts[..., 1] / safe_z + k.cy
    ok = (
        in_front
        & (u >= -0.5) & (u < k.width - 0.5)
        & (v >= -0.5) & (v < k.height - 0.5)
    )
    return np.stack([u, v], axis=-1), ok


def backproject(k: CameraIntrinsics, pixel, depth: float) -> np.ndarray:
    """Lift a pixel to the 3D point at the given positive depth."""
    if not np.isfinite(depth) or depth <= 0:
        raise InvalidDepth(f"depth must be positive and finite, got {depth!r}")
    u, v = float(pixel[0]), float(pixel[1])
    return np.array(
        [depth * (u - k.cx) / k.fx, depth * (v - k.cy) / k.fy, depth],
        dtype=np.float64,
    )


def backproject_grid(k: CameraIntrinsics, depth: np.ndarray) -> np.ndarray:
    """Backproject a full H x W depth map to an H x W x 3 point grid.

    Non-finite or non-positive depths produce NaN points; validity is the
    caller's concern.
    """
    depth = np.asarray(depth, dtype=np.float64)
    h, w = depth.shape
    u = np.arange(w, dtype=np.float64)[None, :]
    v = np.arange(h, dtype=np.float64)[:, None]
    d = np.where(np.isfinite(depth) & (depth > 0), depth, np.nan)
    pts = np.empty((h, w, 3), dtype=np.float64)
    pts[..., 0] = d * (u - k.cx) / k.fx
    pts[..., 1] = d * (v - k.cy) / k.fy
    pts[..., 2] = d
    return pts


def fit_rigid(source, target, weights=None) -> RigidTransform:
    """Weighted least-squares rigid alignment (Kabsch, no scale).

    Finds argmin over SE(3) of sum_i w_i * ||target_i - (R @ source_i + t)||^2
    via SVD of the weighted cross-covariance, with the determinant sign
    corrected so the result is a proper rotation.

    Raises DegenerateGeometry for fewer than 3 points with positive weight
    or a source whose positively-weighted points are collinear (second
    singular value below 1e-9 times the first).
    """
    src = _as_points(source).reshape(-1, 3)
    tgt = _as_points(target).reshape(-1, 3)
    if src.shape != tgt.shape:
        raise ValueError(f"source {src.shape} and target {tgt.shape} differ")
    if weights is None:
        w = np.ones(len(src), dtype=np.float64)
    else:
        w = np.asarray(weights, dtype=np.float64).reshape(-1)
        if len(w) != len(src):
            raise ValueError("weights length must match point count")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
    effective = np.count_nonzero(w > 0)
    total = w.sum()
    if effective < 3 or total <= 0:
        raise DegenerateGeometry(f"need >= 3 points with positive weight, have {effective}")

    wn = w / total
    mu_s = wn @ src
    mu_t = wn @ tgt
    src_c = src - mu_s
    tgt_c = tgt - mu_t

    sv = np.linalg.svd(src_c * wn[:, None], compute_uv=False)
    if sv[1] < COLLINEARITY_TOL * sv[0]:
        raise DegenerateGeometry("source points are collinear within tolerance")

    cov = (tgt_c * wn[:, None]).T @ src_c
    u, _, vt = np.linalg.svd(cov)
    d = np.sign(np.linalg.det(u @ vt))
    rot = u @ np.diag([1.0, 1.0, d]) @ vt
    return RigidTransform(rot, mu_t - rot @ mu_s)


def interpolate_rigid(a: RigidTransform, b: RigidTransform, s: float) -> RigidTransform:
    """Interpolate between two rigid transforms.

    Translation is linear; rotation follows the shortest quaternion
    geodesic. s=0 gives a, s=1 gives b.
    """
    s = float(s)
    if s <= 0.0:
        return a
    if s >= 1.0:
        return b
    qa = Rotation.from_matrix(a.rotation).as_quat()
    qb = Rotation.from_matrix(b.rotation).as_quat()
    dot = float(qa @ qb)
    if dot < 0.0:
        qb = -qb
        dot = -dot
    if dot > 1.0 - 1e-12:
        q = qa + s * (qb - qa)  # nearly parallel: lerp avoids 0/0
    else:
        theta = np.arccos(np.clip(dot, -1.0, 1.0))
        q = (np.sin((1.0 - s) * theta) * qa + np.sin(s * theta) * qb) / np.sin(theta)
    q /= np.linalg.norm(q)
    rot = Rotation.from_quat(q).as_matrix()
    trans = (1.0 - s) * a.translation + s * b.translation
    return RigidTransform(rot, trans)
