"""Evaluation metrics on 2D pixel trajectories.

All metrics use masked means over valid (frame, point) samples:

* objmc: mean pixel distance between generated and reference trajectories,
  on dense tracks.
* msc: motion strength score, the mean per-frame pixel displacement of the
  tracks (within a user mask when given).
* motion_iou: IoU between the set of start pixels that move more than a
  threshold and a user mask.

These are fixed conventions of this toolkit so numbers are comparable
across runs; they are written into every report header.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, NoValidSamples, ShapeMismatch

CONVENTIONS = {
    "objmc": "mean ||gen - ref||_2 over valid (frame, point) samples, pixels",
    "msc": "mean ||p_t - p_{t-1}||_2 over frames t >= 1 and points valid at both, pixels/frame",
    "motion_iou": "IoU of {start pixels with max displacement > threshold_px} vs the user mask",
}


def _check_tracks(tracks, valid, name: str):
    a = np.asarray(tracks, dtype=np.float64)
    if a.ndim != 3 or a.shape[2] != 2:
        raise ShapeMismatch(f"{name} must be (T, N, 2), got {a.shape}")
    v = np.asarray(valid, dtype=bool) if valid is not None else np.ones(a.shape[:2], dtype=bool)
    if v.shape != a.shape[:2]:
        raise ShapeMismatch(f"{name} validity {v.shape} != {a.shape[:2]}")
    return a, v


def objmc(generated, reference, valid=None, per_frame: bool = False):
    """Mean endpoint distance in pixels between two dense trajectory sets."""
    gen, v = _check_tracks(generated, valid, "generated")
    ref, vr = _check_tracks(reference, valid, "reference")
    if gen.shape != ref.shape:
        raise ShapeMismatch(f"generated {gen.shape} != reference {ref.shape}")
    v = v & vr
    if not v.any():
        raise NoValidSamples("no valid samples to compare")
    dist = np.linalg.norm(gen - ref, axis=2)
    mean = float(dist[v].mean())
    if not per_frame:
        return mean
    frames = [float(dist[t][v[t]].mean()) if v[t].any() else None
              for t in range(gen.shape[0])]
    return mean, frames


def msc(tracks_2d, valid=None, per_frame: bool = False):
    """Motion strength score: mean per-frame displacement in pixels/frame."""
    tracks, v = _check_tracks(tracks_2d, valid, "tracks")
    t_count = tracks.shape[0]
    if t_count < 2:
        raise NoValidSamples("need at least 2 frames")
    steps, frames = [], [None]  # frame 0 has no step
    for t in range(1, t_count):
        both = v[t] & v[t - 1]
        if not both.any():
            frames.append(None)
            continue
        d = np.linalg.norm(tracks[t][both] - tracks[t - 1][both], axis=1)
        steps.append(d)
        frames.append(float(d.mean()))
    if not steps:
        raise NoValidSamples("no consecutive valid samples")
    mean = float(np.concatenate(steps).mean())
    if not per_frame:
        return mean
    return mean, frames


def moving_mask(tracks_2d, valid, shape, threshold_px: float = 1.0,
                up_to_frame: int | None = None) -> np.ndarray:
    """Start pixels whose track moves more than threshold_px at any frame.

    Track start positions are rounded to the nearest pixel of the given
    (H, W) shape; tracks starting outside it are ignored.
    """
    tracks, v = _check_tracks(tracks_2d, valid, "tracks")
    h, w = shape
    end = tracks.shape[0] if up_to_frame is None else up_to_frame + 1
    disp = np.linalg.norm(tracks[:end] - tracks[0], axis=2)
    disp = np.where(v[:end], disp, 0.0)
    peak = disp.max(axis=0)
    start_u = np.rint(tracks[0, :, 0]).astype(int)
    start_v = np.rint(tracks[0, :, 1]).astype(int)
    inside = (start_u >= 0) & (start_u < w) & (start_v >= 0) & (start_v < h)
    out = np.zeros((h, w), dtype=bool)
    sel = inside & (peak > threshold_px)
    out[start_v[sel], start_u[sel]] = True
    return out


def motion_iou(tracks_2d, valid, user_mask, threshold_px: float = 1.0,
               per_frame: bool = False):
    """IoU between the moving-pixel set and the user mask.

    Returns 1.0 when both sets are empty (nothing was asked to move and
    nothing moved).
    """
    mask = np.asarray(user_mask, dtype=bool)
    if mask.ndim != 2:
        raise DimensionMismatch(f"user mask must be 2D, got shape {mask.shape}")

    def iou_at(frame):
        moving = moving_mask(tracks_2d, valid, mask.shape, threshold_px, up_to_frame=frame)
        union = np.count_nonzero(moving | mask)
        if union == 0:
            return 1.0
        return float(np.count_nonzero(moving & mask) / union)

    total = iou_at(None)
    if not per_frame:
        return total
    t_count = np.asarray(tracks_2d).shape[0]
    return total, [iou_at(t) for t in range(t_count)]


@dataclass
class EvalReport:
    """Bundle of the three metrics with per-frame breakdowns."""

    objmc: float | None = None
    msc: float | None = None
    iou: float | None = None
    objmc_per_frame: list = field(default_factory=list)
    msc_per_frame: list = field(default_factory=list)
    iou_per_frame: list = field(default_factory=list)
    threshold_px: float = 1.0

    def __post_init__(self):
        if self.objmc is not None and self.objmc < 0:
            raise ValueError("objmc must be >= 0")
        if self.msc is not None and self.msc < 0:
            raise ValueError("msc must be >= 0")
        if self.iou is not None and not (0.0 <= self.iou <= 1.0):
            raise ValueError("iou must be in [0, 1]")

    def to_json(self) -> dict:
        return {
            "conventions": CONVENTIONS,
            "threshold_px": self.threshold_px,
            "objmc": self.objmc,
            "msc": self.msc,
            "iou": self.iou,
            "per_frame": {
                "objmc": self.objmc_per_frame,
                "msc": self.msc_per_frame,
                "iou": self.iou_per_frame,
            },
        }

    def write(self, path, csv_path=None):
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True))
        if csv_path is not None:
            self.write_csv(csv_path)

    def write_csv(self, path):
        rows = max(len(self.objmc_per_frame), len(self.msc_per_frame),
                   len(self.iou_per_frame))

        def cell(series, i):
            return series[i] if i < len(series) and series[i] is not None else ""

        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["frame", "objmc", "msc", "iou"])
            for t in range(rows):
                writer.writerow([t, cell(self.objmc_per_frame, t),
                                 cell(self.msc_per_frame, t),
                                 cell(self.iou_per_frame, t)])


def tracks_in_mask(tracks_2d, valid, user_mask):
    """Restrict tracks to those whose start pixel lies inside the mask."""
    tracks, v = _check_tracks(tracks_2d, valid, "tracks")
    mask = np.asarray(user_mask, dtype=bool)
    h, w = mask.shape
    start_u = np.rint(tracks[0, :, 0]).astype(int)
    start_v = np.rint(tracks[0, :, 1]).astype(int)
    inside = (start_u >= 0) & (start_u < w) & (start_v >= 0) & (start_v < h)
    sel = np.zeros(tracks.shape[1], dtype=bool)
    sel[inside] = mask[start_v[inside], start_u[inside]]
    return tracks[:, sel], v[:, sel]


def evaluate(generated, reference=None, valid=None, user_mask=None,
             threshold_px: float = 1.0) -> EvalReport:
    """Compute every applicable metric in one pass.

    objmc needs a reference; msc and motion_iou use the user mask when
    given (msc is then restricted to tracks starting inside it).
    """
    report = EvalReport(threshold_px=threshold_px)
    if reference is not None:
        report.objmc, report.objmc_per_frame = objmc(generated, reference, valid,
                                                     per_frame=True)
    if user_mask is not None:
        masked, masked_valid = tracks_in_mask(generated, valid, user_mask)
        report.msc, report.msc_per_frame = msc(masked, masked_valid, per_frame=True)
        report.iou, report.iou_per_frame = motion_iou(generated, valid, user_mask,
                                                      threshold_px, per_frame=True)
    else:
        report.msc, report.msc_per_frame = msc(generated, valid, per_frame=True)
    return report
