"""Exception hierarchy.

Validation failures (bad geometry, bad inputs, contract violations) derive
from MotionForgeError; I/O and file-format failures derive from
MotionForgeIOError so callers can map them to distinct exit codes.
"""


class MotionForgeError(Exception):
    """Base class for validation and contract errors."""


class MotionForgeIOError(MotionForgeError):
    """Base class for file and stream errors."""


class DegenerateGeometry(MotionForgeError):
    """Too few effective points, or points collinear within tolerance."""


class BehindCamera(MotionForgeError):
    """Point has non-positive depth along the optical axis."""


class InvalidDepth(MotionForgeError):
    """Depth value is non-positive or non-finite."""


class DimensionMismatch(MotionForgeError):
    """Arrays or files that must share dimensions do not."""


class UnreadableFile(MotionForgeIOError):
    """File missing, unreadable, or not of the expected kind."""


class CorruptHeader(MotionForgeIOError):
    """Binary header failed magic/version/field validation."""


class TruncatedPayload(MotionForgeIOError):
    """Binary payload shorter than the header promises."""


class OverlappingMasks(MotionForgeError):
    """Unit masks intersect; carries the first conflicting pixel (u, v)."""

    def __init__(self, pixel):
        self.pixel = tuple(int(c) for c in pixel)
        super().__init__(f"masks overlap at pixel (u={self.pixel[0]}, v={self.pixel[1]})")


class EmptyMask(MotionForgeError):
    """A unit mask (or the borderland) covers no valid pixel."""


class EmptyUnit(MotionForgeError):
    """A unit has no tracked points to decompose."""


class FrameMismatch(MotionForgeError):
    """Trajectory field is in the wrong coordinate frame for the operation."""


class NonIdentityFirstExtrinsic(MotionForgeError):
    """Extrinsic curve does not start at the identity."""


class MissingUnitScript(MotionForgeError):
    """A unit lacks the script entry its category requires."""

    def __init__(self, units, message=None):
        self.units = sorted(int(u) for u in units)
        super().__init__(message or f"script incomplete for units {self.units}")


class KeyframeOutOfRange(MotionForgeError):
    """A keyframe index falls outside [0, frame_count - 1]."""


class FrameOutOfRange(MotionForgeError):
    """Requested frame index outside the tensor's range."""


class ShapeMismatch(MotionForgeError):
    """Metric inputs disagree in shape."""


class NoValidSamples(MotionForgeError):
    """Metric has no valid (frame, point) samples to average."""


class InvalidConfig(MotionForgeError):
    """Synthetic-scene or CLI configuration is inconsistent."""


class PipelineStageError(MotionForgeError):
    """Failure inside a named training-pipeline stage; wraps the cause."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}': {cause}")
