"""motionforge: disentangled image-to-video motion control signals.

Construct, preview, serialize, and evaluate per-unit motion control:
rigid/residual trajectory decomposition, motion strength, and the composed
(T, 5, H, W) control tensor, plus the training-data pipeline and trajectory
metrics, all runnable at desk scale.
"""

from .compose import (
    ControlTensor,
    MotionScript,
    compose,
    compose_from_pipeline,
    read_tensor,
    render_preview,
    write_tensor,
)
from .errors import MotionForgeError, MotionForgeIOError
from .geometry import (
    CameraIntrinsics,
    RigidTransform,
    backproject,
    fit_rigid,
    interpolate_rigid,
    project,
)
from .metrics import EvalReport, evaluate, motion_iou, msc, objmc
from .pipeline import (
    PRESETS,
    SyntheticConfig,
    build_training_sample,
    dynamic_mask,
    generate_synthetic,
)
from .scene import (
    SceneDomain,
    UnitPartition,
    build_partition,
    load_manifest,
    load_scene,
    select_units_from_segments,
)
from .trajectory import (
    TrajectoryField,
    UnitMotion,
    decompose_unit,
    motion_strength,
    read_tracks,
    solve_extrinsics,
    to_world,
    write_tracks,
)

__version__ = "0.1.0"
