"""Kinematic Gaussian-splat scene engine.

Loads robot-manipulation scenes stored as 3D Gaussians, drives them with
an articulated kinematic chain, composes and edits them with similarity
transforms, renders RGB + depth, aligns simulator and splat frames, and
replays trajectories into frame datasets or a closed-loop evaluation
service.
"""

__version__ = "0.1.0"

from .alignment import (
    AlignmentEstimate,
    FramePairObservation,
    LayoutConfig,
    LayoutShift,
    LocalizationResult,
    estimate_frame_transform,
    express_object,
    layout_shift,
    localize_camera,
)
from .editing import merge_scenes, transform_object, transform_scene
from .kinematics import (
    JointState,
    MdhChain,
    MdhJoint,
    bind_labels,
    drive_scene,
    forward_kinematics,
    link_transform,
)
from .rasterizer import (
    CameraModel,
    RenderOutput,
    SplatFragment,
    alpha_of,
    project_gaussian,
    render,
    render_mask,
    render_reference,
)
from .splats import (
    Gaussian,
    GaussianScene,
    covariance_of,
    eval_sh_color,
    load_splat_file,
    save_splat_file,
)
from .synthesizer import (
    DatasetManifest,
    Orbit,
    SynthesisJob,
    Trajectory,
    novel_view_sweep,
    replay,
)
from .transforms import SimilarityTransform

__all__ = [
    "__version__",
    "AlignmentEstimate",
    "CameraModel",
    "DatasetManifest",
    "FramePairObservation",
    "Gaussian",
    "GaussianScene",
    "JointState",
    "LayoutConfig",
    "LayoutShift",
    "LocalizationResult",
    "MdhChain",
    "MdhJoint",
    "Orbit",
    "RenderOutput",
    "SimilarityTransform",
    "SplatFragment",
    "SynthesisJob",
    "Trajectory",
    "alpha_of",
    "bind_labels",
    "covariance_of",
    "drive_scene",
    "estimate_frame_transform",
    "eval_sh_color",
    "express_object",
    "forward_kinematics",
    "layout_shift",
    "link_transform",
    "load_splat_file",
    "localize_camera",
    "merge_scenes",
    "novel_view_sweep",
    "project_gaussian",
    "render",
    "render_mask",
    "render_reference",
    "replay",
    "save_splat_file",
    "transform_object",
    "transform_scene",
]
