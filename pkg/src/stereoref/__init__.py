"""Stereo reconstruction reference toolkit.

Generates reference depth/disparity/occlusion data by rendering a surface
model through a calibrated rectified stereo rig at a constrained pose,
and scores third-party disparity maps against such references.
"""

__version__ = "0.1.0"

from .rig import (
    RectifiedRig,
    build_matrices,
    depth_to_disparity,
    disparity_to_depth,
    project_point,
    rig_from_matrices,
    triangulate_chessboard,
    triangulate_pixel,
)
from .se3 import (
    AlignmentSet,
    MarkerTriple,
    RigidTransform,
    average_rotations,
    average_transforms,
    compose,
    constrained_adjust,
    initial_pose_from_markers,
    invert,
    register_points,
)
from .mesh import TriangleMesh, load_mesh, save_ply
from .render import (
    DepthBuffer,
    RenderConfig,
    linearize_depth,
    project_texture,
    rasterize_depth,
    render_overlay,
)
from .reference import (
    MaskLabel,
    ReferenceBundle,
    compute_occlusions,
    depthmap_to_disparity,
    generate_reference,
    range_stats,
    resample_and_diff,
)
from .metrics import (
    EvalConfig,
    EvalReport,
    ImageScore,
    aggregate,
    bad_pixel_percent,
    evaluate_image,
    reject_outlier_alignments,
    rmse_depth,
    rmse_disparity,
    signed_error_image,
)
from .dataset import DatasetRecord, read_record, write_record

__all__ = [
    "__version__",
    "RectifiedRig",
    "build_matrices",
    "disparity_to_depth",
    "depth_to_disparity",
    "triangulate_pixel",
    "triangulate_chessboard",
    "project_point",
    "rig_from_matrices",
    "RigidTransform",
    "AlignmentSet",
    "MarkerTriple",
    "compose",
    "invert",
    "average_rotations",
    "average_transforms",
    "register_points",
    "initial_pose_from_markers",
    "constrained_adjust",
    "TriangleMesh",
    "load_mesh",
    "save_ply",
    "RenderConfig",
    "DepthBuffer",
    "rasterize_depth",
    "linearize_depth",
    "render_overlay",
    "project_texture",
    "MaskLabel",
    "ReferenceBundle",
    "generate_reference",
    "depthmap_to_disparity",
    "compute_occlusions",
    "resample_and_diff",
    "range_stats",
    "EvalConfig",
    "EvalReport",
    "ImageScore",
    "bad_pixel_percent",
    "rmse_disparity",
    "rmse_depth",
    "signed_error_image",
    "reject_outlier_alignments",
    "evaluate_image",
    "aggregate",
    "DatasetRecord",
    "read_record",
    "write_record",
]
