"""Manhattan-world fisheye calibration toolkit.

Recovers full camera rotation (pan/tilt/roll, no four-fold ambiguity) from
labeled vanishing-point and diagonal-point detections, synthesizes fisheye
images with exact ground truth from equirectangular panoramas, and scores
calibration quality.
"""

from .camera import (
    CameraParams,
    Extrinsics,
    OutOfFovError,
    backproject,
    backproject_grid,
    fov_limit,
    gamma,
    inverse_gamma,
    project,
)
from .heatmap import DecodedPoint, Heatmap, decode_argmax, decode_dark, encode
from .manhattan import (
    Arrangement,
    DegenerateArrangementError,
    Detection,
    KeypointLabel,
    align_directions,
    builtin_arrangements,
    count_unique_axes,
    direction_of,
    min_axis_angle,
    panorama_coord,
    verify_octahedral_symmetry,
)
from .metrics import EvalReport, angle_mae, oks_ap_ar, pck, psnr, repe, ssim
from .rotation import (
    Correspondence,
    EulerPTR,
    IllConditionedError,
    NearParallelError,
    Rotation,
    RotationEstimate,
    augment_degenerate,
    estimate_rotation,
    olae_fit,
    quaternion_to_matrix,
    rodrigues_to_quaternion,
)
from .synthesis import (
    GroundTruth,
    SampleConfig,
    generate_sample,
    gt_keypoints,
    load_panorama,
    oracle_detect,
    recover_image,
    render_face_from_panorama,
    render_fisheye,
    sample_params,
)

__version__ = "0.1.0"

__all__ = [
    "Arrangement",
    "CameraParams",
    "Correspondence",
    "DecodedPoint",
    "DegenerateArrangementError",
    "Detection",
    "EulerPTR",
    "EvalReport",
    "Extrinsics",
    "GroundTruth",
    "Heatmap",
    "IllConditionedError",
    "KeypointLabel",
    "NearParallelError",
    "OutOfFovError",
    "Rotation",
    "RotationEstimate",
    "SampleConfig",
    "align_directions",
    "angle_mae",
    "augment_degenerate",
    "backproject",
    "backproject_grid",
    "builtin_arrangements",
    "count_unique_axes",
    "decode_argmax",
    "decode_dark",
    "direction_of",
    "encode",
    "estimate_rotation",
    "fov_limit",
    "gamma",
    "generate_sample",
    "gt_keypoints",
    "inverse_gamma",
    "load_panorama",
    "min_axis_angle",
    "oks_ap_ar",
    "olae_fit",
    "oracle_detect",
    "panorama_coord",
    "pck",
    "project",
    "psnr",
    "quaternion_to_matrix",
    "recover_image",
    "render_face_from_panorama",
    "render_fisheye",
    "repe",
    "rodrigues_to_quaternion",
    "sample_params",
    "ssim",
]
