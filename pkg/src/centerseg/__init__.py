"""Algorithmic core of a center-keypoint instance-segmentation pipeline.

Non-learned building blocks only: ground-truth target encoding and box
decoding, losses with analytic gradients, ROI grid sampling and mask
assembly, uncertainty-biased boundary point sampling, and AP / leaf
metrics, all verified against brute-force oracles on synthetic scenes.
"""

from .codec import (
    BBox,
    Detection,
    DetectionTargets,
    GaussianSpec,
    decode_boxes,
    encode_targets,
    gaussian_radius,
    nms_maxpool,
)
from .config import RunConfig
from .fmap import (
    FeatureMap,
    RoiRect,
    SamplePoint,
    bilinear_sample,
    grid_sample_crop,
    instance_normalize,
    nearest_resize,
)
from .losses import (
    FocalParams,
    LossResult,
    bce_mask_loss,
    focal_heatmap_loss,
    offset_loss,
    refine_point_loss,
    smooth_l1,
    total_detection_loss,
    wh_loss,
)
from .metrics import (
    APResult,
    LeafMetrics,
    MatchResult,
    PRCurve,
    ap_at,
    ap_sweep,
    box_iou,
    leaf_metrics,
    mask_iou,
    match_detections,
)
from .refine import (
    SamplingConfig,
    SamplingPointSet,
    extract_point_features,
    generate_biased_points,
    soft_labels,
    uncertainty_map,
)
from .segmentation import (
    InstanceMask,
    PyramidLevels,
    assemble_instance,
    crop_roi_pyramid,
    hough_vote_paste,
    rle_decode,
    rle_encode,
    threshold_mask,
)
from .synth import SceneParams, SynthScene, generate_scene, random_boxes

__version__ = "0.1.0"
