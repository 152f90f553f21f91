"""clustile: cluster-aware chip planning for detection on large images.

The pipeline mirrors a two-pass detection scheme for high-resolution
aerial imagery: find where objects clump, merge the candidate regions
down to a handful of cluster chips, size each chip so its objects land
in the detector's comfortable scale band, detect on the chips plus the
whole image, and fuse the results. A statistical scene and detector
simulator plus a COCO-style evaluator make the efficiency and accuracy
trade-offs measurable without any trained model.
"""

from .chip_planner import (
    ChipPlan,
    PlannerParams,
    global_chip,
    in_padded_area,
    plan_cluster,
    plan_cluster_unscaled,
    plan_eip,
    plan_from_json,
    plan_pipeline,
    plan_to_json,
    projected_scale,
)
from .clustering import (
    ClusterGenParams,
    ProposalParams,
    generate_gt_clusters,
    propose_clusters,
)
from .errors import ClustileError, ConfigError, MergeRoundLimitError, ValidationError
from .evaluation import (
    ChipTypeHistogram,
    ChipTypeParams,
    EvalParams,
    EvalResult,
    chip_type_histogram,
    coco_ap,
    count_forwarded,
    text_table,
)
from .fusion import FusionParams, filter_padded, fuse, nms, remap, suppress_global
from .geometry import (
    Box,
    ImageExtent,
    Transform,
    area,
    boundary_gap,
    clip,
    contains,
    contains_point,
    enclosing,
    intersection_area,
    iou,
    strictly_contains_point,
    to_global,
    to_local,
)
from .merging import MergeParams, icm, nmm
from .pipeline import (
    ImagePlan,
    StrategySpec,
    detect_plans,
    fuse_image,
    load_chip_detections,
    load_plans,
    plan_image,
    run_strategy,
    save_chip_detections,
    save_plans,
)
from .records import (
    Annotation,
    Cluster,
    Detection,
    ImageRecord,
    load_dataset,
    load_detections,
    save_dataset,
    save_detections,
)
from .scale import (
    OffsetRegressor,
    OracleEstimator,
    PassThroughEstimator,
    ScaleEstimator,
    ScaleRecord,
    build_estimator,
    cluster_ground_truth_scale,
    cluster_member_detections,
    estimate_scale,
    fit_offset_regressor,
    make_scale_record,
    object_scale,
    reference_scale,
    relative_offset,
    scale_loss,
    scale_loss_gradient,
    smooth_l1,
    smooth_l1_grad,
)
from .simulator import (
    DetectorModel,
    SceneParams,
    generate_batch,
    generate_scene,
    generate_scene_with_layout,
    simulate_detect,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # errors
    "ClustileError",
    "ValidationError",
    "ConfigError",
    "MergeRoundLimitError",
    # geometry
    "Box",
    "ImageExtent",
    "Transform",
    "area",
    "intersection_area",
    "iou",
    "enclosing",
    "clip",
    "to_global",
    "to_local",
    "boundary_gap",
    "contains",
    "contains_point",
    "strictly_contains_point",
    # records
    "Annotation",
    "Detection",
    "ImageRecord",
    "Cluster",
    "load_dataset",
    "save_dataset",
    "load_detections",
    "save_detections",
    # clustering
    "ClusterGenParams",
    "ProposalParams",
    "generate_gt_clusters",
    "propose_clusters",
    # merging
    "MergeParams",
    "nmm",
    "icm",
    # scale
    "ScaleRecord",
    "object_scale",
    "reference_scale",
    "relative_offset",
    "smooth_l1",
    "smooth_l1_grad",
    "scale_loss",
    "scale_loss_gradient",
    "cluster_ground_truth_scale",
    "cluster_member_detections",
    "ScaleEstimator",
    "PassThroughEstimator",
    "OracleEstimator",
    "OffsetRegressor",
    "fit_offset_regressor",
    "build_estimator",
    "estimate_scale",
    "make_scale_record",
    # chip planning
    "PlannerParams",
    "ChipPlan",
    "projected_scale",
    "plan_cluster",
    "plan_cluster_unscaled",
    "global_chip",
    "plan_eip",
    "plan_pipeline",
    "plan_to_json",
    "plan_from_json",
    "in_padded_area",
    # fusion
    "FusionParams",
    "remap",
    "filter_padded",
    "suppress_global",
    "nms",
    "fuse",
    # simulator
    "SceneParams",
    "DetectorModel",
    "generate_scene",
    "generate_scene_with_layout",
    "generate_batch",
    "simulate_detect",
    # evaluation
    "EvalParams",
    "EvalResult",
    "ChipTypeParams",
    "ChipTypeHistogram",
    "coco_ap",
    "chip_type_histogram",
    "count_forwarded",
    "text_table",
    # pipeline
    "StrategySpec",
    "ImagePlan",
    "plan_image",
    "detect_plans",
    "fuse_image",
    "run_strategy",
    "save_plans",
    "load_plans",
    "save_chip_detections",
    "load_chip_detections",
]
