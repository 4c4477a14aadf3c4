"""Corner-guided detection post-processing.

Detectors emit piles of near-duplicate boxes; standard NMS keeps the
best-scoring one per cluster and throws the rest away. This package keeps
the suppressed boxes, decouples their corners into candidate sets, scores
the candidates on per-class corner heatmaps, and couples a selection of
them back into the final box. It also ships the heatmap codec, the fused
corner-classification ranking score, a COCO-style evaluator, and a
synthetic benchmark harness behind a small CLI.
"""

from .geometry import BBox, GridCell, image_to_grid, iou
from .heatmap import (
    CornerHeatmap,
    FocalConfig,
    GaussianConfig,
    corner_focal_loss,
    corner_focal_loss_grad,
    corner_pool,
    encode_corner_heatmaps,
    gaussian_radius,
    lookup,
    lookup_many,
)
from .scoring import CoclVariant, cocl, cocl_many, format_variant, parse_variant
from .postprocess import (
    BdcConfig,
    Cluster,
    CoupleStrategy,
    Detection,
    bdc_pipeline,
    config_from_options,
    couple,
    decouple,
    nms_pipeline,
    nms_with_retention,
    score_corners,
)
from .evaluation import (
    DetectionRecord,
    EvalReport,
    GroundTruth,
    SynthConfig,
    SynthScene,
    ap_101,
    compare_strategies,
    evaluate_detections,
    make_scenes,
    match_detections,
    synth_scene,
)
from .formats import (
    DataFormatError,
    load_detections,
    load_ground_truths,
    read_heatmap,
    write_detections,
    write_ground_truths,
    write_heatmap,
)

__version__ = "0.1.0"

__all__ = [
    "BBox",
    "BdcConfig",
    "Cluster",
    "CoclVariant",
    "CornerHeatmap",
    "CoupleStrategy",
    "DataFormatError",
    "Detection",
    "DetectionRecord",
    "EvalReport",
    "FocalConfig",
    "GaussianConfig",
    "GridCell",
    "GroundTruth",
    "SynthConfig",
    "SynthScene",
    "ap_101",
    "bdc_pipeline",
    "cocl",
    "cocl_many",
    "compare_strategies",
    "config_from_options",
    "corner_focal_loss",
    "corner_focal_loss_grad",
    "corner_pool",
    "couple",
    "decouple",
    "encode_corner_heatmaps",
    "evaluate_detections",
    "format_variant",
    "gaussian_radius",
    "image_to_grid",
    "iou",
    "load_detections",
    "load_ground_truths",
    "lookup",
    "lookup_many",
    "make_scenes",
    "match_detections",
    "nms_pipeline",
    "nms_with_retention",
    "parse_variant",
    "read_heatmap",
    "score_corners",
    "synth_scene",
    "write_detections",
    "write_ground_truths",
    "write_heatmap",
]
