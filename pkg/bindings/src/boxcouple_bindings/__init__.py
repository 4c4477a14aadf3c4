"""In-process array bindings for the boxcouple post-processing core.

Detection stacks hold boxes, scores, classes, and corner maps as parallel
arrays; these functions map that form straight onto the core without any
serialization. postprocess wraps the decouple/couple pipeline, cocl the
fused ranking score, encode_heatmaps the Gaussian corner target renderer,
and evaluate the COCO-style evaluator. No logic lives here: the boundary
validates shapes and ranges (naming the offending argument), converts
between array and record form, and hands off to the core.

Hand-off is zero-copy where the runtime allows it: corner maps that are
already float32 and C-contiguous reach the core untouched, and
encode_heatmaps returns borrowed views of the freshly rendered maps.
Inputs are never mutated.

Every call is pure and keeps its state on the stack, so overlapping calls
from multiple threads are safe; the array kernels underneath drop the
interpreter lock while they run.
"""

from __future__ import annotations

import math
from typing import Mapping, Optional, Sequence

import numpy as np

import boxcouple
from boxcouple import (
    BBox,
    CornerHeatmap,
    Detection,
    DetectionRecord,
    GaussianConfig,
    GroundTruth,
    bdc_pipeline,
    cocl_many,
    config_from_options,
    encode_corner_heatmaps,
    evaluate_detections,
    parse_variant,
)

# the bindings track the core they wrap release for release
__version__ = boxcouple.__version__

__all__ = ["BoundHeatmap", "cocl", "encode_heatmaps", "evaluate", "postprocess"]


def _as_boxes(name: str, value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.size == 0:
        return arr.reshape(0, 4)
    if arr.ndim != 2 or arr.shape[1] != 4:
        raise ValueError(f"{name} must be an (N, 4) array, got shape {arr.shape}")
    return arr


def _as_vector(name: str, value, n: int) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.size == 0:
        arr = arr.reshape(0)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a 1-D array, got shape {arr.shape}")
    if arr.shape[0] != n:
        raise ValueError(f"{name} has length {arr.shape[0]}, expected {n}")
    return arr


def _as_classes(name: str, value, n: int) -> np.ndarray:
    arr = np.asarray(value)
    if arr.size == 0:
        arr = arr.reshape(0).astype(np.int64)
    if not np.issubdtype(arr.dtype, np.integer):
        raise ValueError(f"{name} must be an integer array, got dtype {arr.dtype}")
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a 1-D array, got shape {arr.shape}")
    if arr.shape[0] != n:
        raise ValueError(f"{name} has length {arr.shape[0]}, expected {n}")
    return arr


class BoundHeatmap:
    """Borrowed per-class tl/br corner map views plus the grid stride.

    Validates what the core will assume, two matching (C, H, W) real
    arrays with values in [0, 1] and a positive stride, without copying,
    so callers can fail fast at the boundary and then share one instance
    across calls and threads.
    """

    __slots__ = ("tl", "br", "stride")

    def __init__(self, tl, br, stride: float):
        tl = np.asarray(tl)
        br = np.asarray(br)
        for name, grid in (("tl", tl), ("br", br)):
            if not np.issubdtype(grid.dtype, np.floating):
                raise ValueError(f"{name} must be a real-valued array, got dtype {grid.dtype}")
            if grid.ndim != 3:
                raise ValueError(f"{name} must be a (C, H, W) array, got shape {grid.shape}")
        if tl.shape != br.shape:
            raise ValueError(f"tl shape {tl.shape} does not match br shape {br.shape}")
        if min(tl.shape) < 1:
            raise ValueError(f"tl must have no empty axis, got shape {tl.shape}")
        for name, grid in (("tl", tl), ("br", br)):
            if not ((grid >= 0.0) & (grid <= 1.0)).all():
                raise ValueError(f"{name} has values outside [0, 1]")
        stride = float(stride)
        if not (math.isfinite(stride) and stride > 0.0):
            raise ValueError(f"stride must be positive and finite, got {stride}")
        self.tl = tl
        self.br = br
        self.stride = stride

    def to_core(self) -> CornerHeatmap:
        """The core container; reuses the buffers when dtype/layout allow."""
        return CornerHeatmap(self.tl, self.br, self.stride)


def postprocess(
    boxes,
    scores,
    classes,
    tl,
    br,
    stride: float,
    config: Optional[Mapping[str, object]] = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Re-couple detection boxes on corner heatmaps; arrays in, arrays out.

    boxes is (N, 4) xyxy with parallel length-N scores and classes;
    tl/br/stride describe the per-class corner maps. config takes the same
    keys as the CLI flags (iou_thr, cocl, couple, topn, theta, adaptive,
    score_floor, max_per_image, rank_by); omitted keys keep their
    defaults. Returns (boxes (M, 4), scores (M,), classes (M,)) in the
    pipeline's ranking order. Inputs are not mutated.
    """
    box_arr = _as_boxes("boxes", boxes)
    n = box_arr.shape[0]
    score_arr = _as_vector("scores", scores, n)
    class_arr = _as_classes("classes", classes, n)
    hm = BoundHeatmap(tl, br, stride).to_core()
    cfg = config_from_options({} if config is None else config)
    dets = []
    for i in range(n):
        try:
            dets.append(Detection(int(class_arr[i]), float(score_arr[i]), BBox(*box_arr[i])))
        except ValueError as e:
            raise ValueError(f"detection {i}: {e}") from None
    pairs = bdc_pipeline(dets, hm, cfg)
    out_boxes = np.array([d.box.as_tuple() for d, _ in pairs], dtype=np.float64).reshape(-1, 4)
    out_scores = np.array([rank for _, rank in pairs], dtype=np.float64)
    out_classes = np.array([d.cls for d, _ in pairs], dtype=np.int64)
    return out_boxes, out_scores, out_classes


def cocl(scores, tl_scores, br_scores, variant: str = "exp-avg") -> np.ndarray:
    """Fused corner-classification ranking scores over aligned 1-D arrays.

    variant is a spelling like "exp-avg", "exp-max", "exp-min", or
    "weighted:0.3". All inputs must lie in [0, 1]; the result is a float64
    array of ranking scores, not probabilities.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1:
        raise ValueError(f"scores must be a 1-D array, got shape {s.shape}")
    f_tl = _as_vector("tl_scores", tl_scores, s.shape[0])
    f_br = _as_vector("br_scores", br_scores, s.shape[0])
    return cocl_many(s, f_tl, f_br, parse_variant(variant))


def encode_heatmaps(
    boxes,
    classes,
    num_classes: int,
    grid_height: int,
    grid_width: int,
    stride: float,
    min_overlap: float = 0.3,
    sigma_divisor: float = 6.0,
) -> BoundHeatmap:
    """Render Gaussian corner targets for parallel (class, box) arrays.

    Returns a BoundHeatmap borrowing the freshly rendered (num_classes,
    grid_height, grid_width) maps; nothing is copied on the way out.
    """
    box_arr = _as_boxes("boxes", boxes)
    class_arr = _as_classes("classes", classes, box_arr.shape[0])
    for name, dim in (
        ("num_classes", num_classes),
        ("grid_height", grid_height),
        ("grid_width", grid_width),
    ):
        if int(dim) != dim or int(dim) < 1:
            raise ValueError(f"{name} must be a positive integer, got {dim!r}")
    outside = (class_arr < 0) | (class_arr >= int(num_classes))
    if outside.any():
        bad = int(class_arr[outside][0])
        raise ValueError(f"classes contains id {bad} outside [0, {int(num_classes)})")
    pairs = []
    for i in range(box_arr.shape[0]):
        try:
            pairs.append((int(class_arr[i]), BBox(*box_arr[i])))
        except ValueError as e:
            raise ValueError(f"boxes[{i}]: {e}") from None
    hm = encode_corner_heatmaps(
        pairs,
        (int(num_classes), int(grid_height), int(grid_width)),
        stride,
        GaussianConfig(min_overlap=min_overlap, sigma_divisor=sigma_divisor),
    )
    return BoundHeatmap(hm.tl, hm.br, hm.stride)


def evaluate(
    gt_image_ids,
    gt_classes,
    gt_boxes,
    det_image_ids,
    det_classes,
    det_scores,
    det_boxes,
    iou_thresholds: Optional[Sequence[float]] = None,
) -> dict:
    """COCO-style AP report as a plain dict over parallel-array inputs.

    Ground truths are (image id, class, box) columns; detections add a
    score column. Detection scores above 1 are legal, since the pipeline
    emits ranking scores. See the core evaluator for metric semantics.
    """
    g_boxes = _as_boxes("gt_boxes", gt_boxes)
    n_gt = g_boxes.shape[0]
    g_classes = _as_classes("gt_classes", gt_classes, n_gt)
    g_ids = list(gt_image_ids)
    if len(g_ids) != n_gt:
        raise ValueError(f"gt_image_ids has length {len(g_ids)}, expected {n_gt}")
    d_boxes = _as_boxes("det_boxes", det_boxes)
    n_det = d_boxes.shape[0]
    d_classes = _as_classes("det_classes", det_classes, n_det)
    d_scores = _as_vector("det_scores", det_scores, n_det)
    d_ids = list(det_image_ids)
    if len(d_ids) != n_det:
        raise ValueError(f"det_image_ids has length {len(d_ids)}, expected {n_det}")
    gts = []
    for k in range(n_gt):
        try:
            gts.append(GroundTruth(g_ids[k], int(g_classes[k]), BBox(*g_boxes[k])))
        except ValueError as e:
            raise ValueError(f"ground truth {k}: {e}") from None
    dets = []
    for k in range(n_det):
        try:
            dets.append(
                DetectionRecord(d_ids[k], int(d_classes[k]), float(d_scores[k]), BBox(*d_boxes[k]))
            )
        except ValueError as e:
            raise ValueError(f"detection {k}: {e}") from None
    return evaluate_detections(gts, dets, iou_thresholds).to_dict()
