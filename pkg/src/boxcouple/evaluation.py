"""COCO-style average precision over detection results, plus a synthetic
scene generator and a harness for comparing post-processing strategies."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .geometry import BBox, iou, iou_matrix
from .heatmap import CornerHeatmap, encode_corner_heatmaps
from .postprocess import BdcConfig, Detection, bdc_pipeline, nms_pipeline

IOU_THRESHOLDS = (0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95)
RECALL_POINTS = np.arange(101, dtype=np.float64) / 100.0
AREA_NAMES = ("all", "small", "medium", "large")

_SMALL_MAX = 32.0**2
_MEDIUM_MAX = 96.0**2


@dataclass(frozen=True)
class GroundTruth:
    """One annotated box on one image."""

    image_id: str
    cls: int
    box: BBox
    line: int = field(default=-1, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "image_id", str(self.image_id))
        object.__setattr__(self, "cls", int(self.cls))
        if self.cls < 0:
            raise ValueError(f"negative class id {self.cls}")
        if self.box.area <= 0.0:
            raise ValueError(f"degenerate ground-truth box {self.box.as_tuple()}")


@dataclass(frozen=True)
class DetectionRecord:
    """One detections-file row and evaluator input.

    score is any finite non-negative ranking value; fused scores may exceed
    1, and only the ordering matters to the evaluator.
    """

    image_id: str
    cls: int
    score: float
    box: BBox
    line: int = field(default=-1, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "image_id", str(self.image_id))
        object.__setattr__(self, "cls", int(self.cls))
        object.__setattr__(self, "score", float(self.score))
        if self.cls < 0:
            raise ValueError(f"negative class id {self.cls}")
        if not (math.isfinite(self.score) and self.score >= 0.0):
            raise ValueError(f"score must be finite and non-negative, got {self.score}")


@dataclass(frozen=True)
class EvalReport:
    """Summary metrics; every AP field and mean_matched_iou lies in [0, 1]."""

    ap: float
    ap50: float
    ap75: float
    ap_small: float
    ap_medium: float
    ap_large: float
    mean_matched_iou: float
    n_images: int
    n_dets: int

    def __post_init__(self):
        for name in ("ap", "ap50", "ap75", "ap_small", "ap_medium", "ap_large", "mean_matched_iou"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} outside [0, 1]: {v}")

    def to_dict(self) -> dict:
        return {
            "ap": self.ap,
            "ap50": self.ap50,
            "ap75": self.ap75,
            "ap_s": self.ap_small,
            "ap_m": self.ap_medium,
            "ap_l": self.ap_large,
            "mean_matched_iou": self.mean_matched_iou,
            "n_images": self.n_images,
            "n_dets": self.n_dets,
        }


def area_tag(area: float) -> str:
    """COCO-style size bucket: small below 32^2, large above 96^2."""
    if area < _SMALL_MAX:
        return "small"
    if area <= _MEDIUM_MAX:
        return "medium"
    return "large"


def match_detections(
    det_boxes: Sequence[BBox],
    gt_boxes: Sequence[BBox],
    iou_thr: float,
    gt_ignore: Optional[Sequence[bool]] = None,
) -> list[tuple[int, Optional[int]]]:
    """Greedy matching for one image and class.

    det_boxes must already be in descending score order. Each detection in
    turn takes the unmatched ground truth of highest IoU >= iou_thr,
    preferring non-ignored ground truths and breaking ties by the lowest
    ground-truth index. Returns one (det_index, gt_index or None) pair per
    detection.
    """
    if gt_ignore is None:
        gt_ignore = [False] * len(gt_boxes)
    if len(gt_ignore) != len(gt_boxes):
        raise ValueError("gt_ignore length must match gt_boxes")
    if not det_boxes or not gt_boxes:
        return [(i, None) for i in range(len(det_boxes))]
    ious = iou_matrix(
        np.array([b.as_tuple() for b in det_boxes]),
        np.array([b.as_tuple() for b in gt_boxes]),
    )
    ignore = np.asarray(gt_ignore, dtype=bool)
    _, _, _, matched_j = _match_greedy(ious, ignore, np.ones(len(det_boxes), dtype=bool), iou_thr)
    return [(i, int(j) if j >= 0 else None) for i, j in enumerate(matched_j)]


def _match_greedy(
    ious: np.ndarray, gt_ignore: np.ndarray, det_in_range: np.ndarray, thr: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Score-order greedy matching over a (n_det, n_gt) IoU matrix.

    Returns per-det arrays (tp, ignored, matched_iou, matched_gt). A det
    matching an ignored gt is ignored; an unmatched det outside the area
    range is ignored; anything else unmatched is a false positive.
    """
    n_det, n_gt = ious.shape
    taken = np.zeros(n_gt, dtype=bool)
    tp = np.zeros(n_det, dtype=bool)
    ignored = np.zeros(n_det, dtype=bool)
    matched_iou = np.zeros(n_det, dtype=np.float64)
    matched_gt = np.full(n_det, -1, dtype=np.int64)
    for i in range(n_det):
        row = ious[i]
        free = ~taken & (row >= thr)
        if free.any():
            real = free & ~gt_ignore
            pool = real if real.any() else free
            # argmax takes the first maximum, so ties prefer the lowest gt index
            j = int(np.argmax(np.where(pool, row, -1.0)))
            taken[j] = True
            matched_gt[i] = j
            if gt_ignore[j]:
                ignored[i] = True
            else:
                tp[i] = True
                matched_iou[i] = row[j]
        elif not det_in_range[i]:
            ignored[i] = True
    return tp, ignored, matched_iou, matched_gt


def ap_101(scores: np.ndarray, tp: np.ndarray, n_gt: int) -> float:
    """101-point interpolated average precision."""
    if scores.size == 0:
        return 0.0
    order = np.argsort(-scores, kind="stable")
    tp_cum = np.cumsum(tp[order])
    fp_cum = np.cumsum(~tp[order])
    recall = tp_cum / n_gt
    precision = tp_cum / (tp_cum + fp_cum)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    vals = np.where(idx < recall.size, envelope[np.minimum(idx, recall.size - 1)], 0.0)
    return float(vals.mean())


def evaluate_detections(
    gts: Sequence[GroundTruth],
    dets: Sequence[DetectionRecord],
    iou_thresholds: Optional[Sequence[float]] = None,
) -> EvalReport:
    """COCO-style evaluation of detections against ground truths.

    AP is the 101-point interpolated average over the IoU thresholds
    0.50:0.05:0.95 and over the classes that have at least one ground truth
    in the area range at hand; size-bucketed APs ignore out-of-range ground
    truths and out-of-range unmatched detections. mean_matched_iou averages
    the IoU of true-positive matches at threshold 0.5 over all classes, a
    localization-quality companion to AP. With no ground truths at all,
    every metric is 0. ap50/ap75 report the row at thresholds 0.5/0.75 and
    are 0 when a custom threshold list omits them.
    """
    thresholds = IOU_THRESHOLDS if iou_thresholds is None else tuple(float(t) for t in iou_thresholds)
    if not thresholds:
        raise ValueError("need at least one IoU threshold")
    n_images = len({g.image_id for g in gts} | {d.image_id for d in dets})
    n_dets = len(dets)
    zero = dict.fromkeys(("ap", "ap50", "ap75", "ap_small", "ap_medium", "ap_large"), 0.0)
    if not gts:
        return EvalReport(mean_matched_iou=0.0, n_images=n_images, n_dets=n_dets, **zero)

    gts_by = defaultdict(lambda: defaultdict(list))
    for g in gts:
        gts_by[g.cls][g.image_id].append(g)
    dets_by = defaultdict(lambda: defaultdict(list))
    for d in dets:
        dets_by[d.cls][d.image_id].append(d)

    classes = sorted(gts_by)
    # ap_cells[area][thr_index] -> list of per-class APs
    ap_cells: dict[str, list[list[float]]] = {a: [[] for _ in thresholds] for a in AREA_NAMES}
    matched_ious: list[float] = []

    for cls in classes:
        images = sorted(set(gts_by[cls]) | set(dets_by[cls]))
        per_image = []
        for img in images:
            g_rows = gts_by[cls].get(img, [])
            d_rows = sorted(dets_by[cls].get(img, []), key=lambda r: -r.score)
            if g_rows and d_rows:
                ious = iou_matrix(
                    np.array([r.box.as_tuple() for r in d_rows]),
                    np.array([g.box.as_tuple() for g in g_rows]),
                )
            else:
                ious = np.zeros((len(d_rows), len(g_rows)))
            g_tags = np.array([area_tag(g.box.area) for g in g_rows]) if g_rows else np.zeros(0, dtype="<U6")
            d_tags = np.array([area_tag(r.box.area) for r in d_rows]) if d_rows else np.zeros(0, dtype="<U6")
            scores = np.array([r.score for r in d_rows], dtype=np.float64)
            per_image.append((ious, g_tags, d_tags, scores))

        for area in AREA_NAMES:
            n_gt = 0
            for ious, g_tags, _, _ in per_image:
                if area == "all":
                    n_gt += g_tags.size
                else:
                    n_gt += int(np.count_nonzero(g_tags == area))
            if n_gt == 0:
                continue
            for t_i, thr in enumerate(thresholds):
                sc_parts, tp_parts = [], []
                for ious, g_tags, d_tags, scores in per_image:
                    gt_ignore = (
                        np.zeros(g_tags.size, dtype=bool) if area == "all" else g_tags != area
                    )
                    det_ok = (
                        np.ones(d_tags.size, dtype=bool) if area == "all" else d_tags == area
                    )
                    tp, ignored, m_iou, _ = _match_greedy(ious, gt_ignore, det_ok, thr)
                    keep = ~ignored
                    sc_parts.append(scores[keep])
                    tp_parts.append(tp[keep])
                    if area == "all" and math.isclose(thr, 0.5):
                        matched_ious.extend(m_iou[tp].tolist())
                ap_cells[area][t_i].append(
                    ap_101(np.concatenate(sc_parts), np.concatenate(tp_parts), n_gt)
                )

    def mean_over(area: str, t_indices: Sequence[int]) -> float:
        vals = [v for t_i in t_indices for v in ap_cells[area][t_i]]
        return float(np.mean(vals)) if vals else 0.0

    all_t = range(len(thresholds))
    t50 = [i for i, t in enumerate(thresholds) if math.isclose(t, 0.5)]
    t75 = [i for i, t in enumerate(thresholds) if math.isclose(t, 0.75)]
    if not any(math.isclose(t, 0.5) for t in thresholds):
        # mean_matched_iou is defined at threshold 0.5 even if it is not scored
        for cls in classes:
            for img in sorted(set(gts_by[cls]) | set(dets_by[cls])):
                g_rows = gts_by[cls].get(img, [])
                d_rows = sorted(dets_by[cls].get(img, []), key=lambda r: -r.score)
                if not (g_rows and d_rows):
                    continue
                ious = iou_matrix(
                    np.array([r.box.as_tuple() for r in d_rows]),
                    np.array([g.box.as_tuple() for g in g_rows]),
                )
                tp, _, m_iou, _ = _match_greedy(
                    ious,
                    np.zeros(len(g_rows), dtype=bool),
                    np.ones(len(d_rows), dtype=bool),
                    0.5,
                )
                matched_ious.extend(m_iou[tp].tolist())

    return EvalReport(
        ap=mean_over("all", all_t),
        ap50=mean_over("all", t50),
        ap75=mean_over("all", t75),
        ap_small=mean_over("small", all_t),
        ap_medium=mean_over("medium", all_t),
        ap_large=mean_over("large", all_t),
        mean_matched_iou=float(np.mean(matched_ious)) if matched_ious else 0.0,
        n_images=n_images,
        n_dets=n_dets,
    )


@dataclass(frozen=True)
class SynthConfig:
    """Synthetic scene generator parameters.

    Each scene draws `objects` ground-truth boxes, surrounds every one with
    `duplicates` jittered detections whose score blends true IoU with
    uniform noise, and renders the ground truths into corner heatmaps,
    optionally perturbed by clipped Gaussian noise.
    """

    seed: int = 0
    image_size: int = 512
    classes: int = 3
    objects: int = 6
    duplicates: int = 16
    jitter_sigma: float = 4.0
    score_iou_weight: float = 0.7
    heatmap_noise: float = 0.0
    stride: float = 4.0
    min_size: float = 48.0
    max_size: float = 160.0

    def __post_init__(self):
        if self.image_size < 8:
            raise ValueError(f"image_size too small: {self.image_size}")
        if self.classes < 1 or self.objects < 1 or self.duplicates < 1:
            raise ValueError("classes, objects, and duplicates must be positive")
        if self.jitter_sigma < 0.0 or self.heatmap_noise < 0.0:
            raise ValueError("jitter_sigma and heatmap_noise must be non-negative")
        if not (0.0 <= self.score_iou_weight <= 1.0):
            raise ValueError(f"score_iou_weight must lie in [0, 1], got {self.score_iou_weight}")
        if self.stride <= 0.0:
            raise ValueError(f"stride must be positive, got {self.stride}")
        if not (0.0 < self.min_size <= self.max_size <= self.image_size):
            raise ValueError(f"need 0 < min_size <= max_size <= image_size, got {self}")


@dataclass(frozen=True)
class SynthScene:
    """One generated image: ground truths, raw detections, corner heatmaps."""

    image_id: str
    gts: tuple[GroundTruth, ...]
    dets: tuple[Detection, ...]
    heatmap: CornerHeatmap


def synth_scene(config: SynthConfig = SynthConfig(), image_id: Optional[str] = None) -> SynthScene:
    """Generate one deterministic scene from the config seed.

    Draw order is fixed: per object (class, width, height, x1, y1), then per
    object and duplicate (four corner jitters, one score-noise uniform),
    then tl and br heatmap noise, so identical configs give identical
    scenes byte for byte.
    """
    rng = np.random.default_rng(config.seed)
    if image_id is None:
        image_id = f"{config.seed:06d}"
    size = float(config.image_size)
    grid_h = grid_w = int(math.ceil(config.image_size / config.stride))

    gts = []
    for _ in range(config.objects):
        cls = int(rng.integers(0, config.classes))
        bw = float(rng.uniform(config.min_size, config.max_size))
        bh = float(rng.uniform(config.min_size, config.max_size))
        x1 = float(rng.uniform(0.0, size - bw))
        y1 = float(rng.uniform(0.0, size - bh))
        gts.append(GroundTruth(image_id, cls, BBox(x1, y1, x1 + bw, y1 + bh)))

    dets = []
    w_iou = config.score_iou_weight
    for g in gts:
        for _ in range(config.duplicates):
            jit = rng.normal(0.0, config.jitter_sigma, size=4)
            x1 = min(max(g.box.x1 + jit[0], 0.0), size)
            y1 = min(max(g.box.y1 + jit[1], 0.0), size)
            x2 = min(max(g.box.x2 + jit[2], 0.0), size)
            y2 = min(max(g.box.y2 + jit[3], 0.0), size)
            # clamping can invert or flatten the box; keep at least 1 px extent
            x2 = max(x2, x1 + 1.0)
            y2 = max(y2, y1 + 1.0)
            box = BBox(x1, y1, x2, y2)
            u = float(rng.uniform())
            score = min(max(w_iou * iou(box, g.box) + (1.0 - w_iou) * u, 0.0), 1.0)
            dets.append(Detection(g.cls, score, box))

    hm = encode_corner_heatmaps(
        [(g.cls, g.box) for g in gts],
        (config.classes, grid_h, grid_w),
        config.stride,
    )
    if config.heatmap_noise > 0.0:
        tl = np.clip(hm.tl + rng.normal(0.0, config.heatmap_noise, hm.tl.shape), 0.0, 1.0)
        br = np.clip(hm.br + rng.normal(0.0, config.heatmap_noise, hm.br.shape), 0.0, 1.0)
        hm = CornerHeatmap(tl.astype(np.float32), br.astype(np.float32), config.stride)
    return SynthScene(image_id, tuple(gts), tuple(dets), hm)


def make_scenes(n: int, base: SynthConfig = SynthConfig()) -> list[SynthScene]:
    """n scenes with consecutive seeds starting at base.seed."""
    from dataclasses import replace

    return [
        synth_scene(replace(base, seed=base.seed + i), image_id=f"{i:06d}") for i in range(n)
    ]


def compare_strategies(
    scenes: Sequence[SynthScene],
    configs: Mapping[str, BdcConfig],
    baseline: Optional[BdcConfig] = None,
) -> dict[str, EvalReport]:
    """Evaluate a plain-NMS baseline and each configured pipeline over scenes.

    Returns {"nms": report} plus one entry per label in configs. The
    baseline defaults to raw-score ranking with default thresholds; it
    emits unchanged boxes, so differences against it isolate the effect of
    corner re-coupling.
    """
    if "nms" in configs:
        raise ValueError("'nms' is reserved for the baseline entry")
    if baseline is None:
        baseline = BdcConfig(rank_by="cls")
    all_gts = [g for s in scenes for g in s.gts]

    def run(pipeline, config) -> EvalReport:
        rows = []
        for s in scenes:
            if pipeline is nms_pipeline:
                hm = s.heatmap if config.rank_by == "cocl" else None
                pairs = pipeline(list(s.dets), hm, config)
            else:
                pairs = pipeline(list(s.dets), s.heatmap, config)
            rows.extend(
                DetectionRecord(s.image_id, d.cls, score, d.box) for d, score in pairs
            )
        return evaluate_detections(all_gts, rows)

    out = {"nms": run(nms_pipeline, baseline)}
    for label, config in configs.items():
        out[label] = run(bdc_pipeline, config)
    return out
