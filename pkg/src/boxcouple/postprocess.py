"""Overlap-retaining NMS, corner candidate decoupling, and box re-coupling.

The pipeline keeps every suppressed box inside its suppressor's cluster,
splits each cluster into top-left and bottom-right corner candidate sets,
scores the candidates on corner heatmaps, and re-couples a selection of
them into the emitted box.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Mapping, Optional, Sequence

import numpy as np

from .geometry import BBox
from .heatmap import CornerHeatmap, lookup_many
from .scoring import CoclVariant, cocl_many, parse_variant

STRATEGY_KINDS = ("max", "top_n", "all", "threshold")
RANK_KEYS = ("cocl", "cls")

Point = tuple[float, float]
# a corner candidate is its image point plus the index of the cluster member it came from
Candidate = tuple[Point, int]


@dataclass(frozen=True)
class Detection:
    """One raw detection: class id, classification score in [0, 1], box."""

    cls: int
    score: float
    box: BBox

    def __post_init__(self):
        object.__setattr__(self, "cls", int(self.cls))
        object.__setattr__(self, "score", float(self.score))
        if self.cls < 0:
            raise ValueError(f"negative class id {self.cls}")
        if not (math.isfinite(self.score) and 0.0 <= self.score <= 1.0):
            raise ValueError(f"score must lie in [0, 1], got {self.score}")
        if self.box.area <= 0.0:
            raise ValueError(f"detection box must have positive area, got {self.box.as_tuple()}")


@dataclass(frozen=True)
class Cluster:
    """A kept prediction together with the detections it suppressed.

    overlaps are sorted by descending ranking score; every overlap shares
    the prediction's class and overlaps it above the NMS threshold.
    """

    prediction: Detection
    overlaps: tuple[Detection, ...]
    prediction_index: int
    overlap_indices: tuple[int, ...]

    @property
    def members(self) -> tuple[Detection, ...]:
        """Prediction first, then overlaps in stored order."""
        return (self.prediction, *self.overlaps)


@dataclass(frozen=True)
class CoupleStrategy:
    """How corner candidates are selected before averaging.

    max takes the single best-scoring candidate, top_n the best n, all every
    candidate, threshold those scoring at least theta. With adaptive set,
    threshold replaces theta by mean + population standard deviation of the
    candidate scores, per corner type.
    """

    kind: str = "top_n"
    n: int = 10
    theta: float = 0.5
    adaptive: bool = False

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ValueError(f"kind must be one of {STRATEGY_KINDS}, got {self.kind!r}")
        if self.n < 1:
            raise ValueError(f"top_n count must be at least 1, got {self.n}")
        if not math.isfinite(self.theta):
            raise ValueError(f"theta must be finite, got {self.theta}")


@dataclass(frozen=True)
class BdcConfig:
    """Knobs of the decouple/couple pipeline."""

    iou_tau: float = 0.5
    cocl_variant: CoclVariant = CoclVariant()
    strategy: CoupleStrategy = CoupleStrategy()
    score_floor: float = 0.05
    max_per_image: int = 100
    rank_by: str = "cocl"

    def __post_init__(self):
        if not (0.0 < self.iou_tau < 1.0):
            raise ValueError(f"iou_tau must lie in (0, 1), got {self.iou_tau}")
        if not (0.0 <= self.score_floor < 1.0):
            raise ValueError(f"score_floor must lie in [0, 1), got {self.score_floor}")
        if self.max_per_image < 1:
            raise ValueError(f"max_per_image must be at least 1, got {self.max_per_image}")
        if self.rank_by not in RANK_KEYS:
            raise ValueError(f"rank_by must be one of {RANK_KEYS}, got {self.rank_by!r}")


def config_from_options(options: Mapping[str, object]) -> BdcConfig:
    """Build a BdcConfig from loosely typed options (CLI flags, dicts).

    Recognized keys: iou_thr, cocl (variant spelling), couple (strategy
    kind), topn, theta, adaptive, score_floor, max_per_image, rank_by.
    Unknown keys are rejected so typos fail loudly.
    """
    opts = dict(options)
    known = {
        "iou_thr",
        "cocl",
        "couple",
        "topn",
        "theta",
        "adaptive",
        "score_floor",
        "max_per_image",
        "rank_by",
    }
    unknown = set(opts) - known
    if unknown:
        raise ValueError(f"unknown option(s): {sorted(unknown)}")
    variant = opts.get("cocl", "exp-avg")
    if isinstance(variant, str):
        variant = parse_variant(variant)
    strategy = CoupleStrategy(
        kind=str(opts.get("couple", "top_n")).replace("-", "_"),
        n=int(opts.get("topn", 10)),
        theta=float(opts.get("theta", 0.5)),
        adaptive=bool(opts.get("adaptive", False)),
    )
    return BdcConfig(
        iou_tau=float(opts.get("iou_thr", 0.5)),
        cocl_variant=variant,
        strategy=strategy,
        score_floor=float(opts.get("score_floor", 0.05)),
        max_per_image=int(opts.get("max_per_image", 100)),
        rank_by=str(opts.get("rank_by", "cocl")),
    )


def _greedy_nms(
    boxes: np.ndarray, scores: np.ndarray, classes: np.ndarray, tau: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Class-aware greedy NMS over parallel arrays.

    Returns (keep, owner, order): keep holds the kept positions of `order`
    (so keep is in descending score order, ties by input index), and
    owner[p] is the order-position of the keeper that suppressed order[p],
    or -1 if order[p] was kept.
    """
    n = boxes.shape[0]
    order = np.argsort(-scores, kind="stable")
    ob = boxes[order]
    oc = classes[order]
    areas = (ob[:, 2] - ob[:, 0]) * (ob[:, 3] - ob[:, 1])
    alive = np.ones(n, dtype=bool)
    owner = np.full(n, -1, dtype=np.int64)
    keep = []
    for p in range(n):
        if not alive[p]:
            continue
        keep.append(p)
        alive[p] = False
        cand = np.flatnonzero(alive)
        if cand.size == 0:
            break
        cand = cand[oc[cand] == oc[p]]
        if cand.size == 0:
            continue
        iw = np.minimum(ob[cand, 2], ob[p, 2]) - np.maximum(ob[cand, 0], ob[p, 0])
        ih = np.minimum(ob[cand, 3], ob[p, 3]) - np.maximum(ob[cand, 1], ob[p, 1])
        inter = np.where((iw > 0.0) & (ih > 0.0), iw * ih, 0.0)
        union = areas[cand] + areas[p] - inter
        ious = np.where(union > 0.0, inter / np.where(union > 0.0, union, 1.0), 0.0)
        hit = cand[ious > tau]
        owner[hit] = p
        alive[hit] = False
    return np.asarray(keep, dtype=np.int64), owner, order


def _as_arrays(dets: Sequence[Detection]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    boxes = np.array([d.box.as_tuple() for d in dets], dtype=np.float64).reshape(len(dets), 4)
    classes = np.array([d.cls for d in dets], dtype=np.int64)
    raw = np.array([d.score for d in dets], dtype=np.float64)
    return boxes, classes, raw


def nms_with_retention(
    dets: Sequence[Detection], scores: Sequence[float], tau: float
) -> list[Cluster]:
    """Greedy per-class NMS that retains suppressed boxes in their suppressor's cluster.

    Ranking is by the provided scores; ties keep input order, so the lowest
    index wins. Every input detection ends up in exactly one cluster, as its
    prediction or one of its overlaps, and kept predictions of one class
    never overlap each other above tau. Clusters come back in descending
    prediction-score order.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != (len(dets),):
        raise ValueError(f"got {len(dets)} detections but {scores.shape} scores")
    if scores.size and not np.isfinite(scores).all():
        raise ValueError("ranking scores must be finite")
    if not dets:
        return []
    boxes, classes, _ = _as_arrays(dets)
    keep, owner, order = _greedy_nms(boxes, scores, classes, float(tau))
    members: dict[int, list[int]] = {int(k): [] for k in keep}
    for p in range(order.size):
        if owner[p] >= 0:
            members[int(owner[p])].append(int(order[p]))
    clusters = []
    for k in keep:
        pred_idx = int(order[k])
        overlap_idx = members[int(k)]
        clusters.append(
            Cluster(
                prediction=dets[pred_idx],
                overlaps=tuple(dets[i] for i in overlap_idx),
                prediction_index=pred_idx,
                overlap_indices=tuple(overlap_idx),
            )
        )
    return clusters


def decouple(cluster: Cluster) -> tuple[list[Candidate], list[Candidate]]:
    """Split a cluster into aligned top-left and bottom-right candidate lists.

    Candidate 0 is always the prediction's corner; overlaps follow in their
    stored order. Each candidate carries the index of the member it came
    from, so couple() can tie selections back to boxes.
    """
    members = cluster.members
    tl = [((d.box.x1, d.box.y1), i) for i, d in enumerate(members)]
    br = [((d.box.x2, d.box.y2), i) for i, d in enumerate(members)]
    return tl, br


def score_corners(
    candidates: Sequence[Candidate], hm: CornerHeatmap, which: str, cls: int
) -> np.ndarray:
    """Heatmap value under each candidate's grid cell, on the given class channel."""
    if not 0 <= cls < hm.num_classes:
        raise ValueError(f"class id {cls} outside [0, {hm.num_classes})")
    if not candidates:
        return np.zeros(0, dtype=np.float64)
    points = np.array([p for p, _ in candidates], dtype=np.float64)
    classes = np.full(len(candidates), cls, dtype=np.int64)
    return lookup_many(hm, which, classes, points)


def _select(scores: np.ndarray, strategy: CoupleStrategy) -> np.ndarray:
    """Indices of the selected candidates; ties always prefer the lowest index."""
    if strategy.kind == "max":
        return np.array([int(np.argmax(scores))], dtype=np.int64)
    if strategy.kind == "top_n":
        k = min(strategy.n, scores.size)
        # sorted so that n = len coincides with the all strategy exactly
        return np.sort(np.argsort(-scores, kind="stable")[:k])
    if strategy.kind == "all":
        return np.arange(scores.size, dtype=np.int64)
    theta = strategy.theta
    if strategy.adaptive:
        theta = float(scores.mean() + scores.std())
    picked = np.flatnonzero(scores >= theta)
    if picked.size == 0:
        return np.array([int(np.argmax(scores))], dtype=np.int64)
    return picked


def couple(
    tl_candidates: Sequence[Candidate],
    tl_scores: Sequence[float],
    br_candidates: Sequence[Candidate],
    br_scores: Sequence[float],
    strategy: CoupleStrategy = CoupleStrategy(),
) -> BBox:
    """Re-pair corner candidates into one box.

    Selections are made independently per corner type and averaged
    coordinate-wise. A selection that would invert the box falls back to
    the prediction's own corners (candidates at index 0), so the result
    always satisfies the box ordering invariants.
    """
    if not tl_candidates or not br_candidates:
        raise ValueError("candidate lists must be non-empty")
    tl_s = np.asarray(tl_scores, dtype=np.float64)
    br_s = np.asarray(br_scores, dtype=np.float64)
    if tl_s.shape != (len(tl_candidates),) or br_s.shape != (len(br_candidates),):
        raise ValueError("candidate and score lengths must match")
    if not (np.isfinite(tl_s).all() and np.isfinite(br_s).all()):
        raise ValueError("corner scores must be finite")
    tl_sel = _select(tl_s, strategy)
    br_sel = _select(br_s, strategy)
    tl_pts = np.array([p for p, _ in tl_candidates], dtype=np.float64)
    br_pts = np.array([p for p, _ in br_candidates], dtype=np.float64)
    x1, y1 = tl_pts[tl_sel].mean(axis=0)
    x2, y2 = br_pts[br_sel].mean(axis=0)
    if x1 > x2 or y1 > y2:
        (px1, py1), _ = tl_candidates[0]
        (px2, py2), _ = br_candidates[0]
        return BBox(px1, py1, px2, py2)
    return BBox(float(x1), float(y1), float(x2), float(y2))


def _corner_features(
    hm: CornerHeatmap, boxes: np.ndarray, classes: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    f_tl = lookup_many(hm, "tl", classes, boxes[:, 0:2])
    f_br = lookup_many(hm, "br", classes, boxes[:, 2:4])
    return f_tl, f_br


def _rank_scores(
    raw: np.ndarray, f_tl: np.ndarray, f_br: np.ndarray, config: BdcConfig
) -> tuple[np.ndarray, np.ndarray]:
    """(fused, rank) score arrays for the given config."""
    fused = cocl_many(raw, f_tl, f_br, config.cocl_variant)
    rank = fused if config.rank_by == "cocl" else raw
    return fused, rank


def bdc_pipeline(
    dets: Sequence[Detection], hm: CornerHeatmap, config: BdcConfig = BdcConfig()
) -> list[tuple[Detection, float]]:
    """Full decouple/couple post-processing for one image.

    Detections under the score floor are dropped; survivors are ranked (by
    the fused corner-classification score, or by the raw classification
    score when config.rank_by is "cls"), clustered by overlap-retaining
    NMS, and each cluster is re-coupled into its emitted box. Returns
    (detection with updated box, ranking score) pairs sorted by descending
    ranking score, truncated to config.max_per_image.

    A coupled box that would end up with zero area falls back to the
    prediction's box, keeping detection invariants intact.
    """
    kept = [d for d in dets if d.score >= config.score_floor]
    if not kept:
        return []
    boxes, classes, raw = _as_arrays(kept)
    if int(classes.max()) >= hm.num_classes:
        raise ValueError(
            f"class id {int(classes.max())} outside heatmap with {hm.num_classes} channels"
        )
    f_tl, f_br = _corner_features(hm, boxes, classes)
    _, rank = _rank_scores(raw, f_tl, f_br, config)
    keep, owner, order = _greedy_nms(boxes, rank, classes, config.iou_tau)
    members: dict[int, list[int]] = {int(k): [int(order[k])] for k in keep}
    for p in range(order.size):
        if owner[p] >= 0:
            members[int(owner[p])].append(int(order[p]))
    out: list[tuple[Detection, float]] = []
    for k in keep[: config.max_per_image]:
        m = members[int(k)]
        pred = kept[m[0]]
        if len(m) == 1:
            out.append((pred, float(rank[order[k]])))
            continue
        # candidate corner lookups equal the members' own corner features,
        # so the per-detection lookups above are reused as corner scores
        tl_cands = [((kept[i].box.x1, kept[i].box.y1), j) for j, i in enumerate(m)]
        br_cands = [((kept[i].box.x2, kept[i].box.y2), j) for j, i in enumerate(m)]
        new_box = couple(tl_cands, f_tl[m], br_cands, f_br[m], config.strategy)
        if new_box.area <= 0.0:
            new_box = pred.box
        out.append((replace(pred, box=new_box), float(rank[order[k]])))
    return out


def nms_pipeline(
    dets: Sequence[Detection],
    hm: Optional[CornerHeatmap],
    config: BdcConfig = BdcConfig(),
) -> list[tuple[Detection, float]]:
    """Plain-NMS counterpart of bdc_pipeline: same floor, ranking, and
    clustering, but emitted boxes are the predictions' own.

    The heatmap may be omitted only when config.rank_by is "cls", since the
    fused ranking needs corner confidences.
    """
    kept = [d for d in dets if d.score >= config.score_floor]
    if not kept:
        return []
    boxes, classes, raw = _as_arrays(kept)
    if hm is None:
        if config.rank_by != "cls":
            raise ValueError("fused ranking requires a heatmap; pass one or set rank_by='cls'")
        rank = raw
    else:
        if int(classes.max()) >= hm.num_classes:
            raise ValueError(
                f"class id {int(classes.max())} outside heatmap with {hm.num_classes} channels"
            )
        f_tl, f_br = _corner_features(hm, boxes, classes)
        _, rank = _rank_scores(raw, f_tl, f_br, config)
    keep, _, order = _greedy_nms(boxes, rank, classes, config.iou_tau)
    return [(kept[int(order[k])], float(rank[order[k]])) for k in keep[: config.max_per_image]]
