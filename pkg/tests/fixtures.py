"""Deterministic scene builders shared by the unit and regression tests."""

from __future__ import annotations

import numpy as np

from boxcouple import BBox, CornerHeatmap, Detection

# the slot layout: a 64x64 grid split into 16-cell slots, with each cluster's
# corner cells confined to a +/-2 window around (4, 4) and (12, 12) inside its
# slot, so no two detections ever share a heatmap cell
SLOT_CELLS = 16
TL_ANCHOR = 4
BR_ANCHOR = 12
OFFSETS = [(dy, dx) for dy in (-2, -1, 0, 1, 2) for dx in (-2, -1, 0, 1, 2)]


def cell_center(cx: int, cy: int, stride: float) -> tuple[float, float]:
    return ((cx + 0.5) * stride, (cy + 0.5) * stride)


def self_peaked_scene(rng, classes: int = 3, stride: float = 8.0, grid: int = 64):
    """Random detections whose own corners are the per-cluster heatmap peaks.

    Each detection's corner cells hold exactly its classification score and
    no other detection touches those cells, so fused corner-aware scores
    rank identically to classification scores and the best-scored box of
    every cluster carries the highest-valued corners.

    Returns (dets, heatmap).
    """
    tl = np.zeros((classes, grid, grid), dtype=np.float32)
    br = np.zeros((classes, grid, grid), dtype=np.float32)
    slots_side = grid // SLOT_CELLS
    slots = [(sy, sx) for sy in range(slots_side) for sx in range(slots_side)]
    n_clusters = int(rng.integers(1, len(slots) // 2 + 1))
    chosen = rng.choice(len(slots), size=n_clusters, replace=False)

    dets = []
    for slot_index in chosen:
        sy, sx = slots[int(slot_index)]
        cls = int(rng.integers(0, classes))
        members = int(rng.integers(1, 7))
        scores = rng.uniform(0.1, 0.99, size=members)
        tl_offsets = rng.choice(len(OFFSETS), size=members, replace=False)
        br_offsets = rng.choice(len(OFFSETS), size=members, replace=False)
        for score, tl_o, br_o in zip(scores, tl_offsets, br_offsets):
            dy1, dx1 = OFFSETS[int(tl_o)]
            dy2, dx2 = OFFSETS[int(br_o)]
            cx1, cy1 = sx * SLOT_CELLS + TL_ANCHOR + dx1, sy * SLOT_CELLS + TL_ANCHOR + dy1
            cx2, cy2 = sx * SLOT_CELLS + BR_ANCHOR + dx2, sy * SLOT_CELLS + BR_ANCHOR + dy2
            x1, y1 = cell_center(cx1, cy1, stride)
            x2, y2 = cell_center(cx2, cy2, stride)
            tl[cls, cy1, cx1] = max(tl[cls, cy1, cx1], np.float32(score))
            br[cls, cy2, cx2] = max(br[cls, cy2, cx2], np.float32(score))
            dets.append(Detection(cls, float(score), BBox(x1, y1, x2, y2)))

    return dets, CornerHeatmap(tl=tl, br=br, stride=stride)


def random_boxes(rng, n: int, span: float = 100.0) -> np.ndarray:
    """(n, 4) array of valid boxes inside [0, 1.5 * span]."""
    x1 = rng.uniform(0.0, span, n)
    y1 = rng.uniform(0.0, span, n)
    w = rng.uniform(1.0, span / 2.0, n)
    h = rng.uniform(1.0, span / 2.0, n)
    return np.stack([x1, y1, x1 + w, y1 + h], axis=1)


def random_nms_instance(rng, max_boxes: int = 50, classes: int = 3):
    """One NMS problem: (box tuples, scores, class ids, tau)."""
    n = int(rng.integers(0, max_boxes + 1))
    boxes = [tuple(row) for row in random_boxes(rng, n)]
    scores = [float(s) for s in rng.uniform(0.0, 1.0, n)]
    cls = [int(c) for c in rng.integers(0, classes, n)]
    tau = float(rng.choice([0.3, 0.5, 0.7]))
    return boxes, scores, cls, tau
