"""Axis-aligned box arithmetic and image-to-grid coordinate mapping."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in continuous image coordinates, corner form.

    (x1, y1) is the top-left corner and (x2, y2) the bottom-right one.
    Degenerate (zero width or height) boxes are allowed; inverted or
    non-finite ones are not.
    """

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        # normalize ints and numpy scalars so equality and repr are stable
        for name in ("x1", "y1", "x2", "y2"):
            object.__setattr__(self, name, float(getattr(self, name)))
        for name in ("x1", "y1", "x2", "y2"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"non-finite coordinate {name} in box {self.as_tuple()}")
        if self.x1 > self.x2 or self.y1 > self.y2:
            raise ValueError(f"inverted box {self.as_tuple()}")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def top_left(self) -> tuple[float, float]:
        return (self.x1, self.y1)

    @property
    def bottom_right(self) -> tuple[float, float]:
        return (self.x2, self.y2)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)


@dataclass(frozen=True)
class GridCell:
    """Integer (cx, cy) cell index into an H x W grid, optionally with a class channel."""

    cx: int
    cy: int
    c: int = 0

    def __post_init__(self):
        if self.cx < 0 or self.cy < 0 or self.c < 0:
            raise ValueError(f"negative grid index ({self.cx}, {self.cy}, {self.c})")


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes.

    Total on valid boxes: when the union is empty (two degenerate boxes)
    the result is defined as 0.
    """
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    inter = iw * ih if iw > 0.0 and ih > 0.0 else 0.0
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def iou_matrix(boxes_a: np.ndarray, boxes_b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between two (n, 4) and (m, 4) arrays of x1,y1,x2,y2 rows.

    Arithmetic matches the scalar iou() exactly, including the empty-union
    convention.
    """
    a = np.asarray(boxes_a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(boxes_b, dtype=np.float64).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.where((iw > 0.0) & (ih > 0.0), iw * ih, 0.0)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return np.where(union > 0.0, inter / np.where(union > 0.0, union, 1.0), 0.0)


def image_to_grid(p: tuple[float, float], stride: float, dims: tuple[int, int]) -> tuple[int, int]:
    """Map an image point to the (cx, cy) index of the cell containing it.

    dims is (H, W). The mapping floors p / stride and clamps to the border
    cells, so any finite point lands on the grid.
    """
    if not (math.isfinite(stride) and stride > 0.0):
        raise ValueError(f"stride must be positive and finite, got {stride}")
    h, w = dims
    if h < 1 or w < 1:
        raise ValueError(f"grid dims must be at least 1x1, got {dims}")
    x, y = p
    if not (math.isfinite(x) and math.isfinite(y)):
        raise ValueError(f"non-finite point {p}")
    cx = min(max(int(math.floor(x / stride)), 0), w - 1)
    cy = min(max(int(math.floor(y / stride)), 0), h - 1)
    return cx, cy


def points_to_grid(points: np.ndarray, stride: float, dims: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized image_to_grid over an (n, 2) array; returns (cx, cy) arrays."""
    h, w = dims
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    cx = np.clip(np.floor(pts[:, 0] / stride).astype(np.int64), 0, w - 1)
    cy = np.clip(np.floor(pts[:, 1] / stride).astype(np.int64), 0, h - 1)
    return cx, cy
