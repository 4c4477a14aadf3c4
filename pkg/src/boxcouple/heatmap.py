"""Corner heatmap encoding, directional pooling, focal loss, and cell lookup."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .geometry import BBox, image_to_grid, points_to_grid

# predictions are clamped away from {0, 1} before taking logs
CLAMP_EPS = 1e-6

DIRECTIONS = ("top", "left", "bottom", "right")


@dataclass(frozen=True)
class GaussianConfig:
    """Parameters of the corner target splat.

    min_overlap is the worst-case IoU that a box whose corners drift by the
    splat radius must still keep against the original; sigma_divisor turns
    the splat diameter into the Gaussian sigma, sigma = (2r + 1) / divisor.
    """

    min_overlap: float = 0.3
    sigma_divisor: float = 6.0

    def __post_init__(self):
        if not (0.0 < self.min_overlap < 1.0):
            raise ValueError(f"min_overlap must lie in (0, 1), got {self.min_overlap}")
        if not (math.isfinite(self.sigma_divisor) and self.sigma_divisor > 0.0):
            raise ValueError(f"sigma_divisor must be positive, got {self.sigma_divisor}")


@dataclass(frozen=True)
class FocalConfig:
    """Exponents of the penalty-reduced corner focal loss."""

    alpha: float = 2.0
    beta: float = 4.0

    def __post_init__(self):
        if self.alpha < 0.0 or self.beta < 0.0:
            raise ValueError(f"focal exponents must be non-negative, got {(self.alpha, self.beta)}")


class CornerHeatmap:
    """Per-class top-left and bottom-right corner confidence grids.

    tl and br are (C, H, W) float32 arrays with values in [0, 1]; stride is
    the number of image pixels per grid cell. Instances are treated as
    immutable once constructed, which makes them safe to share across
    worker threads.
    """

    __slots__ = ("tl", "br", "stride")

    def __init__(self, tl: np.ndarray, br: np.ndarray, stride: float):
        tl = np.ascontiguousarray(tl, dtype=np.float32)
        br = np.ascontiguousarray(br, dtype=np.float32)
        if tl.ndim != 3:
            raise ValueError(f"corner maps must be (C, H, W), got shape {tl.shape}")
        if tl.shape != br.shape:
            raise ValueError(f"tl/br shape mismatch: {tl.shape} vs {br.shape}")
        if min(tl.shape) < 1:
            raise ValueError(f"empty corner map shape {tl.shape}")
        stride = float(stride)
        if not (math.isfinite(stride) and stride > 0.0):
            raise ValueError(f"stride must be positive and finite, got {stride}")
        for name, grid in (("tl", tl), ("br", br)):
            if not ((grid >= 0.0) & (grid <= 1.0)).all():
                raise ValueError(f"{name} map has values outside [0, 1]")
        self.tl = tl
        self.br = br
        self.stride = stride

    @property
    def num_classes(self) -> int:
        return self.tl.shape[0]

    @property
    def grid_dims(self) -> tuple[int, int]:
        """(H, W) of the underlying grids."""
        return self.tl.shape[1], self.tl.shape[2]

    def map_for(self, which: str) -> np.ndarray:
        if which == "tl":
            return self.tl
        if which == "br":
            return self.br
        raise ValueError(f"corner kind must be 'tl' or 'br', got {which!r}")


def gaussian_radius(box_w: float, box_h: float, min_overlap: float = 0.3) -> float:
    """Largest corner displacement (in cells) keeping IoU >= min_overlap.

    Solves the three quadratic worst cases (box translated, shrunk, grown
    by the displacement) and takes the smallest root, floored at 0. Box
    dimensions are in grid cells and must be positive.
    """
    if not (box_w > 0.0 and box_h > 0.0):
        raise ValueError(f"box dims must be positive, got {(box_w, box_h)}")
    if not (0.0 < min_overlap < 1.0):
        raise ValueError(f"min_overlap must lie in (0, 1), got {min_overlap}")
    w, h = float(box_w), float(box_h)

    a1 = 1.0
    b1 = h + w
    c1 = w * h * (1.0 - min_overlap) / (1.0 + min_overlap)
    r1 = (b1 - math.sqrt(b1 * b1 - 4.0 * a1 * c1)) / (2.0 * a1)

    a2 = 4.0
    b2 = 2.0 * (h + w)
    c2 = (1.0 - min_overlap) * w * h
    r2 = (b2 - math.sqrt(b2 * b2 - 4.0 * a2 * c2)) / (2.0 * a2)

    a3 = 4.0 * min_overlap
    b3 = -2.0 * min_overlap * (h + w)
    c3 = (min_overlap - 1.0) * w * h
    r3 = (-b3 + math.sqrt(b3 * b3 - 4.0 * a3 * c3)) / (2.0 * a3)

    return max(0.0, min(r1, r2, r3))


def _splat_gaussian(grid: np.ndarray, cx: int, cy: int, radius: float, sigma: float) -> None:
    """Max-merge a truncated Gaussian disc into grid around (cx, cy)."""
    r = int(math.floor(radius))
    h, w = grid.shape
    x0, x1 = max(cx - r, 0), min(cx + r, w - 1)
    y0, y1 = max(cy - r, 0), min(cy + r, h - 1)
    if x0 > x1 or y0 > y1:
        return
    dx = np.arange(x0, x1 + 1, dtype=np.float64) - cx
    dy = np.arange(y0, y1 + 1, dtype=np.float64) - cy
    d2 = dy[:, None] ** 2 + dx[None, :] ** 2
    patch = np.exp(-d2 / (2.0 * sigma * sigma))
    patch[d2 > radius * radius] = 0.0
    window = grid[y0 : y1 + 1, x0 : x1 + 1]
    np.maximum(window, patch.astype(np.float32), out=window)


def encode_corner_heatmaps(
    gts: Iterable[tuple[int, BBox]],
    dims: tuple[int, int, int],
    stride: float,
    config: GaussianConfig = GaussianConfig(),
) -> CornerHeatmap:
    """Render Gaussian corner targets for (class, box) ground truths.

    Each ground truth places exp(-(dx^2 + dy^2) / (2 sigma^2)) over the
    disc of integer offsets with dx^2 + dy^2 <= r^2 around its tl and br
    corner cells, on its own class channel; overlapping splats merge by
    element-wise max, so every annotated corner cell holds exactly 1.0.
    """
    c, h, w = dims
    if c < 1 or h < 1 or w < 1:
        raise ValueError(f"heatmap dims must be positive, got {dims}")
    tl = np.zeros((c, h, w), dtype=np.float32)
    br = np.zeros((c, h, w), dtype=np.float32)
    for cls, box in gts:
        if not 0 <= cls < c:
            raise ValueError(f"class id {cls} outside [0, {c}) for box {box.as_tuple()}")
        if box.area <= 0.0:
            raise ValueError(f"degenerate ground-truth box {box.as_tuple()}")
        radius = gaussian_radius(box.width / stride, box.height / stride, config.min_overlap)
        sigma = (2.0 * radius + 1.0) / config.sigma_divisor
        tl_cx, tl_cy = image_to_grid(box.top_left, stride, (h, w))
        br_cx, br_cy = image_to_grid(box.bottom_right, stride, (h, w))
        _splat_gaussian(tl[cls], tl_cx, tl_cy, radius, sigma)
        _splat_gaussian(br[cls], br_cx, br_cy, radius, sigma)
    return CornerHeatmap(tl, br, stride)


def corner_pool(grid: np.ndarray, direction: str) -> np.ndarray:
    """Directional running max over an H x W grid.

    "top" lets each cell see the maximum at or below it in its column (the
    scan that surfaces top edges), "bottom" the maximum at or above,
    "left" the maximum at or to the right in its row, "right" the maximum
    at or to the left. Single pass per line; output dtype matches input.
    """
    g = np.asarray(grid)
    if g.ndim != 2 or g.size == 0:
        raise ValueError(f"expected a non-empty 2-D grid, got shape {g.shape}")
    if not np.isfinite(g).all():
        raise ValueError("grid contains non-finite values")
    if direction == "top":
        return np.maximum.accumulate(g[::-1, :], axis=0)[::-1, :].copy()
    if direction == "bottom":
        return np.maximum.accumulate(g, axis=0)
    if direction == "left":
        return np.maximum.accumulate(g[:, ::-1], axis=1)[:, ::-1].copy()
    if direction == "right":
        return np.maximum.accumulate(g, axis=1)
    raise ValueError(f"direction must be one of {DIRECTIONS}, got {direction!r}")


def _check_pair(pred: CornerHeatmap, target: CornerHeatmap) -> None:
    if pred.tl.shape != target.tl.shape:
        raise ValueError(f"prediction/target shape mismatch: {pred.tl.shape} vs {target.tl.shape}")


def corner_focal_loss(pred: CornerHeatmap, target: CornerHeatmap, config: FocalConfig = FocalConfig()) -> float:
    """Penalty-reduced focal loss between predicted and target corner maps.

    Cells where the target is exactly 1 are positives; their count (floored
    at 1) normalizes the summed loss. Predictions are clamped to
    [eps, 1 - eps] before the logs, accumulation is float64, and the result
    is >= 0 with equality (up to clamp residue) only for a perfect map.
    """
    _check_pair(pred, target)
    total = 0.0
    n_pos = 0
    for m_raw, y_raw in ((pred.tl, target.tl), (pred.br, target.br)):
        m = np.clip(m_raw.astype(np.float64), CLAMP_EPS, 1.0 - CLAMP_EPS)
        y = y_raw.astype(np.float64)
        pos = y == 1.0
        n_pos += int(np.count_nonzero(pos))
        total += float(np.sum((1.0 - m[pos]) ** config.alpha * np.log(m[pos])))
        mn = m[~pos]
        total += float(np.sum((1.0 - y[~pos]) ** config.beta * mn ** config.alpha * np.log1p(-mn)))
    return -total / max(n_pos, 1)


def corner_focal_loss_grad(
    pred: CornerHeatmap, target: CornerHeatmap, config: FocalConfig = FocalConfig()
) -> tuple[np.ndarray, np.ndarray]:
    """Analytic d(loss)/d(pred) for the tl and br maps as float64 arrays.

    Evaluated at the clamped predictions; cells that the clamp has flattened
    get gradient 0. Matches central finite differences of corner_focal_loss
    at interior points.
    """
    _check_pair(pred, target)
    alpha, beta = config.alpha, config.beta
    n_pos = max(
        int(np.count_nonzero(target.tl == 1.0)) + int(np.count_nonzero(target.br == 1.0)), 1
    )
    grads = []
    for m_raw, y_raw in ((pred.tl, target.tl), (pred.br, target.br)):
        m64 = m_raw.astype(np.float64)
        clamped = (m64 < CLAMP_EPS) | (m64 > 1.0 - CLAMP_EPS)
        m = np.clip(m64, CLAMP_EPS, 1.0 - CLAMP_EPS)
        y = y_raw.astype(np.float64)
        pos = y == 1.0

        # d/dm [(1 - m)^a log m] = -a (1 - m)^(a - 1) log m + (1 - m)^a / m
        d_pos = (1.0 - m) ** alpha / m
        if alpha > 0.0:
            d_pos = d_pos - alpha * (1.0 - m) ** (alpha - 1.0) * np.log(m)
        # d/dm [(1 - y)^b m^a log(1 - m)] = (1 - y)^b (a m^(a-1) log(1 - m) - m^a / (1 - m))
        d_neg = -(m**alpha) / (1.0 - m)
        if alpha > 0.0:
            d_neg = d_neg + alpha * m ** (alpha - 1.0) * np.log1p(-m)
        d_neg = (1.0 - y) ** beta * d_neg

        grad = np.where(pos, d_pos, d_neg) / -n_pos
        grad[clamped] = 0.0
        grads.append(grad)
    return grads[0], grads[1]


def lookup(hm: CornerHeatmap, which: str, cls: int, p: tuple[float, float]) -> float:
    """Heatmap value at the grid cell containing image point p, as a float."""
    grid = hm.map_for(which)
    if not 0 <= cls < hm.num_classes:
        raise ValueError(f"class id {cls} outside [0, {hm.num_classes})")
    cx, cy = image_to_grid(p, hm.stride, hm.grid_dims)
    return float(grid[cls, cy, cx])


def lookup_many(hm: CornerHeatmap, which: str, classes: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Vectorized lookup: one value per (class id, image point) pair.

    classes is (n,) ints, points (n, 2); cells are resolved exactly like
    the scalar lookup. Returns float64 values.
    """
    grid = hm.map_for(which)
    classes = np.asarray(classes, dtype=np.int64)
    if classes.size and (classes.min() < 0 or classes.max() >= hm.num_classes):
        bad = classes[(classes < 0) | (classes >= hm.num_classes)][0]
        raise ValueError(f"class id {int(bad)} outside [0, {hm.num_classes})")
    cx, cy = points_to_grid(points, hm.stride, hm.grid_dims)
    return grid[classes, cy, cx].astype(np.float64)
