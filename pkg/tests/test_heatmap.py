"""Corner heatmaps: Gaussian radius and encoding, pooling, focal loss, lookup."""

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from boxcouple import (
    BBox,
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

from references import (
    _worst_case_iou,
    brute_gaussian_radius,
    finite_difference_grad,
    focal_reference,
    pool_reference,
)


def heatmap_from(tl, br, stride=8.0):
    return CornerHeatmap(tl=np.asarray(tl, dtype=np.float32), br=np.asarray(br, dtype=np.float32), stride=stride)


def zeros_pair(c=1, h=8, w=8, stride=8.0):
    return heatmap_from(np.zeros((c, h, w)), np.zeros((c, h, w)), stride)


# ---------------------------------------------------------------------------
# CornerHeatmap container


def test_heatmap_validates_shape_and_range():
    good = np.zeros((2, 4, 4), dtype=np.float32)
    with pytest.raises(ValueError):
        CornerHeatmap(tl=good, br=np.zeros((2, 4, 5), dtype=np.float32), stride=8.0)
    with pytest.raises(ValueError):
        CornerHeatmap(tl=good, br=good, stride=0.0)
    with pytest.raises(ValueError):
        CornerHeatmap(tl=good + 1.5, br=good, stride=8.0)
    with pytest.raises(ValueError):
        CornerHeatmap(tl=np.zeros((4, 4), dtype=np.float32), br=good, stride=8.0)
    hm = CornerHeatmap(tl=good, br=good, stride=8.0)
    assert hm.num_classes == 2
    assert hm.grid_dims == (4, 4)
    assert hm.tl.dtype == np.float32


def test_heatmap_accepts_non_contiguous_input():
    wide = np.zeros((2, 4, 8), dtype=np.float32)
    hm = CornerHeatmap(tl=wide[:, :, ::2], br=wide[:, :, 1::2], stride=8.0)
    assert hm.tl.flags["C_CONTIGUOUS"] and hm.br.flags["C_CONTIGUOUS"]


# ---------------------------------------------------------------------------
# gaussian radius


def test_radius_pinned_square_box():
    r = gaussian_radius(10.0, 10.0, 0.3)
    assert abs(r - 2.2614) < 5e-4
    assert int(r) == brute_gaussian_radius(10.0, 10.0, 0.3) == 2


def test_radius_matches_bruteforce_sweep():
    # closed-form roots can land one float ulp below an exact integer, in
    # which case flooring gives one less than the integer search; accept
    # that far edge only when the root is within 1e-6 of the integer
    for w in range(1, 25):
        for h in range(1, 25):
            for overlap in (0.1, 0.3, 0.5, 0.7):
                r = gaussian_radius(float(w), float(h), overlap)
                expected = brute_gaussian_radius(float(w), float(h), overlap)
                if int(r) != expected:
                    assert abs(r - round(r)) <= 1e-6 and int(round(r)) == expected, (
                        w, h, overlap, r, expected,
                    )


@given(
    st.floats(1.0, 60.0, allow_nan=False),
    st.floats(1.0, 60.0, allow_nan=False),
    st.floats(0.1, 0.9, allow_nan=False),
)
def test_radius_keeps_worst_case_overlap(w, h, overlap):
    r = int(gaussian_radius(w, h, overlap))
    assert r >= 0
    assert _worst_case_iou(w, h, r) >= overlap - 1e-7


def test_radius_zero_for_tiny_boxes():
    assert gaussian_radius(1.0, 1.0, 0.7) < 1.0


# ---------------------------------------------------------------------------
# encoding


def random_gts(rng, n, classes=3, size=512.0):
    out = []
    for _ in range(n):
        cls = int(rng.integers(0, classes))
        w = float(rng.uniform(24.0, 160.0))
        h = float(rng.uniform(24.0, 160.0))
        x1 = float(rng.uniform(0.0, size - w))
        y1 = float(rng.uniform(0.0, size - h))
        out.append((cls, BBox(x1, y1, x1 + w, y1 + h)))
    return out


def test_encode_dtype_range_and_empty():
    hm = encode_corner_heatmaps([], (3, 64, 64), 8.0)
    assert hm.tl.shape == hm.br.shape == (3, 64, 64)
    assert hm.tl.dtype == hm.br.dtype == np.float32
    assert not hm.tl.any() and not hm.br.any()


def test_encode_peaks_are_exactly_one():
    rng = np.random.default_rng(7)
    for case in range(10):
        gts = random_gts(rng, int(rng.integers(1, 8)))
        hm = encode_corner_heatmaps(gts, (3, 64, 64), 8.0)
        assert float(hm.tl.max()) <= 1.0 and float(hm.br.max()) <= 1.0
        for cls, box in gts:
            assert lookup(hm, "tl", cls, box.top_left) == 1.0
            assert lookup(hm, "br", cls, box.bottom_right) == 1.0


def test_encode_off_peak_cell_matches_formula():
    # a single isolated box; the cell one step right of the peak holds the
    # Gaussian of the radius-derived sigma, cast to 32-bit
    stride, box = 4.0, BBox(200.0, 200.0, 280.0, 280.0)
    hm = encode_corner_heatmaps([(0, box)], (1, 128, 128), stride)
    r = gaussian_radius(box.width / stride, box.height / stride, 0.3)
    assert r >= 1.0
    sigma = (2.0 * r + 1.0) / 6.0
    expected = np.float32(math.exp(-1.0 / (2.0 * sigma * sigma)))
    cx, cy = int(200.0 // stride), int(200.0 // stride)
    assert hm.tl[0, cy, cx + 1] == expected
    assert hm.tl[0, cy + 1, cx] == expected


def test_encode_merges_overlapping_gaussians_by_max():
    rng = np.random.default_rng(11)
    for case in range(8):
        gts = random_gts(rng, int(rng.integers(2, 7)), classes=2)
        joint = encode_corner_heatmaps(gts, (2, 64, 64), 8.0)
        tl = np.zeros((2, 64, 64), dtype=np.float32)
        br = np.zeros((2, 64, 64), dtype=np.float32)
        for gt in gts:
            single = encode_corner_heatmaps([gt], (2, 64, 64), 8.0)
            tl = np.maximum(tl, single.tl)
            br = np.maximum(br, single.br)
        assert np.array_equal(joint.tl, tl)
        assert np.array_equal(joint.br, br)


def test_encode_decays_monotonically_from_peak():
    box = BBox(160.0, 160.0, 360.0, 360.0)
    hm = encode_corner_heatmaps([(1, box)], (3, 64, 64), 8.0)
    for grid, point in ((hm.tl, box.top_left), (hm.br, box.bottom_right)):
        cx, cy = int(point[0] // 8), int(point[1] // 8)
        rightward = grid[1, cy, cx:]
        downward = grid[1, cy:, cx]
        assert (np.diff(rightward) <= 0).all()
        assert (np.diff(downward) <= 0).all()


def test_encode_touches_only_its_class_channel():
    box = BBox(100.0, 100.0, 200.0, 200.0)
    hm = encode_corner_heatmaps([(1, box)], (3, 64, 64), 8.0)
    assert not hm.tl[0].any() and not hm.tl[2].any()
    assert hm.tl[1].any()


def test_encode_rejects_out_of_range_class():
    with pytest.raises(ValueError):
        encode_corner_heatmaps([(3, BBox(0, 0, 10, 10))], (3, 64, 64), 8.0)
    with pytest.raises(ValueError):
        encode_corner_heatmaps([(0, BBox(0, 0, 10, 10))], (3, 64, 64), -1.0)


# ---------------------------------------------------------------------------
# corner pooling


grids = st.integers(1, 12).flatmap(
    lambda h: st.integers(1, 12).map(lambda w: (h, w))
).flatmap(
    lambda hw: st.lists(
        st.floats(-10.0, 10.0, allow_nan=False, width=32),
        min_size=hw[0] * hw[1],
        max_size=hw[0] * hw[1],
    ).map(lambda vals: np.array(vals, dtype=np.float32).reshape(hw))
)

DIRECTIONS = ("top", "left", "bottom", "right")


def test_pool_pinned_row():
    row = np.array([[1.0, 3.0, 2.0]])
    assert np.array_equal(corner_pool(row, "left"), [[3.0, 3.0, 2.0]])
    assert np.array_equal(corner_pool(row, "right"), [[1.0, 3.0, 3.0]])


def test_pool_single_cell_and_constant_grids_unchanged():
    one = np.array([[4.2]])
    flat = np.full((5, 7), 1.5)
    for d in DIRECTIONS:
        assert np.array_equal(corner_pool(one, d), one)
        assert np.array_equal(corner_pool(flat, d), flat)


@given(grids, st.sampled_from(DIRECTIONS))
def test_pool_matches_double_loop_reference(grid, direction):
    assert np.array_equal(corner_pool(grid, direction), pool_reference(grid, direction))


@given(grids, st.sampled_from(DIRECTIONS))
def test_pool_idempotent_and_dominates_input(grid, direction):
    once = corner_pool(grid, direction)
    assert np.array_equal(corner_pool(once, direction), once)
    assert (once >= grid).all()


@given(grids, st.sampled_from(DIRECTIONS))
def test_pool_monotone_in_the_input(grid, direction):
    bumped = grid + np.float32(0.25)
    assert (corner_pool(grid, direction) <= corner_pool(bumped, direction)).all()


def test_pool_rejects_bad_direction_and_non_finite():
    with pytest.raises(ValueError):
        corner_pool(np.zeros((3, 3)), "up")
    with pytest.raises(ValueError):
        corner_pool(np.array([[np.nan]]), "top")


# ---------------------------------------------------------------------------
# focal loss


def test_focal_loss_perfect_one_hot_is_zero():
    rng = np.random.default_rng(3)
    for case in range(5):
        target = np.zeros((2, 8, 8), dtype=np.float32)
        flat = rng.choice(128, size=4, replace=False)
        target.ravel()[flat] = 1.0
        hm = heatmap_from(target, target)
        assert corner_focal_loss(hm, hm) <= 1e-9


def test_focal_loss_single_cell_fixture():
    pred = heatmap_from([[[0.5]]], [[[0.0]]])
    target = heatmap_from([[[0.5]]], [[[0.0]]])
    loss = corner_focal_loss(pred, target)
    assert abs(loss - 0.010831) <= 1e-6
    ref = focal_reference(pred.tl, pred.br, target.tl, target.br)
    assert loss == pytest.approx(ref, rel=1e-12, abs=1e-15)


def test_focal_loss_matches_literal_reference():
    rng = np.random.default_rng(5)
    for case in range(10):
        pred_tl = rng.uniform(0.02, 0.98, (2, 6, 6)).astype(np.float32)
        pred_br = rng.uniform(0.02, 0.98, (2, 6, 6)).astype(np.float32)
        target_tl = rng.uniform(0.0, 0.9, (2, 6, 6)).astype(np.float32)
        target_br = rng.uniform(0.0, 0.9, (2, 6, 6)).astype(np.float32)
        target_tl.ravel()[rng.choice(72, 3, replace=False)] = 1.0
        loss = corner_focal_loss(heatmap_from(pred_tl, pred_br), heatmap_from(target_tl, target_br))
        ref = focal_reference(pred_tl, pred_br, target_tl, target_br)
        assert loss == pytest.approx(ref, rel=1e-12)
        assert loss >= 0.0


def test_focal_loss_strictly_decreasing_in_positive_confidence():
    target = np.zeros((1, 3, 3), dtype=np.float32)
    target[0, 1, 1] = 1.0
    target_hm = heatmap_from(target, np.zeros_like(target))
    losses = []
    for m in np.linspace(0.05, 0.95, 19):
        pred = np.zeros((1, 3, 3), dtype=np.float32)
        pred[0, 1, 1] = m
        losses.append(corner_focal_loss(heatmap_from(pred, np.zeros_like(pred)), target_hm))
    assert all(a > b for a, b in zip(losses, losses[1:]))


def test_focal_loss_respects_alpha_beta_config():
    pred = heatmap_from([[[0.5]]], [[[0.0]]])
    target = heatmap_from([[[0.5]]], [[[0.0]]])
    harsher = corner_focal_loss(pred, target, FocalConfig(alpha=2.0, beta=0.0))
    default = corner_focal_loss(pred, target)
    assert harsher == pytest.approx(default / 0.5**4, rel=1e-12)


def test_focal_loss_rejects_shape_mismatch():
    with pytest.raises(ValueError):
        corner_focal_loss(zeros_pair(1, 8, 8), zeros_pair(1, 8, 4))


def test_focal_grad_matches_finite_differences_smoke():
    rng = np.random.default_rng(9)
    pred_tl = rng.uniform(0.2, 0.8, (1, 5, 5)).astype(np.float32)
    pred_br = rng.uniform(0.2, 0.8, (1, 5, 5)).astype(np.float32)
    target_tl = rng.uniform(0.0, 0.6, (1, 5, 5)).astype(np.float32)
    target_br = rng.uniform(0.0, 0.6, (1, 5, 5)).astype(np.float32)
    target_tl[0, 2, 2] = 1.0
    pred = heatmap_from(pred_tl, pred_br)
    target = heatmap_from(target_tl, target_br)

    grad_tl, grad_br = corner_focal_loss_grad(pred, target)
    tl64, br64 = pred.tl.astype(np.float64), pred.br.astype(np.float64)
    t_tl64, t_br64 = target.tl.astype(np.float64), target.br.astype(np.float64)

    def loss_fn(tl, br):
        return focal_reference(tl, br, t_tl64, t_br64)

    for cell in [(0, 2, 2), (0, 0, 0), (0, 4, 1)]:
        for which, grad in (("tl", grad_tl), ("br", grad_br)):
            fd = finite_difference_grad(loss_fn, tl64, br64, cell, which)
            assert grad[cell] == pytest.approx(fd, rel=1e-5)


# ---------------------------------------------------------------------------
# lookup


def test_lookup_roundtrip_and_off_peak():
    stride, box = 4.0, BBox(200.0, 200.0, 280.0, 280.0)
    hm = encode_corner_heatmaps([(2, box)], (3, 128, 128), stride)
    assert lookup(hm, "tl", 2, box.top_left) == 1.0
    assert lookup(hm, "br", 2, box.bottom_right) == 1.0
    r = gaussian_radius(box.width / stride, box.height / stride, 0.3)
    sigma = (2.0 * r + 1.0) / 6.0
    expected = np.float32(math.exp(-1.0 / (2.0 * sigma * sigma)))
    assert lookup(hm, "tl", 2, (box.x1 + stride, box.y1)) == expected
    assert lookup(hm, "tl", 0, box.top_left) == 0.0  # wrong channel


def test_lookup_on_zero_heatmap_is_zero():
    assert lookup(zeros_pair(), "tl", 0, (31.0, 17.0)) == 0.0
    assert lookup(zeros_pair(), "br", 0, (-5.0, 900.0)) == 0.0  # clamped


def test_lookup_rejects_bad_class_and_map():
    with pytest.raises(ValueError):
        lookup(zeros_pair(c=2), "tl", 2, (0.0, 0.0))
    with pytest.raises(ValueError):
        lookup(zeros_pair(), "middle", 0, (0.0, 0.0))


def test_lookup_many_matches_scalar():
    rng = np.random.default_rng(13)
    gts = random_gts(rng, 5)
    hm = encode_corner_heatmaps(gts, (3, 64, 64), 8.0)
    points = rng.uniform(-20.0, 540.0, size=(40, 2))
    classes = rng.integers(0, 3, size=40)
    for which in ("tl", "br"):
        got = lookup_many(hm, which, classes, points)
        assert got.dtype == np.float64
        for k in range(40):
            assert got[k] == lookup(hm, which, int(classes[k]), tuple(points[k]))
