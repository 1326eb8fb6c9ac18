import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import argmin_bin, bin_centers, inside_grid, soft_quantize_loop
from plk.camera import PointCloud
from plk.errors import InvalidShape
from plk.grid import finite_diff_grad, grad_check
from plk.softquant import (
    VoxelGridSpec,
    assign_bins,
    bev_flatten,
    bev_flatten_grad,
    neighbor_offsets,
    soft_quantize,
    soft_quantize_grad,
)


def _random_instance(rng, n_pts, bins, neighborhood):
    spec = VoxelGridSpec(
        origin=tuple(rng.uniform(-2, 2, 3)),
        bin_size=tuple(rng.uniform(0.5, 1.5, 3)),
        bins=bins,
        sigma=float(rng.uniform(0.4, 1.5)),
        neighborhood=neighborhood,
    )
    lo = np.asarray(spec.origin)
    hi = lo + np.asarray(spec.bin_size) * np.asarray(bins)
    # a margin so some points fall outside
    pts = rng.uniform(lo - 0.5, hi + 0.5, (n_pts, 3))
    return pts, spec


def _loop(pts, spec):
    return soft_quantize_loop(pts.tolist(), spec.origin, spec.bin_size, spec.bins, spec.sigma, spec.neighborhood)


# ── assignment ──────────────────────────────────────────────────────────


def test_assign_at_center():
    spec = VoxelGridSpec(bins=(3, 3, 3))
    assert assign_bins(np.array([[1.5, 0.5, 2.5]]), spec).tolist() == [1 * 9 + 0 * 3 + 2]


def test_assign_shared_face_goes_low():
    spec = VoxelGridSpec(bins=(3, 3, 3))
    assert assign_bins(np.array([[1.0, 2.0, 0.5]]), spec).tolist() == [0 * 9 + 1 * 3 + 0]


def test_assign_outer_faces_inside_beyond_outside():
    spec = VoxelGridSpec(bins=(2, 2, 2))
    pts = np.array([[0.0, 0.0, 0.0], [2.0, 2.0, 2.0], [2.0 + 1e-12, 1, 1], [-1e-12, 1, 1]])
    assert assign_bins(pts, spec).tolist() == [0, 7, -1, -1]


def test_assign_matches_exhaustive_argmin():
    rng = np.random.default_rng(11)
    spec = VoxelGridSpec(origin=(-1.0, 0.5, 2.0), bin_size=(0.7, 1.1, 0.9), bins=(8, 8, 8))
    pts = rng.uniform([-1, 0.5, 2], [-1 + 5.6, 0.5 + 8.8, 2 + 7.2], (1000, 3))
    centers = bin_centers(spec.origin, spec.bin_size, spec.bins)
    expect = [argmin_bin(p, centers) for p in pts.tolist()]
    assert assign_bins(pts, spec).tolist() == expect


# ── occupancy ───────────────────────────────────────────────────────────


def test_point_at_center_isolated():
    spec = VoxelGridSpec(bins=(1, 1, 1))
    t = soft_quantize(np.array([[0.5, 0.5, 0.5]]), spec)
    assert t.shape == (1, 1, 1) and t[0, 0, 0] == 1.0


def test_point_at_distance_sigma():
    spec = VoxelGridSpec(bins=(1, 1, 1), bin_size=(4, 4, 4), sigma=1.5)
    t = soft_quantize(np.array([[2.0 + 1.5, 2.0, 2.0]]), spec)
    assert abs(t[0, 0, 0] - math.exp(-1)) < 1e-15


def test_single_centered_point_spills_to_neighbors():
    spec = VoxelGridSpec(bins=(3, 3, 3))
    t = soft_quantize(np.array([[1.5, 1.5, 1.5]]), spec)
    assert t[1, 1, 1] == 1.0
    # face neighbor of the center bin: it has 4 or 5 in-grid neighbors itself
    assert abs(t[0, 1, 1] - math.exp(-1) / 5) < 1e-15
    assert t[0, 0, 0] == 0.0
    assert np.count_nonzero(t) == 7


def test_empty_cloud():
    spec = VoxelGridSpec(bins=(2, 3, 4))
    assert not soft_quantize(PointCloud.empty(), spec).any()
    assert soft_quantize_grad(np.zeros((0, 3)), spec, np.ones((2, 3, 4))).shape == (0, 3)


@pytest.mark.parametrize("neighborhood", ["faces6", "full26"])
def test_matches_double_loop(neighborhood):
    rng = np.random.default_rng(5)
    pts, spec = _random_instance(rng, 200, (6, 6, 6), neighborhood)
    np.testing.assert_allclose(soft_quantize(pts, spec), _loop(pts, spec), rtol=0, atol=1e-9)


def test_neighbor_offset_counts():
    assert len(neighbor_offsets("faces6")) == 6
    assert len(neighbor_offsets("full26")) == 26


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["faces6", "full26"]))
def test_range_and_outside_points_ignored(seed, neighborhood):
    rng = np.random.default_rng(seed)
    pts, spec = _random_instance(rng, 60, tuple(rng.integers(1, 5, 3)), neighborhood)
    t = soft_quantize(pts, spec)
    assert t.min() >= 0 and t.max() <= 2
    inside = np.array([inside_grid(p, spec.origin, spec.bin_size, spec.bins) for p in pts.tolist()], dtype=bool)
    np.testing.assert_array_equal(t, soft_quantize(pts[inside], spec))


def test_voxel_grid_validation():
    with pytest.raises(InvalidShape):
        VoxelGridSpec(sigma=0.0)
    with pytest.raises(InvalidShape):
        VoxelGridSpec(bins=(0, 1, 1))
    with pytest.raises(InvalidShape):
        VoxelGridSpec(neighborhood="full27")
    assert VoxelGridSpec(bin_size=(1, 2, 3)).sigma == 2.0


# ── gradient ────────────────────────────────────────────────────────────


def test_gradient_vanishes_at_symmetric_peak():
    for nb in ("faces6", "full26"):
        spec = VoxelGridSpec(bins=(3, 3, 3), neighborhood=nb)
        g = soft_quantize_grad(np.array([[1.5, 1.5, 1.5]]), spec, np.ones((3, 3, 3)))
        np.testing.assert_allclose(g, 0.0, atol=1e-16)


def test_gradient_outside_points_are_zero():
    spec = VoxelGridSpec(bins=(2, 2, 2))
    g = soft_quantize_grad(np.array([[5.0, 5.0, 5.0], [0.3, 0.6, 0.9]]), spec, np.ones((2, 2, 2)))
    assert not g[0].any() and g[1].any()


def test_gradient_upstream_shape_checked():
    with pytest.raises(InvalidShape):
        soft_quantize_grad(np.zeros((1, 3)), VoxelGridSpec(bins=(2, 2, 2)), np.ones((2, 2)))


@pytest.mark.parametrize("neighborhood", ["faces6", "full26"])
def test_gradient_matches_oracle_interior(neighborhood):
    rng = np.random.default_rng(21)
    spec = VoxelGridSpec(bins=(4, 3, 5), bin_size=(1.0, 0.8, 1.2), neighborhood=neighborhood)
    size = np.asarray(spec.bin_size)
    idx = rng.integers(0, spec.bins, (50, 3))
    frac = rng.uniform(0.05, 0.95, (50, 3))
    pts = (idx + frac) * size
    up = rng.normal(size=spec.bins)
    num = finite_diff_grad(lambda p: float((soft_quantize(p, spec) * up).sum()), pts, h=1e-6)
    rep = grad_check(soft_quantize_grad(pts, spec, up), num)
    assert rep.passed, rep


# ── bird's-eye view ─────────────────────────────────────────────────────


def test_bev_zero_and_single_voxel():
    t = np.zeros((3, 4, 5))
    for mode in ("max", "sum"):
        assert not bev_flatten(t, mode).any()
    t[1, 2, 3] = 0.7
    for mode in ("max", "sum"):
        b = bev_flatten(t, mode)
        assert b.shape == (3, 4) and b[1, 2] == 0.7 and np.count_nonzero(b) == 1


def test_bev_sum_manual():
    t = np.random.default_rng(2).uniform(size=(4, 4, 3))
    manual = np.array([[t[i, j, 0] + t[i, j, 1] + t[i, j, 2] for j in range(4)] for i in range(4)])
    np.testing.assert_allclose(bev_flatten(t, "sum"), manual, atol=1e-15)


def test_bev_max_grad_tie_to_first():
    t = np.zeros((1, 1, 3))
    t[0, 0, 1] = t[0, 0, 2] = 1.0
    g = bev_flatten_grad(t, np.array([[2.0]]), "max")
    assert g[0, 0].tolist() == [0.0, 2.0, 0.0]
    assert bev_flatten_grad(t, np.array([[2.0]]), "sum")[0, 0].tolist() == [2.0, 2.0, 2.0]
