"""Pinhole back-projection and SE(3) helpers, checked against hand-computed values."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import backproject_pixel
from plk.camera import (
    CameraIntrinsics,
    PointCloud,
    PoseSE3,
    backproject,
    backproject_grad,
    backproject_vjp,
    pose_apply,
    pose_compose,
    pose_inverse,
    project,
)
from plk.errors import BehindCamera, InvalidIndex, InvalidPose, InvalidShape
from plk.grid import finite_diff_grad


def _cam(f=100.0, cx=50.0, cy=40.0, w=200, h=100):
    return CameraIntrinsics(f=f, cx=cx, cy=cy, width=w, height=h)


def _single(cam, u, v, d):
    depth = np.zeros(cam.shape)
    depth[v, u] = d
    return backproject(depth, cam)


# ── back-projection ─────────────────────────────────────────────────────


def test_principal_point_ray():
    cloud = _single(_cam(), 50, 40, 7.0)
    np.testing.assert_array_equal(cloud.points, [[0.0, 0.0, 7.0]])
    np.testing.assert_array_equal(cloud.source_pixel, [[50, 40]])


def test_off_axis_substitution():
    cloud = _single(_cam(), 150, 40, 2.0)
    np.testing.assert_allclose(cloud.points, [[2.0, 0.0, 2.0]], atol=1e-15)


def test_two_by_two_against_scalar_formula():
    cam = CameraIntrinsics(f=1.0, cx=0.5, cy=0.5, width=2, height=2)
    cloud = backproject(np.ones((2, 2)), cam)
    assert len(cloud) == 4
    for (u, v), p in zip(cloud.source_pixel, cloud.points):
        np.testing.assert_allclose(p, backproject_pixel(u, v, 1.0, 1.0, 0.5, 0.5), atol=0)
    # row-major order
    assert cloud.source_pixel.tolist() == [[0, 0], [1, 0], [0, 1], [1, 1]]


def test_depth_window_filters():
    cam = CameraIntrinsics(f=1.0, cx=0.5, cy=0.5, width=2, height=2)
    depth = np.array([[0.05, 0.1], [100.0, 100.5]])
    cloud = backproject(depth, cam)
    assert cloud.source_pixel.tolist() == [[1, 0], [0, 1]]
    assert len(backproject(np.full((2, 2), 500.0), cam)) == 0


def test_shape_mismatch():
    with pytest.raises(InvalidShape):
        backproject(np.ones((3, 3)), _cam(w=4, h=3, cx=1, cy=1))


def test_grad_principal_point():
    cam = _cam()
    cloud = _single(cam, 50, 40, 3.0)
    np.testing.assert_array_equal(backproject_grad(None, cam, 0, cloud), [0, 0, 1])


def test_grad_unit_offset():
    cam = _cam()
    cloud = _single(cam, 150, 40, 3.0)
    np.testing.assert_array_equal(backproject_grad(None, cam, 0, cloud), [1, 0, 1])


def test_grad_matches_finite_difference():
    rng = np.random.default_rng(3)
    cam = CameraIntrinsics(f=9.0, cx=3.3, cy=2.1, width=8, height=6)
    depth = rng.uniform(1, 20, cam.shape)
    cloud = backproject(depth, cam)
    for k in rng.choice(len(cloud), 5, replace=False):
        u, v = cloud.source_pixel[k]
        for c in range(3):
            num = finite_diff_grad(lambda d: backproject(d, cam).points[k, c], depth)
            assert abs(num[v, u] - backproject_grad(depth, cam, k)[c]) < 1e-6


def test_grad_index_out_of_range():
    cam = CameraIntrinsics(f=1.0, cx=0.5, cy=0.5, width=2, height=2)
    with pytest.raises(InvalidIndex):
        backproject_grad(np.ones((2, 2)), cam, 4)


def test_vjp_is_transpose_of_jacobian():
    rng = np.random.default_rng(4)
    cam = CameraIntrinsics(f=7.0, cx=2.5, cy=1.5, width=6, height=4)
    depth = rng.uniform(1, 5, cam.shape)
    up = rng.normal(size=(24, 3))
    g = backproject_vjp(backproject(depth, cam), cam, up)
    num = finite_diff_grad(lambda d: float((backproject(d, cam).points * up).sum()), depth)
    np.testing.assert_allclose(g, num, rtol=1e-7, atol=1e-9)


# ── poses and projection ───────────────────────────────────────────────


def test_identity_apply():
    np.testing.assert_array_equal(pose_apply(PoseSE3.identity(), [1, 2, 3]), [1, 2, 3])


def test_rotation_about_z():
    rz = PoseSE3.from_axis_angle([0, 0, 1], math.pi / 2)
    np.testing.assert_allclose(pose_apply(rz, [1, 0, 0]), [0, 1, 0], atol=1e-12)


def test_compose_order():
    a = PoseSE3.from_translation([1, 0, 0])
    rz = PoseSE3.from_axis_angle([0, 0, 1], math.pi / 2)
    # rotate first, then translate
    np.testing.assert_allclose(pose_apply(pose_compose(a, rz), [1, 0, 0]), [1, 1, 0], atol=1e-12)


def test_rejects_non_rotation():
    with pytest.raises(InvalidPose):
        PoseSE3(np.diag([1.0, 1.0, 2.0]), np.zeros(3))
    with pytest.raises(InvalidPose):
        PoseSE3(np.diag([1.0, 1.0, -1.0]), np.zeros(3))


def test_project_optical_axis():
    cam = _cam()
    assert project([0, 0, 5], cam) == (50.0, 40.0)


@pytest.mark.parametrize("z", [0.0, -1.0])
def test_project_behind_camera(z):
    with pytest.raises(BehindCamera):
        project([0, 0, z], _cam())


def test_point_cloud_lengths_must_agree():
    with pytest.raises(InvalidShape):
        PointCloud(np.zeros((2, 3)), np.zeros((3, 2)))


_axis = st.tuples(*[st.floats(-1, 1) for _ in range(3)]).filter(lambda a: sum(x * x for x in a) > 1e-3)
_vec = st.tuples(*[st.floats(-50, 50) for _ in range(3)])


@settings(max_examples=60, deadline=None)
@given(_axis, st.floats(-math.pi, math.pi), _vec, _vec)
def test_group_axiom_and_isometry(axis, angle, t, p):
    a = PoseSE3.from_axis_angle(axis, angle, t)
    e = pose_compose(a, pose_inverse(a))
    np.testing.assert_allclose(e.R, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(e.t, 0, atol=1e-12)
    q = np.array([[0.0, 0.0, 0.0], p])
    moved = pose_apply(a, q)
    assert abs(np.linalg.norm(moved[1] - moved[0]) - np.linalg.norm(q[1] - q[0])) < 1e-12 * max(1, np.linalg.norm(p))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_project_inverts_backproject(seed):
    rng = np.random.default_rng(seed)
    cam = CameraIntrinsics(f=rng.uniform(5, 50), cx=rng.uniform(0, 9), cy=rng.uniform(0, 6), width=10, height=7)
    depth = rng.uniform(0.1, 100, cam.shape)
    cloud = backproject(depth, cam)
    for (u, v), p in zip(cloud.source_pixel, cloud.points):
        pu, pv = project(p, cam)
        assert abs(pu - u) < 1e-9 and abs(pv - v) < 1e-9
