"""Pinhole intrinsics, rigid motions and depth-map back-projection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BehindCamera, InvalidIndex, InvalidPose, InvalidShape
from .grid import as_grid

__all__ = [
    "CameraIntrinsics",
    "PointCloud",
    "PoseSE3",
    "backproject",
    "backproject_grad",
    "backproject_vjp",
    "pixel_rays",
    "pose_apply",
    "pose_compose",
    "pose_inverse",
    "project",
]

DEFAULT_MIN_DEPTH = 0.1
DEFAULT_MAX_DEPTH = 100.0


@dataclass(frozen=True)
class CameraIntrinsics:
    """Single-focal pinhole camera. ``cx``/``cy`` are in pixels."""

    f: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not self.f > 0:
            raise InvalidShape(f"focal length must be positive, got {self.f}")
        if self.width < 1 or self.height < 1:
            raise InvalidShape(f"image extents must be positive, got {self.width}x{self.height}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InvalidShape(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} image"
            )

    @property
    def K(self) -> np.ndarray:
        return np.array(
            [[self.f, 0.0, self.cx], [0.0, self.f, self.cy], [0.0, 0.0, 1.0]]
        )

    @property
    def K_inv(self) -> np.ndarray:
        return np.array(
            [
                [1.0 / self.f, 0.0, -self.cx / self.f],
                [0.0, 1.0 / self.f, -self.cy / self.f],
                [0.0, 0.0, 1.0],
            ]
        )

    @property
    def shape(self):
        return (self.height, self.width)

    def to_dict(self):
        return {"f": self.f, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}


@dataclass(frozen=True)
class PoseSE3:
    """Rigid motion ``p -> R @ p + t``."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = np.array(self.R, dtype=np.float64).reshape(3, 3)
        t = np.array(self.t, dtype=np.float64).reshape(3)
        if not np.allclose(R.T @ R, np.eye(3), rtol=0, atol=1e-9):
            raise InvalidPose("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise InvalidPose("rotation has determinant != +1")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls) -> "PoseSE3":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_translation(cls, t) -> "PoseSE3":
        return cls(np.eye(3), t)

    @classmethod
    def from_axis_angle(cls, axis, angle: float, t=(0.0, 0.0, 0.0)) -> "PoseSE3":
        axis = np.asarray(axis, dtype=np.float64)
        axis = axis / np.linalg.norm(axis)
        k = np.array(
            [[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]]
        )
        R = np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)
        return cls(R, t)

    def to_dict(self):
        return {"R": self.R.tolist(), "t": self.t.tolist()}

    @classmethod
    def from_dict(cls, d) -> "PoseSE3":
        return cls(d["R"], d["t"])


def pose_compose(a: PoseSE3, b: PoseSE3) -> PoseSE3:
    """Apply ``b`` first, then ``a``."""
    return PoseSE3(a.R @ b.R, a.R @ b.t + a.t)


def pose_inverse(a: PoseSE3) -> PoseSE3:
    return PoseSE3(a.R.T, -(a.R.T @ a.t))


def pose_apply(a: PoseSE3, p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    return p @ a.R.T + a.t


def project(p, cam: CameraIntrinsics):
    """Perspective projection of a camera-frame point to (u, v) pixels."""
    x, y, z = (float(c) for c in p)
    if not z > 0:
        raise BehindCamera(f"point has z={z}")
    return cam.f * x / z + cam.cx, cam.f * y / z + cam.cy


@dataclass
class PointCloud:
    """Pseudo-LiDAR points with the (u, v) pixel each one came from."""

    points: np.ndarray
    source_pixel: np.ndarray

    def __post_init__(self):
        self.points = np.ascontiguousarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.source_pixel = np.ascontiguousarray(self.source_pixel, dtype=np.int64).reshape(-1, 2)
        if len(self.points) != len(self.source_pixel):
            raise InvalidShape("points and source_pixel lengths differ")

    def __len__(self):
        return len(self.points)

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(np.zeros((0, 3)), np.zeros((0, 2), dtype=np.int64))


def pixel_rays(cam: CameraIntrinsics) -> np.ndarray:
    """``(H, W, 2)`` array of ``((u - cx)/f, (v - cy)/f)`` per pixel."""
    v, u = np.mgrid[0 : cam.height, 0 : cam.width].astype(np.float64)
    return np.stack([(u - cam.cx) / cam.f, (v - cam.cy) / cam.f], axis=-1)


def _check_depth(depth, cam):
    depth = as_grid(depth, "depth")
    if depth.shape != cam.shape:
        raise InvalidShape(f"depth shape {depth.shape} does not match camera {cam.shape}")
    return depth


def backproject(
    depth,
    cam: CameraIntrinsics,
    min_depth: float = DEFAULT_MIN_DEPTH,
    max_depth: float = DEFAULT_MAX_DEPTH,
) -> PointCloud:
    """Lift every pixel with depth in ``[min_depth, max_depth]`` to 3D.

    Points come out in row-major pixel order.
    """
    if not min_depth > 0:
        raise InvalidShape(f"min_depth must be positive, got {min_depth}")
    depth = _check_depth(depth, cam)
    keep = (depth >= min_depth) & (depth <= max_depth)
    v, u = np.nonzero(keep)
    z = depth[v, u]
    x = (u - cam.cx) * z / cam.f
    y = (v - cam.cy) * z / cam.f
    return PointCloud(np.stack([x, y, z], axis=1), np.stack([u, v], axis=1))


def backproject_grad(depth, cam: CameraIntrinsics, point_index: int, cloud: PointCloud | None = None,
                     min_depth: float = DEFAULT_MIN_DEPTH, max_depth: float = DEFAULT_MAX_DEPTH):
    """Derivative of one back-projected point w.r.t. its pixel's depth.

    The point depends on no other pixel, so this 3-vector is the whole
    Jacobian row.
    """
    if cloud is None:
        cloud = backproject(depth, cam, min_depth, max_depth)
    if not 0 <= point_index < len(cloud):
        raise InvalidIndex(f"point index {point_index} outside [0, {len(cloud)})")
    u, v = cloud.source_pixel[point_index]
    return np.array([(u - cam.cx) / cam.f, (v - cam.cy) / cam.f, 1.0])


def backproject_vjp(cloud: PointCloud, cam: CameraIntrinsics, upstream: np.ndarray) -> np.ndarray:
    """Pull an ``(N, 3)`` gradient on points back to an ``(H, W)`` depth gradient."""
    upstream = np.asarray(upstream, dtype=np.float64).reshape(-1, 3)
    u, v = cloud.source_pixel[:, 0], cloud.source_pixel[:, 1]
    g = (
        upstream[:, 0] * (u - cam.cx) / cam.f
        + upstream[:, 1] * (v - cam.cy) / cam.f
        + upstream[:, 2]
    )
    out = np.zeros(cam.shape)
    out[v, u] = g
    return out
