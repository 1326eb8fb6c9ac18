"""Seeded synthetic three-frame scenes with exact depth and camera motion.

A scene is a stack of layers. Each layer is a depth surface and a texture,
both parameterized by continuous pixel coordinates of the reference
(center) frame, plus a coverage predicate. A neighbor view is rendered by
solving, per pixel and per layer, for the reference pixel that lands on it
and keeping the nearest covering layer. Motions are pure x-translations so
rows map to rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List

import numpy as np

from .camera import CameraIntrinsics, PoseSE3
from .errors import InvalidShape

__all__ = ["SCENE_KINDS", "SyntheticScene", "default_camera", "make_scene"]

SCENE_KINDS = ("plane", "two_planes", "textured_random")
LIDAR_STRIDE = 8


@dataclass
class SyntheticScene:
    image_t: np.ndarray
    image_prev: np.ndarray
    image_next: np.ndarray
    gt_depth: np.ndarray
    pose_to_prev: PoseSE3
    pose_to_next: PoseSE3
    cam: CameraIntrinsics
    lidar: np.ndarray
    kind: str = "plane"
    seed: int = 0
    baseline: float = 0.5
    meta: dict = field(default_factory=dict)


@dataclass
class _Layer:
    depth: Callable[[np.ndarray, np.ndarray], np.ndarray]
    covers: Callable[[np.ndarray, np.ndarray], np.ndarray]
    texture: Callable[[np.ndarray, np.ndarray], np.ndarray]
    constant: bool = False


def default_camera(height: int, width: int) -> CameraIntrinsics:
    return CameraIntrinsics(
        f=0.8 * width, cx=(width - 1) / 2, cy=(height - 1) / 2, width=width, height=height
    )


def _texture(rng, channels=3, n_waves=4, wavelengths=(14.0, 28.0)):
    """Smooth random color texture over reference pixel coordinates, in [0.1, 0.9]."""
    theta = rng.uniform(0, np.pi, (channels, n_waves))
    lam = rng.uniform(*wavelengths, (channels, n_waves))
    phase = rng.uniform(0, 2 * np.pi, (channels, n_waves))
    amp = rng.uniform(0.5, 1.0, (channels, n_waves))
    amp /= amp.sum(axis=1, keepdims=True)
    kx = 2 * np.pi * np.cos(theta) / lam
    ky = 2 * np.pi * np.sin(theta) / lam

    def tex(u, v):
        out = np.empty(u.shape + (channels,))
        for c in range(channels):
            s = np.zeros(u.shape)
            for k in range(n_waves):
                s += amp[c, k] * np.sin(kx[c, k] * u + ky[c, k] * v + phase[c, k])
            out[..., c] = 0.5 + 0.4 * s
        return out

    return tex


def _random_field(rng, H, W, lo=4.0, hi=40.0, n_waves=3):
    """Smooth depth field in [lo, hi], log-uniform between its extremes."""
    theta = rng.uniform(0, 2 * np.pi, n_waves)
    lam = rng.uniform(1.5, 3.0, n_waves) * max(H, W)
    phase = rng.uniform(0, 2 * np.pi, n_waves)
    kx = 2 * np.pi * np.cos(theta) / lam
    ky = 2 * np.pi * np.sin(theta) / lam

    def raw(u, v):
        s = np.zeros(np.shape(u))
        for k in range(n_waves):
            s += np.sin(kx[k] * u + ky[k] * v + phase[k])
        return s

    v, u = np.mgrid[0:H, 0:W].astype(np.float64)
    r = raw(u, v)
    rmin, rmax = r.min(), r.max()
    span = max(rmax - rmin, 1e-12)

    def depth(u, v):
        t = np.clip((raw(u, v) - rmin) / span, 0.0, 1.0)
        return lo * (hi / lo) ** t

    return depth


def _layers(kind, H, W, rng, plane_depth, near_depth, far_depth):
    everywhere = lambda u, v: np.ones(np.shape(u), dtype=bool)
    if kind == "plane":
        return [_Layer(lambda u, v: np.full(np.shape(u), plane_depth), everywhere, _texture(rng), True)]
    if kind == "two_planes":
        boundary = W / 2 - 0.5
        far = _Layer(lambda u, v: np.full(np.shape(u), far_depth), everywhere, _texture(rng), True)
        near = _Layer(
            lambda u, v: np.full(np.shape(u), near_depth),
            lambda u, v: np.asarray(u) < boundary,
            _texture(rng),
            True,
        )
        return [far, near]
    if kind == "textured_random":
        return [_Layer(_random_field(rng, H, W), everywhere, _texture(rng))]
    raise InvalidShape(f"unknown scene kind {kind!r}; expected one of {SCENE_KINDS}")


def _render(layers: List[_Layer], cam: CameraIntrinsics, tx: float):
    """Render the view whose pose from the reference frame is translation (tx, 0, 0).

    Returns ``(image, depth_in_reference)`` where depth is that of the
    reference-frame surface point seen at each pixel.
    """
    H, W = cam.shape
    v, q = np.mgrid[0:H, 0:W].astype(np.float64)
    best_depth = np.full((H, W), np.inf)
    image = None
    for layer in layers:
        if layer.constant:
            d = layer.depth(q, v)
            u = q - cam.f * tx / d
        else:
            u = q.copy()
            for _ in range(200):
                u_new = q - cam.f * tx / layer.depth(u, v)
                if np.max(np.abs(u_new - u)) < 1e-13:
                    u = u_new
                    break
                u = u_new
        d = layer.depth(u, v)
        hit = layer.covers(u, v) & (d < best_depth)
        tex = layer.texture(u, v)
        image = tex if image is None else np.where(hit[..., None], tex, image)
        best_depth = np.where(hit, d, best_depth)
    return image, best_depth


def make_scene(
    kind: str = "plane",
    height: int = 48,
    width: int = 64,
    cam: CameraIntrinsics | None = None,
    baseline: float = 0.5,
    seed: int = 0,
    plane_depth: float = 10.0,
    near_depth: float = 8.0,
    far_depth: float = 16.0,
) -> SyntheticScene:
    """Build a deterministic synthetic scene.

    ``plane`` is fronto-parallel at ``plane_depth``; ``two_planes`` has a
    near half-plane (left of the vertical image midline) in front of a far
    plane; ``textured_random`` is a smooth depth field in [4, 40] m.
    Neighbor frames sit at +-``baseline`` along x. LiDAR is ground-truth
    depth on every 8th row and column.
    """
    if height < 16 or width < 16:
        raise InvalidShape(f"scenes need at least 16x16 pixels, got {height}x{width}")
    if baseline == 0:
        raise InvalidShape("baseline must be nonzero")
    if kind not in SCENE_KINDS:
        raise InvalidShape(f"unknown scene kind {kind!r}; expected one of {SCENE_KINDS}")
    if cam is None:
        cam = default_camera(height, width)
    if cam.shape != (height, width):
        raise InvalidShape("camera extents do not match the requested size")
    rng = np.random.default_rng(seed)
    layers = _layers(kind, height, width, rng, plane_depth, near_depth, far_depth)
    image_t, gt = _render(layers, cam, 0.0)
    pose_prev = PoseSE3.from_translation([baseline, 0.0, 0.0])
    pose_next = PoseSE3.from_translation([-baseline, 0.0, 0.0])
    image_prev, _ = _render(layers, cam, baseline)
    image_next, _ = _render(layers, cam, -baseline)
    lidar = np.zeros_like(gt)
    lidar[::LIDAR_STRIDE, ::LIDAR_STRIDE] = gt[::LIDAR_STRIDE, ::LIDAR_STRIDE]
    return SyntheticScene(
        image_t=image_t,
        image_prev=image_prev,
        image_next=image_next,
        gt_depth=gt,
        pose_to_prev=pose_prev,
        pose_to_next=pose_next,
        cam=cam,
        lidar=lidar,
        kind=kind,
        seed=seed,
        baseline=baseline,
    )
