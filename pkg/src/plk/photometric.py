"""View synthesis: reprojection, bilinear warping, SSIM and photometric error.

All images are ``(H, W)`` or ``(H, W, C)`` float64 grids with values in
[0, 1]. Pixel coordinates are ``(u, v)`` = (column, row).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .camera import CameraIntrinsics, PoseSE3, pixel_rays
from .errors import InvalidDepth, InvalidShape
from .grid import GradPair, as_grid, check_same_shape

__all__ = [
    "SsimConfig",
    "WarpResult",
    "bilinear_sample",
    "bilinear_sample_vjp",
    "pe_map",
    "pe_vjp",
    "photometric_error",
    "reproject_coords",
    "reproject_coords_with_grad",
    "self_supervised_loss",
    "ssim",
    "ssim_vjp",
]

ALPHA = 0.85
REDUCTIONS = ("min", "mean")


@dataclass(frozen=True)
class SsimConfig:
    c1: float = 0.01**2
    c2: float = 0.03**2
    window: int = 3

    def __post_init__(self):
        if not (self.c1 > 0 and self.c2 > 0):
            raise InvalidShape("SSIM constants must be positive")
        if self.window < 3 or self.window % 2 == 0:
            raise InvalidShape(f"SSIM window must be odd and >= 3, got {self.window}")


@dataclass
class WarpResult:
    image: np.ndarray
    valid_mask: np.ndarray


def _hwc(img) -> np.ndarray:
    img = as_grid(img, "image")
    if img.ndim == 2:
        return img[:, :, None]
    if img.ndim != 3:
        raise InvalidShape(f"images must be HxW or HxWxC, got shape {img.shape}")
    return img


# -- reprojection ------------------------------------------------------------


def reproject_coords_with_grad(depth, pose_t_to_n: PoseSE3, cam: CameraIntrinsics):
    """Pixel coordinates in view n of every pixel of view t, plus d(coords)/d(depth).

    Returns ``(coords, jac, in_front)`` with ``coords`` and ``jac`` of shape
    ``(H, W, 2)``. Pixels that land behind the camera get coords (-1, -1)
    and zero Jacobian.

    Written as the reference pixel plus a displacement so that the
    identity motion returns every pixel's own coordinates bit-exactly.
    """
    depth = as_grid(depth, "depth")
    if depth.shape != cam.shape:
        raise InvalidShape(f"depth shape {depth.shape} does not match camera {cam.shape}")
    if not np.all(depth > 0):
        raise InvalidDepth("depth must be strictly positive")
    rays = pixel_rays(cam)
    rx, ry = rays[..., 0], rays[..., 1]
    A = pose_t_to_n.R - np.eye(3)
    t = pose_t_to_n.t
    # (R - I) @ (rx, ry, 1)
    g = [A[i, 0] * rx + A[i, 1] * ry + A[i, 2] for i in range(3)]
    e = [depth * g[i] + t[i] for i in range(3)]
    qz = depth + e[2]
    front = qz > 0
    safe_qz = np.where(front, qz, 1.0)
    v0, u0 = np.mgrid[0 : cam.height, 0 : cam.width].astype(np.float64)
    num_x = e[0] - rx * e[2]
    num_y = e[1] - ry * e[2]
    u = u0 + cam.f * num_x / safe_qz
    v = v0 + cam.f * num_y / safe_qz
    dqz = 1.0 + g[2]
    du = cam.f * ((g[0] - rx * g[2]) * safe_qz - num_x * dqz) / (safe_qz * safe_qz)
    dv = cam.f * ((g[1] - ry * g[2]) * safe_qz - num_y * dqz) / (safe_qz * safe_qz)
    coords = np.stack([np.where(front, u, -1.0), np.where(front, v, -1.0)], axis=-1)
    jac = np.stack([np.where(front, du, 0.0), np.where(front, dv, 0.0)], axis=-1)
    return coords, jac, front


def reproject_coords(depth, pose_t_to_n: PoseSE3, cam: CameraIntrinsics) -> np.ndarray:
    return reproject_coords_with_grad(depth, pose_t_to_n, cam)[0]


# -- bilinear sampling -------------------------------------------------------


class _Bilinear:
    def __init__(self, src, coords):
        src3 = _hwc(src)
        coords = as_grid(coords, "coords")
        H, W, _ = src3.shape
        if coords.shape[-1] != 2 or coords.ndim != 3:
            raise InvalidShape(f"coords must be (h, w, 2), got {coords.shape}")
        x, y = coords[..., 0], coords[..., 1]
        valid = (x >= 0) & (x <= W - 1) & (y >= 0) & (y <= H - 1)
        x = np.where(valid, x, 0.0)
        y = np.where(valid, y, 0.0)
        x0 = np.clip(np.floor(x), 0, max(W - 2, 0)).astype(np.int64)
        y0 = np.clip(np.floor(y), 0, max(H - 2, 0)).astype(np.int64)
        x1 = np.minimum(x0 + 1, W - 1)
        y1 = np.minimum(y0 + 1, H - 1)
        wx = (x - x0)[..., None]
        wy = (y - y0)[..., None]
        i00, i01 = src3[y0, x0], src3[y0, x1]
        i10, i11 = src3[y1, x0], src3[y1, x1]
        top = (1 - wx) * i00 + wx * i01
        bot = (1 - wx) * i10 + wx * i11
        m = valid[..., None]
        self.image = np.where(m, (1 - wy) * top + wy * bot, 0.0)
        self.d_du = np.where(m, (1 - wy) * (i01 - i00) + wy * (i11 - i10), 0.0)
        self.d_dv = np.where(m, bot - top, 0.0)
        self.valid = valid
        self.taps = (y0, x0, y1, x1, wx[..., 0], wy[..., 0])
        self.src_shape = src3.shape
        self.squeeze = np.ndim(src) == 2


def bilinear_sample(src, coords) -> WarpResult:
    """Sample ``src`` at continuous ``(u, v)`` coordinates.

    A coordinate whose 4-tap footprint leaves the image gives value 0 and
    mask 0.
    """
    b = _Bilinear(src, coords)
    img = b.image[..., 0] if b.squeeze else b.image
    return WarpResult(img, b.valid.astype(np.float64))


def bilinear_sample_vjp(src, coords, upstream) -> Tuple[np.ndarray, np.ndarray]:
    """Gradients of ``sum(upstream * bilinear_sample(src, coords).image)``.

    Returns ``(grad_src, grad_coords)``.
    """
    b = _Bilinear(src, coords)
    up = np.asarray(upstream, dtype=np.float64)
    if b.squeeze:
        up = up[..., None]
    check_same_shape(up, b.image, "upstream and sampled image")
    up = np.where(b.valid[..., None], up, 0.0)
    grad_coords = np.stack(
        [(up * b.d_du).sum(-1), (up * b.d_dv).sum(-1)], axis=-1
    )
    H, W, C = b.src_shape
    y0, x0, y1, x1, wx, wy = b.taps
    grad_src = np.zeros((H * W, C))
    for yy, xx, w in (
        (y0, x0, (1 - wx) * (1 - wy)),
        (y0, x1, wx * (1 - wy)),
        (y1, x0, (1 - wx) * wy),
        (y1, x1, wx * wy),
    ):
        flat = (yy * W + xx).reshape(-1)
        for c in range(C):
            grad_src[:, c] += np.bincount(flat, weights=(w * up[..., c]).reshape(-1), minlength=H * W)
    grad_src = grad_src.reshape(H, W, C)
    if b.squeeze:
        grad_src = grad_src[..., 0]
    return grad_src, grad_coords


# -- SSIM --------------------------------------------------------------------


def _box_sum(x: np.ndarray, k: int) -> np.ndarray:
    """Sum over a (2k+1)^2 window around each pixel, zero outside the image."""
    H, W = x.shape[:2]
    pad = [(k, k), (k, k)] + [(0, 0)] * (x.ndim - 2)
    xp = np.pad(x, pad)
    out = np.zeros_like(x)
    for dy in range(2 * k + 1):
        for dx in range(2 * k + 1):
            out += xp[dy : dy + H, dx : dx + W]
    return out


class _Ssim:
    def __init__(self, a, b, cfg: SsimConfig):
        a3, b3 = _hwc(a), _hwc(b)
        check_same_shape(a3, b3, "SSIM inputs")
        k = cfg.window // 2
        H, W, C = a3.shape
        n = _box_sum(np.ones((H, W, 1)), k)
        mu_a = _box_sum(a3, k) / n
        mu_b = _box_sum(b3, k) / n
        var_a = _box_sum(a3 * a3, k) / n - mu_a * mu_a
        var_b = _box_sum(b3 * b3, k) / n - mu_b * mu_b
        cov = _box_sum(a3 * b3, k) / n - mu_a * mu_b
        n1 = 2 * mu_a * mu_b + cfg.c1
        n2 = 2 * cov + cfg.c2
        d1 = mu_a * mu_a + mu_b * mu_b + cfg.c1
        d2 = var_a + var_b + cfg.c2
        self.per_channel = (n1 * n2) / (d1 * d2)
        self.map = self.per_channel.mean(axis=-1)
        self.__dict__.update(
            a=a3, b=b3, k=k, n=n, mu_a=mu_a, mu_b=mu_b, n1=n1, n2=n2, d1=d1, d2=d2,
            squeeze=np.ndim(a) == 2,
        )

    def vjp(self, weights):
        """Gradients of ``sum(weights * ssim_map)`` w.r.t. both images."""
        w = np.asarray(weights, dtype=np.float64)[..., None] / self.a.shape[-1]
        S, d1d2 = self.per_channel, self.d1 * self.d2
        g_cov = w * 2 * self.n1 / d1d2
        g_var = -w * S / self.d2
        g_mu_a = w * (2 * self.mu_b * self.n2 / d1d2 - 2 * S * self.mu_a / self.d1)
        g_mu_b = w * (2 * self.mu_a * self.n2 / d1d2 - 2 * S * self.mu_b / self.d1)
        k, n = self.k, self.n
        # raw moments: mean(a), mean(a^2), mean(ab), ...
        m_a = _box_sum((g_mu_a - 2 * g_var * self.mu_a - g_cov * self.mu_b) / n, k)
        m_b = _box_sum((g_mu_b - 2 * g_var * self.mu_b - g_cov * self.mu_a) / n, k)
        m_sq = _box_sum(g_var / n, k)
        m_ab = _box_sum(g_cov / n, k)
        ga = m_a + 2 * self.a * m_sq + self.b * m_ab
        gb = m_b + 2 * self.b * m_sq + self.a * m_ab
        if self.squeeze:
            return ga[..., 0], gb[..., 0]
        return ga, gb


def ssim(a, b, cfg: SsimConfig = SsimConfig()) -> np.ndarray:
    """Per-pixel SSIM over uniform windows cropped at the border, channel-averaged."""
    return _Ssim(a, b, cfg).map


def ssim_vjp(a, b, weights, cfg: SsimConfig = SsimConfig()):
    return _Ssim(a, b, cfg).vjp(weights)


# -- photometric error -------------------------------------------------------


def pe_map(a, b, alpha: float = ALPHA, cfg: SsimConfig = SsimConfig()) -> np.ndarray:
    s = _Ssim(a, b, cfg)
    l1 = np.abs(s.a - s.b).mean(axis=-1)
    return alpha / 2 * (1 - s.map) + (1 - alpha) * l1


def pe_vjp(a, b, weights, alpha: float = ALPHA, cfg: SsimConfig = SsimConfig()):
    """Gradients of ``sum(weights * pe_map(a, b))``; ``|.|`` has subgradient 0 at a tie."""
    s = _Ssim(a, b, cfg)
    w = np.asarray(weights, dtype=np.float64)
    ga, gb = s.vjp(w)
    l1 = (1 - alpha) * np.sign(s.a - s.b) * (w[..., None] / s.a.shape[-1])
    if s.squeeze:
        l1 = l1[..., 0]
    return -alpha / 2 * ga + l1, -alpha / 2 * gb - l1


def photometric_error(
    a,
    b,
    alpha: float = ALPHA,
    cfg: SsimConfig = SsimConfig(),
    mask=None,
) -> GradPair:
    """Mean photometric error over ``mask`` with gradients w.r.t. ``a`` and ``b``."""
    pmap = pe_map(a, b, alpha, cfg)
    m = np.ones(pmap.shape) if mask is None else np.asarray(mask, dtype=np.float64)
    check_same_shape(m, pmap, "mask and image")
    count = m.sum()
    if count == 0:
        return GradPair(0.0, {"a": np.zeros(np.shape(a)), "b": np.zeros(np.shape(b))}, {"map": pmap})
    w = m / count
    ga, gb = pe_vjp(a, b, w, alpha, cfg)
    return GradPair(float((pmap * w).sum()), {"a": ga, "b": gb}, {"map": pmap})


# -- self-supervised loss ----------------------------------------------------


class ViewSynthesis:
    """Warp every source view into frame t and compare with ``I_t``.

    ``map`` holds the per-pixel photometric error after reducing over the
    source views (zero where no view is valid) and ``valid`` marks pixels
    with at least one in-bounds warp.
    """

    def __init__(
        self,
        image_t,
        sources: Sequence[Tuple[np.ndarray, PoseSE3]],
        depth,
        cam: CameraIntrinsics,
        alpha: float = ALPHA,
        cfg: SsimConfig = SsimConfig(),
        reduction: str = "min",
    ):
        if reduction not in REDUCTIONS:
            raise InvalidShape(f"reduction must be one of {REDUCTIONS}")
        self.image_t = as_grid(image_t, "image_t")
        depth = as_grid(depth, "depth")
        if self.image_t.shape[:2] != depth.shape:
            raise InvalidShape("image and depth differ in spatial shape")
        self.alpha, self.cfg = alpha, cfg
        self.views = []
        for img, pose in sources:
            img = as_grid(img, "source image")
            check_same_shape(img, self.image_t, "source and target images")
            coords, jac, _ = reproject_coords_with_grad(depth, pose, cam)
            warp = _Bilinear(img, coords)
            warped = warp.image[..., 0] if warp.squeeze else warp.image
            pmap = pe_map(self.image_t, warped, alpha, cfg)
            self.views.append((warp, warped, jac, pmap))
        masks = np.stack([v[0].valid for v in self.views])
        maps = np.stack([v[3] for v in self.views])
        self.valid = masks.any(axis=0)
        if reduction == "min":
            masked = np.where(masks, maps, np.inf)
            choice = masked.argmin(axis=0)
            self.select = (np.arange(len(self.views))[:, None, None] == choice) & masks
        else:
            cnt = np.maximum(masks.sum(axis=0), 1)
            self.select = masks / cnt
        self.map = np.where(self.valid, (maps * self.select).sum(axis=0), 0.0)

    def depth_vjp(self, weights) -> np.ndarray:
        """Gradient of ``sum(weights * map)`` w.r.t. the depth grid."""
        weights = np.asarray(weights, dtype=np.float64)
        grad = np.zeros(weights.shape)
        for (warp, warped, jac, _), sel in zip(self.views, self.select):
            w = weights * sel
            if not w.any():
                continue
            _, g_img = pe_vjp(self.image_t, warped, w, self.alpha, self.cfg)
            if g_img.ndim == 2:
                g_img = g_img[..., None]
            g_u = (g_img * warp.d_du).sum(-1)
            g_v = (g_img * warp.d_dv).sum(-1)
            grad += np.where(warp.valid, g_u * jac[..., 0] + g_v * jac[..., 1], 0.0)
        return grad


def self_supervised_loss(
    image_t,
    image_prev,
    image_next,
    depth,
    pose_to_prev: PoseSE3,
    pose_to_next: PoseSE3,
    cam: CameraIntrinsics,
    alpha: float = ALPHA,
    cfg: SsimConfig = SsimConfig(),
    reduction: str = "min",
) -> GradPair:
    """Photometric reconstruction loss of frame t from its two neighbors.

    The scalar is the mean of the reduced per-pixel error over pixels with
    at least one valid warp; the gradient is w.r.t. ``depth``.
    """
    vs = ViewSynthesis(
        image_t,
        [(image_prev, pose_to_prev), (image_next, pose_to_next)],
        depth,
        cam,
        alpha,
        cfg,
        reduction,
    )
    count = vs.valid.sum()
    if count == 0:
        return GradPair(0.0, {"depth": np.zeros(vs.map.shape)}, {"map": vs.map, "valid": vs.valid})
    w = vs.valid / count
    value = float((vs.map * w).sum())
    return GradPair(value, {"depth": vs.depth_vjp(w)}, {"map": vs.map, "valid": vs.valid})
