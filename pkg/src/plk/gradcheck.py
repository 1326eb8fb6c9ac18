"""Seeded analytic-vs-central-difference checks for every differentiable op.

Each check builds a small random instance, evaluates the analytic
gradient, and compares it with :func:`finite_diff_grad`. Elements where
the op is not smooth (L1 kinks, bilinear lattice lines, bin faces) are
masked out of both sides.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, List

import numpy as np

from .camera import CameraIntrinsics, PoseSE3, backproject, backproject_vjp
from .depth import DepthParamConfig, disparity_to_depth, disparity_to_depth_grad
from .fit import md_objective
from .grid import finite_diff_grad, grad_check
from .losses import (
    MdWeights,
    combined_md_loss,
    focal_loss,
    smooth_l1,
    smoothness_loss,
    supervised_depth_loss,
)
from .photometric import (
    SsimConfig,
    ViewSynthesis,
    bilinear_sample,
    bilinear_sample_vjp,
    pe_map,
    photometric_error,
    reproject_coords,
    self_supervised_loss,
    ssim,
    ssim_vjp,
)
from .scene import SyntheticScene
from .softquant import VoxelGridSpec, bev_flatten, bev_flatten_grad, soft_quantize, soft_quantize_grad

__all__ = ["OPS", "TrialResult", "run_gradcheck", "worker_count"]

H, W = 12, 16
LATTICE_EPS = 1e-3
REL_TOL = 1e-4
ABS_TOL = 1e-7


@dataclass
class TrialResult:
    op: str
    trial: int
    passed: bool
    max_abs_error: float
    max_rel_error: float
    worst: str

    def line(self) -> str:
        status = "ok  " if self.passed else "FAIL"
        return (
            f"{status} {self.op} trial={self.trial} max_rel={self.max_rel_error:.3e} "
            f"max_abs={self.max_abs_error:.3e} worst={self.worst}"
        )


def _camera(h=H, w=W):
    return CameraIntrinsics(f=0.9 * w, cx=w / 2 - 0.7, cy=h / 2 - 0.4, width=w, height=h)


def _random_pose(rng, scale=0.3):
    axis = rng.normal(size=3)
    return PoseSE3.from_axis_angle(axis, rng.uniform(-0.03, 0.03), rng.uniform(-scale, scale, 3))


def _near_lattice(coords, h, w):
    x, y = coords[..., 0], coords[..., 1]
    frac = lambda a: np.abs(a - np.round(a))
    inside = (x >= LATTICE_EPS) & (x <= w - 1 - LATTICE_EPS) & (y >= LATTICE_EPS) & (y <= h - 1 - LATTICE_EPS)
    return (frac(x) < LATTICE_EPS) | (frac(y) < LATTICE_EPS) | ~inside


def _interior_points(rng, spec, n):
    """Points at least 1e-3 bin edges away from every assignment face."""
    lo = np.asarray(spec.origin)
    size = np.asarray(spec.bin_size)
    bins = np.asarray(spec.bins)
    idx = rng.integers(0, bins, size=(n, 3))
    frac = rng.uniform(1e-3, 1 - 1e-3, size=(n, 3))
    # also sample a few points outside the grid
    pts = lo + (idx + frac) * size
    outside = rng.random(n) < 0.05
    pts[outside] += bins * size * 2
    return pts


# -- individual checks: each returns {name: (analytic, numeric)} -------------


def _check_disparity(rng):
    cfg = DepthParamConfig(sigma_min=rng.uniform(0.01, 0.1), sigma_max=rng.uniform(1, 10), d_prior=rng.uniform(0.5, 3))
    x = rng.uniform(0.0, 0.95, (H, W))
    w = rng.normal(size=(H, W))
    f = lambda x: float((w * disparity_to_depth(x, cfg)).sum())
    return {"x": (w * disparity_to_depth_grad(x, cfg), finite_diff_grad(f, x))}


def _check_backproject(rng):
    cam = _camera()
    depth = rng.uniform(1, 20, (H, W))
    cloud = backproject(depth, cam)
    w = rng.normal(size=cloud.points.shape)
    f = lambda d: float((w * backproject(d, cam).points).sum())
    return {"depth": (backproject_vjp(cloud, cam, w), finite_diff_grad(f, depth))}


def _grid_spec(rng, neighborhood=None):
    bins = tuple(int(b) for b in rng.integers(2, 7, 3))
    size = tuple(rng.uniform(0.3, 1.5, 3))
    return VoxelGridSpec(
        origin=tuple(rng.uniform(-2, 2, 3)),
        bin_size=size,
        bins=bins,
        sigma=float(np.mean(size)) * rng.uniform(0.5, 1.5),
        neighborhood=neighborhood or ("faces6" if rng.random() < 0.5 else "full26"),
    )


def _check_soft_quantize(rng):
    spec = _grid_spec(rng)
    pts = _interior_points(rng, spec, int(rng.integers(20, 201)))
    up = rng.normal(size=spec.bins)
    f = lambda p: float((up * soft_quantize(p, spec)).sum())
    return {"points": (soft_quantize_grad(pts, spec, up), finite_diff_grad(f, pts))}


def _check_pl_chain(rng):
    """Depth map -> back-projection -> soft quantization, gradient w.r.t. depth."""
    cam = _camera()
    depth = rng.uniform(4, 12, (H, W))
    spec = VoxelGridSpec(origin=(-6, -5, 3), bin_size=(2.0, 2.0, 2.0), bins=(6, 5, 5),
                         neighborhood="faces6" if rng.random() < 0.5 else "full26")
    up = rng.normal(size=spec.bins)
    cloud = backproject(depth, cam)
    r = (cloud.points - np.asarray(spec.origin)) / np.asarray(spec.bin_size)
    # a pixel moves along its ray, so it is safe if its whole step stays off faces
    near_face = np.any(np.abs(r - np.round(r)) < 1e-3, axis=1)
    mask = np.ones((H, W), dtype=bool)
    mask[cloud.source_pixel[near_face, 1], cloud.source_pixel[near_face, 0]] = False
    g_pts = soft_quantize_grad(cloud, spec, up)
    analytic = np.where(mask, backproject_vjp(cloud, cam, g_pts), 0.0)
    f = lambda d: float((up * soft_quantize(backproject(d, cam), spec)).sum())
    return {"depth": (analytic, finite_diff_grad(f, depth, mask=mask))}


def _check_bev(rng):
    t = rng.uniform(0, 2, (4, 5, 3))
    out = {}
    for mode in ("max", "sum"):
        up = rng.normal(size=(4, 5))
        f = lambda t, mode=mode, up=up: float((up * bev_flatten(t, mode)).sum())
        out[mode] = (bev_flatten_grad(t, up, mode), finite_diff_grad(f, t))
    return out


def _check_smoothness(rng):
    depth = rng.uniform(1, 20, (H, W))
    img = rng.uniform(0, 1, (H, W, 3))
    res = smoothness_loss(depth, img)
    f = lambda d: smoothness_loss(d, img).value
    return {"depth": (res.grad["depth"], finite_diff_grad(f, depth))}


def _check_supervised(rng):
    pred = rng.uniform(1, 20, (H, W))
    lidar = np.where(rng.random((H, W)) < 0.3, rng.uniform(1, 20, (H, W)), 0.0)
    mask = np.abs(pred - lidar) > 1e-3
    res = supervised_depth_loss(pred, lidar)
    f = lambda p: supervised_depth_loss(p, lidar).value
    return {"pred": (np.where(mask, res.grad["pred"], 0), finite_diff_grad(f, pred, mask=mask))}


def _check_bilinear(rng):
    src = rng.uniform(0, 1, (H, W, 3))
    coords = np.stack([rng.uniform(-1, W, (H, W)), rng.uniform(-1, H, (H, W))], axis=-1)
    up = rng.normal(size=(H, W, 3))
    smooth = ~_near_lattice(coords, H, W)
    g_src, g_coords = bilinear_sample_vjp(src, coords, up)
    f_src = lambda s: float((up * bilinear_sample(s, coords).image).sum())
    f_crd = lambda c: float((up * bilinear_sample(src, c).image).sum())
    cmask = np.repeat(smooth[..., None], 2, axis=-1)
    return {
        "src": (g_src, finite_diff_grad(f_src, src)),
        "coords": (np.where(cmask, g_coords, 0), finite_diff_grad(f_crd, coords, mask=cmask)),
    }


def _check_ssim(rng):
    a = rng.uniform(0, 1, (8, 10, 3))
    b = rng.uniform(0, 1, (8, 10, 3))
    w = rng.normal(size=(8, 10))
    ga, gb = ssim_vjp(a, b, w)
    return {
        "a": (ga, finite_diff_grad(lambda x: float((w * ssim(x, b)).sum()), a)),
        "b": (gb, finite_diff_grad(lambda x: float((w * ssim(a, x)).sum()), b)),
    }


def _check_photometric(rng):
    a = rng.uniform(0, 1, (8, 10, 3))
    b = rng.uniform(0, 1, (8, 10, 3))
    cfg = SsimConfig(window=int(rng.choice([3, 5])))
    res = photometric_error(a, b, 0.85, cfg)
    return {
        "a": (res.grad["a"], finite_diff_grad(lambda x: pe_map(x, b, 0.85, cfg).mean(), a)),
        "b": (res.grad["b"], finite_diff_grad(lambda x: pe_map(a, x, 0.85, cfg).mean(), b)),
    }


def _random_views(rng):
    h, w = 10, 12
    cam = _camera(h, w)
    images = [rng.uniform(0, 1, (h, w, 3)) for _ in range(3)]
    depth = rng.uniform(3, 10, (h, w))
    poses = [_random_pose(rng), _random_pose(rng)]
    coords = [reproject_coords(depth, p, cam) for p in poses]
    # exclude pixels whose sample sits on a bilinear kink or the image edge
    mask = ~(_near_lattice(coords[0], h, w) | _near_lattice(coords[1], h, w))
    return cam, images, depth, poses, mask


def _ss_value(vs):
    # forward pass only; the analytic side goes through self_supervised_loss
    return float((vs.map * vs.valid).sum() / vs.valid.sum()) if vs.valid.any() else 0.0


def _check_self_supervised(rng):
    cam, (it, ip, inx), depth, (pp, pn), mask = _random_views(rng)
    reduction = "min" if rng.random() < 0.5 else "mean"
    f = lambda d: _ss_value(ViewSynthesis(it, [(ip, pp), (inx, pn)], d, cam, reduction=reduction))
    res = self_supervised_loss(it, ip, inx, depth, pp, pn, cam, reduction=reduction)
    return {"depth": (np.where(mask, res.grad["depth"], 0), finite_diff_grad(f, depth, mask=mask))}


def _check_combined_md(rng):
    m_map = rng.uniform(0, 1, (H, W))
    d_map = rng.uniform(0, 5, (H, W))
    lidar = np.where(rng.random((H, W)) < 0.4, rng.uniform(1, 20, (H, W)), 0.0)
    w = MdWeights(rng.uniform(0, 2), rng.uniform(0, 2))
    res = combined_md_loss(m_map, d_map, lidar, w)
    return {
        "m_map": (res.grad["m_map"], finite_diff_grad(lambda x: combined_md_loss(x, d_map, lidar, w).value, m_map)),
        "d_map": (res.grad["d_map"], finite_diff_grad(lambda x: combined_md_loss(m_map, x, lidar, w).value, d_map)),
    }


def _check_md_chain(rng):
    """Full MD objective (warp + pe + masked L1) w.r.t. depth."""
    cam, (it, ip, inx), depth, (pp, pn), mask = _random_views(rng)
    lidar = np.where(rng.random(depth.shape) < 0.3, rng.uniform(3, 10, depth.shape), 0.0)
    mask &= np.abs(lidar - depth) > 1e-3
    scene = SyntheticScene(it, ip, inx, lidar, pp, pn, cam, lidar)
    w = MdWeights(rng.uniform(0.5, 2), rng.uniform(0.5, 2))
    _, g, _ = md_objective(depth, scene, "MD", w)

    def f(d):
        vs = ViewSynthesis(it, [(ip, pp), (inx, pn)], d, cam)
        return combined_md_loss(vs.map, np.where(lidar > 0, np.abs(lidar - d), 0.0), lidar, w).value

    return {"depth": (np.where(mask, g, 0), finite_diff_grad(f, depth, mask=mask))}


def _check_focal(rng):
    p = rng.uniform(0.02, 0.98, (H, W))
    y = (rng.random((H, W)) < 0.3).astype(np.float64)
    gamma = float(rng.choice([0.0, 0.5, 1.0, 2.0]))
    alpha = rng.uniform(0.1, 1.0)
    res = focal_loss(p, y, alpha, gamma)
    return {"p": (res.grad["p"], finite_diff_grad(lambda q: focal_loss(q, y, alpha, gamma).value, p))}


def _check_smooth_l1(rng):
    beta = rng.uniform(0.05, 1.0)
    pred = rng.normal(size=(H, W))
    target = rng.normal(size=(H, W))
    # keep clear of the |x| = beta joint and of x = 0
    x = pred - target
    mask = (np.abs(np.abs(x) - beta) > 1e-3) & (np.abs(x) > 1e-3)
    res = smooth_l1(pred, target, beta)
    return {
        "pred": (
            np.where(mask, res.grad["pred"], 0),
            finite_diff_grad(lambda q: smooth_l1(q, target, beta).value, pred, mask=mask),
        )
    }


OPS: Dict[str, Callable] = {
    "disparity_to_depth": _check_disparity,
    "backproject": _check_backproject,
    "soft_quantize": _check_soft_quantize,
    "pl_chain": _check_pl_chain,
    "bev_flatten": _check_bev,
    "smoothness_loss": _check_smoothness,
    "supervised_depth_loss": _check_supervised,
    "bilinear_sample": _check_bilinear,
    "ssim": _check_ssim,
    "photometric_error": _check_photometric,
    "self_supervised_loss": _check_self_supervised,
    "combined_md_loss": _check_combined_md,
    "md_objective": _check_md_chain,
    "focal_loss": _check_focal,
    "smooth_l1": _check_smooth_l1,
}


def run_trial(op: str, seed: int, trial: int, rel_tol=REL_TOL, abs_tol=ABS_TOL) -> TrialResult:
    rng = np.random.default_rng([seed, trial])
    pairs = OPS[op](rng)
    passed, max_abs, max_rel, worst, worst_excess = True, 0.0, 0.0, "-", -np.inf
    for name, (analytic, numeric) in pairs.items():
        rep = grad_check(analytic, numeric, rel_tol, abs_tol)
        passed &= rep.passed
        max_abs = max(max_abs, rep.max_abs_error)
        max_rel = max(max_rel, rep.max_rel_error)
        if rep.worst_index:
            i = rep.worst_index
            excess = abs(analytic[i] - numeric[i]) - (abs_tol + rel_tol * max(abs(analytic[i]), abs(numeric[i])))
            if excess > worst_excess:
                worst_excess, worst = excess, f"{name}{list(i)}"
    return TrialResult(op, trial, bool(passed), max_abs, max_rel, worst)


def worker_count() -> int:
    """Worker threads from ``PLK_THREADS`` (0 or unset = one per CPU)."""
    raw = os.environ.get("PLK_THREADS", "0").strip() or "0"
    n = int(raw)
    if n < 0:
        raise ValueError("PLK_THREADS must be >= 0")
    return n if n > 0 else (os.cpu_count() or 1)


def run_gradcheck(op: str, seed: int = 0, trials: int = 20, threads: int | None = None) -> List[TrialResult]:
    """Run ``trials`` seeded checks of ``op``. Results are in trial order."""
    if op not in OPS:
        raise KeyError(op)
    threads = worker_count() if threads is None else threads
    if threads <= 1:
        return [run_trial(op, seed, t) for t in range(trials)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda t: run_trial(op, seed, t), range(trials)))
