"""Depth smoothness, LiDAR supervision, their masked combination, detection
losses and depth evaluation metrics."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import EmptyGroundTruth, InvalidProbability, InvalidShape
from .grid import GradPair, as_grid, check_same_shape

__all__ = [
    "DepthMetrics",
    "MdWeights",
    "combined_md_loss",
    "depth_metrics",
    "focal_loss",
    "smooth_l1",
    "smoothness_loss",
    "supervised_depth_loss",
]

FOCAL_GAMMA = 2.0
FOCAL_ALPHA = 0.25
SMOOTH_L1_BETA = 1.0 / 9.0


@dataclass(frozen=True)
class MdWeights:
    lambda_m: float = 1.0
    lambda_d: float = 1.0

    def __post_init__(self):
        if self.lambda_m < 0 or self.lambda_d < 0:
            raise InvalidShape("MD weights must be nonnegative")


def _reduce(terms: np.ndarray, reduction: str):
    """Return (value, d value / d term) for 'mean' or 'sum'."""
    if reduction == "sum":
        return float(terms.sum()), 1.0
    if reduction == "mean":
        if terms.size == 0:
            return 0.0, 0.0
        return float(terms.mean()), 1.0 / terms.size
    raise InvalidShape(f"unknown reduction {reduction!r}")


def smoothness_loss(depth, image, reduction: str = "mean") -> GradPair:
    """Edge-aware first-order smoothness of a depth map.

    Forward differences along x and y, each weighted by ``exp(-|dI|)``
    where ``|dI|`` is the channel-mean absolute image difference. With
    ``mean`` the x and y terms are each averaged over their own valid
    positions and then added.
    """
    depth = as_grid(depth, "depth")
    image = as_grid(image, "image")
    if image.ndim == 2:
        image = image[..., None]
    if depth.ndim != 2 or image.shape[:2] != depth.shape:
        raise InvalidShape(f"depth {depth.shape} and image {image.shape} differ spatially")
    grad = np.zeros_like(depth)
    value = 0.0
    for axis in (1, 0):
        dd = np.diff(depth, axis=axis)
        wt = np.exp(-np.abs(np.diff(image, axis=axis)).mean(axis=-1))
        v, scale = _reduce(np.abs(dd) * wt, reduction)
        value += v
        g = np.sign(dd) * wt * scale
        # d|D[i+1]-D[i]| routes +g to i+1 and -g to i
        if axis == 1:
            grad[:, 1:] += g
            grad[:, :-1] -= g
        else:
            grad[1:, :] += g
            grad[:-1, :] -= g
    return GradPair(value, {"depth": grad})


def supervised_depth_loss(pred, lidar, reduction: str = "mean") -> GradPair:
    """L1 error against projected LiDAR depth on pixels with a return (> 0).

    ``extras['map']`` holds the per-pixel absolute error (zero off-mask).
    """
    pred = as_grid(pred, "pred")
    lidar = as_grid(lidar, "lidar")
    check_same_shape(pred, lidar, "prediction and LiDAR map")
    mask = lidar > 0
    diff = np.where(mask, lidar - pred, 0.0)
    amap = np.abs(diff)
    value, scale = _reduce(amap[mask], reduction)
    grad = -np.sign(diff) * scale
    return GradPair(value, {"pred": grad}, {"map": amap, "mask": mask})


def combined_md_loss(m_map, d_map, lidar, w: MdWeights = MdWeights()) -> GradPair:
    """Masked mix of per-pixel self-supervised and supervised losses.

    Pixels with a LiDAR return take ``lambda_d * d_map``, all others
    ``lambda_m * m_map``; the scalar is the mean over all pixels.
    """
    m_map = as_grid(m_map, "m_map")
    d_map = as_grid(d_map, "d_map")
    lidar = as_grid(lidar, "lidar")
    check_same_shape(m_map, d_map, "loss maps")
    check_same_shape(m_map, lidar, "loss map and LiDAR map")
    has_return = lidar > 0
    per_pixel = np.where(has_return, w.lambda_d * d_map, w.lambda_m * m_map)
    n = per_pixel.size
    g_m = np.where(has_return, 0.0, w.lambda_m / n)
    g_d = np.where(has_return, w.lambda_d / n, 0.0)
    return GradPair(float(per_pixel.mean()), {"m_map": g_m, "d_map": g_d}, {"map": per_pixel})


def focal_loss(p, y, alpha_f: float = FOCAL_ALPHA, gamma: float = FOCAL_GAMMA) -> GradPair:
    """``-alpha_f * (1 - p_t)**gamma * log(p_t)``, averaged; gradient w.r.t. ``p``."""
    p = as_grid(p, "p")
    y = np.asarray(y)
    check_same_shape(p, y.astype(np.float64), "probabilities and labels")
    if not np.all((p > 0) & (p < 1)):
        raise InvalidProbability("probabilities must lie strictly inside (0, 1)")
    if not np.all((y == 0) | (y == 1)):
        raise InvalidShape("labels must be 0 or 1")
    pos = y == 1
    pt = np.where(pos, p, 1 - p)
    q = 1 - pt
    log_pt = np.log(pt)
    terms = -alpha_f * q**gamma * log_pt
    # d/dpt of the term, then d pt / d p = +1 or -1
    if gamma == 0:
        d_pt = -alpha_f / pt
    else:
        d_pt = alpha_f * (gamma * q ** (gamma - 1) * log_pt - q**gamma / pt)
    n = terms.size
    grad = np.where(pos, d_pt, -d_pt) / n
    return GradPair(float(terms.mean()), {"p": grad}, {"map": terms})


def smooth_l1(pred, target, beta: float = SMOOTH_L1_BETA) -> GradPair:
    pred = as_grid(pred, "pred")
    target = as_grid(target, "target")
    check_same_shape(pred, target, "prediction and target")
    if not beta > 0:
        raise InvalidShape("beta must be positive")
    x = pred - target
    ax = np.abs(x)
    quad = ax < beta
    terms = np.where(quad, 0.5 * x * x / beta, ax - 0.5 * beta)
    grad = np.where(quad, x / beta, np.sign(x)) / terms.size
    return GradPair(float(terms.mean()), {"pred": grad}, {"map": terms})


@dataclass
class DepthMetrics:
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    delta1: float
    delta2: float
    delta3: float

    def to_dict(self):
        return asdict(self)


def depth_metrics(pred, gt) -> DepthMetrics:
    """Standard monocular depth error metrics over pixels with ``gt > 0``."""
    pred = as_grid(pred, "pred")
    gt = as_grid(gt, "gt")
    check_same_shape(pred, gt, "prediction and ground truth")
    mask = gt > 0
    if not mask.any():
        raise EmptyGroundTruth("ground truth has no positive pixels")
    p, g = pred[mask], gt[mask]
    if np.any(p <= 0):
        raise InvalidShape("predicted depth must be positive on the evaluation mask")
    ratio = np.maximum(p / g, g / p)
    diff = p - g
    return DepthMetrics(
        abs_rel=float(np.mean(np.abs(diff) / g)),
        sq_rel=float(np.mean(diff * diff / g)),
        rmse=float(np.sqrt(np.mean(diff * diff))),
        rmse_log=float(np.sqrt(np.mean((np.log(p) - np.log(g)) ** 2))),
        delta1=float(np.mean(ratio < 1.25)),
        delta2=float(np.mean(ratio < 1.25**2)),
        delta3=float(np.mean(ratio < 1.25**3)),
    )
