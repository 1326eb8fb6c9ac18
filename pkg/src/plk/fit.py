"""Per-pixel disparity fitting on synthetic scenes.

The optimization variable is a disparity grid in [0, 1); every loss sees
depth only through the scale-aware disparity mapping.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from .camera import PoseSE3
from .depth import DepthParamConfig, depth_to_disparity, disparity_to_depth, disparity_to_depth_grad
from .errors import DivergedFit, EmptyGroundTruth, InvalidShape
from .losses import (
    DepthMetrics,
    MdWeights,
    combined_md_loss,
    depth_metrics,
    smoothness_loss,
    supervised_depth_loss,
)
from .photometric import ALPHA, SsimConfig, ViewSynthesis
from .scene import SyntheticScene

__all__ = [
    "Adam",
    "FitConfig",
    "FitResult",
    "calibrate_prior",
    "fit_depth",
    "md_objective",
    "with_dense_lidar",
]

MODES = ("M", "D", "MD")
X_MAX = 1.0 - 1e-6


@dataclass(frozen=True)
class FitConfig:
    mode: str = "D"
    steps: int = 500
    learning_rate: float = 1e-3
    smoothness_weight: float = 1e-3
    adam_betas: Tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    seed: int = 0
    # "clamp" keeps disparity in [0, 1 - 1e-6] by clipping after each step;
    # "sigmoid" optimizes an unconstrained logit instead
    parameterization: str = "clamp"
    reduction: str = "min"
    # "prior": neighbor translations are unit-scale and multiplied by d_prior,
    # as for up-to-scale monocular ego-motion; "metric": used as given
    translation_scale: str = "prior"
    init_jitter: float = 0.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidShape(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.steps < 1:
            raise InvalidShape("steps must be >= 1")
        if self.learning_rate < 0:
            raise InvalidShape("learning_rate must be nonnegative")
        if self.parameterization not in ("clamp", "sigmoid"):
            raise InvalidShape(f"unknown parameterization {self.parameterization!r}")
        if self.translation_scale not in ("prior", "metric"):
            raise InvalidShape(f"unknown translation_scale {self.translation_scale!r}")
        object.__setattr__(self, "adam_betas", tuple(float(b) for b in self.adam_betas))


class Adam:
    def __init__(self, shape, lr=1e-2, betas=(0.9, 0.999), eps=1e-8):
        self.lr, self.eps = lr, eps
        self.b1, self.b2 = betas
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0

    def step(self, param: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        m_hat = self.m / (1 - self.b1**self.t)
        v_hat = self.v / (1 - self.b2**self.t)
        return param - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class FitResult:
    disparity: np.ndarray
    depth: np.ndarray
    loss_trace: List[float]
    metrics: DepthMetrics
    median_abs_rel: float
    extras: dict = field(default_factory=dict)

    def metrics_dict(self):
        d = self.metrics.to_dict()
        d["median_abs_rel"] = self.median_abs_rel
        d["final_loss"] = self.loss_trace[-1]
        d["median_depth"] = float(np.median(self.depth))
        return d


def _scaled_pose(pose: PoseSE3, s: float) -> PoseSE3:
    return pose if s == 1.0 else PoseSE3(pose.R, pose.t * s)


def md_objective(
    depth,
    scene: SyntheticScene,
    mode: str,
    weights: MdWeights = MdWeights(),
    alpha: float = ALPHA,
    ssim_cfg: SsimConfig = SsimConfig(),
    reduction: str = "min",
    translation_scale: float = 1.0,
):
    """Data term for one mode. Returns ``(value, d value / d depth, parts)``.

    ``parts`` holds the per-pixel loss maps; for MD it also carries the
    per-branch depth gradients so callers can see how the LiDAR mask splits them.
    """
    depth = np.asarray(depth, dtype=np.float64)
    parts = {}
    if mode in ("M", "MD"):
        vs = ViewSynthesis(
            scene.image_t,
            [
                (scene.image_prev, _scaled_pose(scene.pose_to_prev, translation_scale)),
                (scene.image_next, _scaled_pose(scene.pose_to_next, translation_scale)),
            ],
            depth,
            scene.cam,
            alpha,
            ssim_cfg,
            reduction,
        )
    if mode in ("D", "MD") and not np.any(scene.lidar > 0):
        raise EmptyGroundTruth("mode D/MD needs LiDAR returns")
    if mode == "M":
        count = vs.valid.sum()
        if count == 0:
            return 0.0, np.zeros_like(depth), parts
        w = vs.valid / count
        parts["m_map"] = np.where(vs.valid, vs.map, 0.0)
        return float((vs.map * w).sum()), vs.depth_vjp(w), parts
    d_loss = supervised_depth_loss(depth, scene.lidar)
    if mode == "D":
        parts["d_map"] = d_loss.extras["map"]
        return d_loss.value, d_loss.grad["pred"], parts
    # per-pixel D map is |D - D_hat| on returns; its derivative is -sign(D - D_hat)
    d_map = d_loss.extras["map"]
    d_local = -np.sign(np.where(scene.lidar > 0, scene.lidar - depth, 0.0))
    md = combined_md_loss(vs.map, d_map, scene.lidar, weights)
    g_m = vs.depth_vjp(md.grad["m_map"])
    g_d = md.grad["d_map"] * d_local
    parts.update(m_branch=g_m, d_branch=g_d, m_map=vs.map, d_map=d_map,
                 g_m_map=md.grad["m_map"], g_d_map=md.grad["d_map"])
    return md.value, g_m + g_d, parts


def _init_disparity(shape, depth_cfg: DepthParamConfig, fit: FitConfig):
    lo, hi = depth_cfg.depth_range
    x = np.full(shape, float(depth_to_disparity(0.5 * (lo + hi), depth_cfg)))
    if fit.init_jitter > 0:
        rng = np.random.default_rng(fit.seed)
        x = x * (1 + fit.init_jitter * rng.uniform(-1, 1, shape))
    return np.clip(x, 0.0, X_MAX)


def _logit(x):
    x = np.clip(x / X_MAX, 1e-12, 1 - 1e-12)
    return np.log(x) - np.log1p(-x)


def _sigmoid(z):
    return X_MAX / (1.0 + np.exp(-z))


def fit_depth(
    scene: SyntheticScene,
    depth_cfg: DepthParamConfig = DepthParamConfig(),
    fit: FitConfig = FitConfig(),
    weights: MdWeights = MdWeights(),
    alpha: float = ALPHA,
    ssim_cfg: SsimConfig = SsimConfig(),
) -> FitResult:
    """Fit a disparity grid with Adam so the mode's loss is minimized."""
    shape = scene.gt_depth.shape
    x = _init_disparity(shape, depth_cfg, fit)
    sigmoid = fit.parameterization == "sigmoid"
    param = _logit(x) if sigmoid else x
    opt = Adam(shape, fit.learning_rate, fit.adam_betas, fit.adam_eps)
    t_scale = depth_cfg.d_prior if fit.translation_scale == "prior" else 1.0
    trace = []
    for it in range(fit.steps):
        depth = disparity_to_depth(x, depth_cfg)
        value, g_depth, _ = md_objective(
            depth, scene, fit.mode, weights, alpha, ssim_cfg, fit.reduction, t_scale
        )
        if fit.smoothness_weight:
            sm = smoothness_loss(depth, scene.image_t)
            value += fit.smoothness_weight * sm.value
            g_depth = g_depth + fit.smoothness_weight * sm.grad["depth"]
        if not np.isfinite(value):
            raise DivergedFit(f"loss became non-finite at iteration {it}", iteration=it)
        trace.append(float(value))
        g_x = g_depth * disparity_to_depth_grad(x, depth_cfg)
        if sigmoid:
            g_param = g_x * x * (1 - x / X_MAX)
            param = opt.step(param, g_param)
            x = _sigmoid(param)
        else:
            param = np.clip(opt.step(param, g_x), 0.0, X_MAX)
            x = param
    depth = disparity_to_depth(x, depth_cfg)
    rel = np.abs(depth - scene.gt_depth) / scene.gt_depth
    return FitResult(
        disparity=x,
        depth=depth,
        loss_trace=trace,
        metrics=depth_metrics(depth, scene.gt_depth),
        median_abs_rel=float(np.median(rel)),
    )


def calibrate_prior(pred_depth, lidar) -> float:
    """Median of ``lidar / pred`` over pixels with a return.

    Multiplying ``d_prior`` by this factor rescales predictions onto the
    LiDAR scale.
    """
    pred = np.asarray(pred_depth, dtype=np.float64)
    lidar = np.asarray(lidar, dtype=np.float64)
    if pred.shape != lidar.shape:
        raise InvalidShape("prediction and LiDAR shapes differ")
    mask = lidar > 0
    if not mask.any():
        raise EmptyGroundTruth("no LiDAR returns to calibrate against")
    return float(np.median(lidar[mask] / pred[mask]))


def with_dense_lidar(scene: SyntheticScene) -> SyntheticScene:
    return dataclasses.replace(scene, lidar=scene.gt_depth.copy())
