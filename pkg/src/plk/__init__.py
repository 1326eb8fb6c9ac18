"""Differentiable pseudo-LiDAR kernels in NumPy.

Scale-aware disparity to depth, back-projection to point clouds, soft
voxel occupancy, view synthesis with SSIM photometric error, the losses
that tie them together, and an Adam fit over synthetic scenes. Every
differentiable op ships its analytic gradient; :mod:`plk.gradcheck`
compares each against central differences.
"""

from .camera import (
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
from .depth import DepthParamConfig, depth_to_disparity, disparity_to_depth, disparity_to_depth_grad
from .errors import *  # noqa: F401,F403
from .fit import FitConfig, FitResult, calibrate_prior, fit_depth, md_objective
from .grid import GradPair, GradReport, finite_diff_grad, grad_check
from .losses import (
    DepthMetrics,
    MdWeights,
    combined_md_loss,
    depth_metrics,
    focal_loss,
    smooth_l1,
    smoothness_loss,
    supervised_depth_loss,
)
from .photometric import (
    SsimConfig,
    WarpResult,
    bilinear_sample,
    photometric_error,
    reproject_coords,
    self_supervised_loss,
    ssim,
)
from .scene import SyntheticScene, make_scene
from .softquant import VoxelGridSpec, assign_bins, bev_flatten, soft_quantize, soft_quantize_grad

__version__ = "0.1.0"
