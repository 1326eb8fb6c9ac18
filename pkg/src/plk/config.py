"""JSON run configuration: one section per library config dataclass."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional

from .camera import CameraIntrinsics
from .depth import DepthParamConfig
from .errors import FormatError, PLKError
from .fit import FitConfig
from .losses import MdWeights
from .photometric import ALPHA, SsimConfig
from .softquant import VoxelGridSpec

__all__ = ["RunConfig", "SceneParams", "load_run_config", "parse_section"]


@dataclass(frozen=True)
class SceneParams:
    height: int = 48
    width: int = 64
    baseline: float = 0.5
    seed: int = 0
    plane_depth: float = 10.0
    near_depth: float = 8.0
    far_depth: float = 16.0
    dense_lidar: bool = False


@dataclass(frozen=True)
class RunConfig:
    depth: DepthParamConfig = field(default_factory=DepthParamConfig)
    grid: Optional[VoxelGridSpec] = None
    camera: Optional[CameraIntrinsics] = None
    ssim: SsimConfig = field(default_factory=SsimConfig)
    md_weights: MdWeights = field(default_factory=MdWeights)
    fit: FitConfig = field(default_factory=FitConfig)
    scene: SceneParams = field(default_factory=SceneParams)
    alpha: float = ALPHA

    def to_dict(self):
        return dataclasses.asdict(self)


_SECTIONS = {
    "depth": DepthParamConfig,
    "grid": VoxelGridSpec,
    "camera": CameraIntrinsics,
    "ssim": SsimConfig,
    "md_weights": MdWeights,
    "fit": FitConfig,
    "scene": SceneParams,
}


def parse_section(cls, data, path=None, where=""):
    """Build dataclass ``cls`` from a dict, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise FormatError(f"section {where or cls.__name__} must be a JSON object", path=path, offset=0)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise FormatError(f"unknown key(s) {unknown} in {where or cls.__name__}", path=path, offset=0)
    try:
        return cls(**data)
    except (PLKError, TypeError, ValueError) as exc:
        raise FormatError(f"invalid {where or cls.__name__}: {exc}", path=path, offset=0) from None


def load_run_config(data: dict, path=None) -> RunConfig:
    if not isinstance(data, dict):
        raise FormatError("config must be a JSON object", path=path, offset=0)
    unknown = sorted(set(data) - set(_SECTIONS) - {"alpha"})
    if unknown:
        raise FormatError(f"unknown top-level key(s) {unknown}", path=path, offset=0)
    kwargs = {k: parse_section(_SECTIONS[k], v, path, k) for k, v in data.items() if k in _SECTIONS}
    if "alpha" in data:
        alpha = data["alpha"]
        if not isinstance(alpha, (int, float)) or not 0 <= alpha <= 1:
            raise FormatError("alpha must be a number in [0, 1]", path=path, offset=0)
        kwargs["alpha"] = float(alpha)
    return RunConfig(**kwargs)
