"""Scale-aware disparity to depth mapping."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidDisparity, InvalidShape
from .grid import as_grid

__all__ = [
    "DepthParamConfig",
    "depth_to_disparity",
    "disparity_to_depth",
    "disparity_to_depth_grad",
]


@dataclass(frozen=True)
class DepthParamConfig:
    """Disparity range (1/m) and the prior scale multiplying depth."""

    sigma_min: float = 0.01
    sigma_max: float = 10.0
    d_prior: float = 1.0

    def __post_init__(self):
        if not 0 < self.sigma_min < self.sigma_max:
            raise InvalidShape(
                f"need 0 < sigma_min < sigma_max, got {self.sigma_min}, {self.sigma_max}"
            )
        if not self.d_prior > 0:
            raise InvalidShape(f"d_prior must be positive, got {self.d_prior}")

    @property
    def depth_range(self):
        """Half-open ``(lo, hi]`` interval of reachable depths."""
        return self.d_prior / self.sigma_max, self.d_prior / self.sigma_min


def _check_disparity(x) -> np.ndarray:
    x = as_grid(x, "disparity")
    bad = ~((x >= 0.0) & (x < 1.0))
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise InvalidDisparity(f"disparity {x[idx]} at {idx} outside [0, 1)", index=idx)
    return x


def _denominator(x, cfg):
    return cfg.sigma_min + (cfg.sigma_max - cfg.sigma_min) * x


def disparity_to_depth(x, cfg: DepthParamConfig = DepthParamConfig()) -> np.ndarray:
    x = _check_disparity(x)
    return cfg.d_prior / _denominator(x, cfg)


def disparity_to_depth_grad(x, cfg: DepthParamConfig = DepthParamConfig()) -> np.ndarray:
    """Elementwise d(depth)/d(disparity); strictly negative."""
    x = _check_disparity(x)
    den = _denominator(x, cfg)
    return -cfg.d_prior * (cfg.sigma_max - cfg.sigma_min) / (den * den)


def depth_to_disparity(depth, cfg: DepthParamConfig = DepthParamConfig()) -> np.ndarray:
    """Inverse map, clipped into ``[0, 1)``."""
    depth = np.asarray(depth, dtype=np.float64)
    x = (cfg.d_prior / depth - cfg.sigma_min) / (cfg.sigma_max - cfg.sigma_min)
    return np.clip(x, 0.0, np.nextafter(1.0, 0.0))
