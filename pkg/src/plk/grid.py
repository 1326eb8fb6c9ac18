"""Dense float grids and the central-difference gradient oracle.

A grid is a C-contiguous ``float64`` numpy array. Spatial extents come
first, channels last; single-channel grids drop the channel axis, so a
depth map is ``(H, W)`` and an RGB image is ``(H, W, 3)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Sequence, Union

import numpy as np

from .errors import InvalidShape, OracleFailure

__all__ = [
    "GradPair",
    "GradReport",
    "as_grid",
    "check_same_shape",
    "finite_diff_grad",
    "grad_check",
    "grid_new",
]


@dataclass
class GradPair:
    """A value together with gradients w.r.t. named inputs."""

    value: Union[float, np.ndarray]
    grad: Dict[str, np.ndarray] = field(default_factory=dict)
    extras: Dict[str, np.ndarray] = field(default_factory=dict)

    def __float__(self):
        return float(self.value)


@dataclass
class GradReport:
    passed: bool
    max_abs_error: float
    max_rel_error: float
    worst_index: tuple
    n_failed: int

    def __bool__(self):
        return self.passed


def grid_new(dims: Sequence[int], channels: int = 1, fill: float = 0.0) -> np.ndarray:
    dims = tuple(int(d) for d in dims)
    if not 1 <= len(dims) <= 3:
        raise InvalidShape(f"grids have 1 to 3 spatial dims, got {len(dims)}")
    if any(d < 1 for d in dims) or channels < 1:
        raise InvalidShape(f"extents must be positive, got dims={dims} channels={channels}")
    shape = dims if channels == 1 else dims + (int(channels),)
    return np.full(shape, float(fill), dtype=np.float64)


def as_grid(x, name: str = "grid") -> np.ndarray:
    """Convert to a contiguous float64 array, rejecting non-finite values."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.size and not np.all(np.isfinite(arr)):
        bad = tuple(int(i) for i in np.unravel_index(int(np.argmin(np.isfinite(arr))), arr.shape))
        raise InvalidShape(f"{name} holds a non-finite value at {bad}")
    return arr


def check_same_shape(a: np.ndarray, b: np.ndarray, what: str = "inputs") -> None:
    if a.shape != b.shape:
        raise InvalidShape(f"{what} differ in shape: {a.shape} vs {b.shape}")


def finite_diff_grad(
    f: Callable[[np.ndarray], float],
    x: np.ndarray,
    h: float = 1e-5,
    relative: bool = True,
    mask: np.ndarray | None = None,
) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x``.

    With ``relative`` the step for element i is ``h * max(1, |x_i|)``.
    Elements where ``mask`` is False are skipped and left at zero.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    x = np.array(x, dtype=np.float64, copy=True)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    mflat = None if mask is None else np.asarray(mask, dtype=bool).reshape(-1)
    for i in range(flat.size):
        if mflat is not None and not mflat[i]:
            continue
        x0 = flat[i]
        step = h * max(1.0, abs(x0)) if relative else h
        flat[i] = x0 + step
        fp = float(f(x))
        flat[i] = x0 - step
        fm = float(f(x))
        flat[i] = x0
        if not (np.isfinite(fp) and np.isfinite(fm)):
            idx = tuple(int(j) for j in np.unravel_index(i, x.shape))
            raise OracleFailure(f"function is non-finite near index {idx}", index=idx)
        # the actually representable step, not the nominal one
        gflat[i] = (fp - fm) / ((x0 + step) - (x0 - step))
    return g


def grad_check(
    analytic: np.ndarray,
    numeric: np.ndarray,
    rel_tol: float = 1e-4,
    abs_tol: float = 1e-7,
) -> GradReport:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    check_same_shape(a, n, "analytic and numeric gradients")
    if a.size == 0:
        return GradReport(True, 0.0, 0.0, (), 0)
    err = np.abs(a - n)
    scale = np.maximum(np.abs(a), np.abs(n))
    bound = abs_tol + rel_tol * scale
    ok = err <= bound
    # worst offender by how far past its bound it sits
    excess = err - bound
    worst = np.unravel_index(int(np.argmax(excess)), a.shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(scale > 0, err / scale, 0.0)
    return GradReport(
        passed=bool(ok.all()),
        max_abs_error=float(err.max()),
        max_rel_error=float(rel.max()),
        worst_index=tuple(int(i) for i in worst),
        n_failed=int((~ok).sum()),
    )
