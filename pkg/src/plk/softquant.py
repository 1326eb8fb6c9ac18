"""Differentiable soft voxelization of point clouds.

Each bin's occupancy is the mean Gaussian kernel between the points it
holds and its own center, plus the average over its neighbor bins of the
mean kernel between *their* points and this bin's center. Bin assignment
is nearest-center and treated as constant when differentiating.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .camera import PointCloud
from .errors import InvalidShape

__all__ = [
    "NEIGHBORHOODS",
    "VoxelGridSpec",
    "assign_bins",
    "bev_flatten",
    "bev_flatten_grad",
    "neighbor_offsets",
    "soft_quantize",
    "soft_quantize_grad",
]

NEIGHBORHOODS = ("faces6", "full26")

OUTSIDE = -1


@dataclass(frozen=True)
class VoxelGridSpec:
    origin: tuple = (0.0, 0.0, 0.0)
    bin_size: tuple = (1.0, 1.0, 1.0)
    bins: tuple = (1, 1, 1)
    sigma: Optional[float] = None
    neighborhood: str = "faces6"

    def __post_init__(self):
        origin = tuple(float(v) for v in self.origin)
        bin_size = tuple(float(v) for v in self.bin_size)
        bins = tuple(int(v) for v in self.bins)
        if len(origin) != 3 or len(bin_size) != 3 or len(bins) != 3:
            raise InvalidShape("origin, bin_size and bins need 3 components each")
        if not all(np.isfinite(origin)):
            raise InvalidShape("origin must be finite")
        if not all(s > 0 and np.isfinite(s) for s in bin_size):
            raise InvalidShape(f"bin sizes must be positive, got {bin_size}")
        if not all(b >= 1 for b in bins):
            raise InvalidShape(f"bin counts must be >= 1, got {bins}")
        sigma = float(np.mean(bin_size)) if self.sigma is None else float(self.sigma)
        if not (sigma > 0 and np.isfinite(sigma)):
            raise InvalidShape(f"sigma must be positive, got {sigma}")
        if self.neighborhood not in NEIGHBORHOODS:
            raise InvalidShape(f"neighborhood must be one of {NEIGHBORHOODS}")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "bin_size", bin_size)
        object.__setattr__(self, "bins", bins)
        object.__setattr__(self, "sigma", sigma)

    @property
    def n_bins(self) -> int:
        return int(np.prod(self.bins))

    def centers(self) -> np.ndarray:
        """``(X, Y, Z, 3)`` bin centers in world coordinates."""
        axes = [
            o + (np.arange(n) + 0.5) * s
            for o, s, n in zip(self.origin, self.bin_size, self.bins)
        ]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def to_dict(self):
        return {
            "origin": list(self.origin),
            "bin_size": list(self.bin_size),
            "bins": list(self.bins),
            "sigma": self.sigma,
            "neighborhood": self.neighborhood,
        }


def neighbor_offsets(neighborhood: str) -> np.ndarray:
    if neighborhood == "faces6":
        offs = []
        for axis in range(3):
            for step in (-1, 1):
                o = [0, 0, 0]
                o[axis] = step
                offs.append(o)
        return np.array(offs, dtype=np.int64)
    if neighborhood == "full26":
        return np.array(
            [o for o in itertools.product((-1, 0, 1), repeat=3) if o != (0, 0, 0)],
            dtype=np.int64,
        )
    raise InvalidShape(f"unknown neighborhood {neighborhood!r}")


def _neighbor_counts(spec: VoxelGridSpec) -> np.ndarray:
    """Number of in-grid neighbors of every bin, shape ``bins``."""
    per_axis = []
    for n in spec.bins:
        i = np.arange(n)
        if spec.neighborhood == "faces6":
            per_axis.append((i > 0).astype(np.int64) + (i < n - 1))
        else:
            per_axis.append(np.minimum(i + 1, n - 1) - np.maximum(i - 1, 0) + 1)
    a, b, c = np.meshgrid(*per_axis, indexing="ij")
    if spec.neighborhood == "faces6":
        return a + b + c
    return a * b * c - 1


def _as_points(cloud) -> np.ndarray:
    pts = cloud.points if isinstance(cloud, PointCloud) else cloud
    return np.ascontiguousarray(pts, dtype=np.float64).reshape(-1, 3)


def _assign(points: np.ndarray, spec: VoxelGridSpec):
    origin = np.asarray(spec.origin)
    size = np.asarray(spec.bin_size)
    bins = np.asarray(spec.bins)
    rel = points - origin
    r = rel / size
    inside = np.all((r >= 0) & (r <= bins), axis=1)
    # nearest center; a point on a shared face goes to the lower bin
    idx = np.clip(np.ceil(r) - 1, 0, bins - 1).astype(np.int64)
    return rel, idx, inside


def assign_bins(cloud, spec: VoxelGridSpec) -> np.ndarray:
    """Flat (row-major) bin index per point, ``-1`` for points outside the grid."""
    points = _as_points(cloud)
    _, idx, inside = _assign(points, spec)
    flat = np.ravel_multi_index(idx.T, spec.bins) if len(points) else np.zeros(0, np.int64)
    return np.where(inside, flat, OUTSIDE).astype(np.int64)


class _Pairs:
    """Every (point, target bin) kernel evaluation the occupancy needs."""

    def __init__(self, points: np.ndarray, spec: VoxelGridSpec):
        rel, idx, inside = _assign(points, spec)
        self.inside = np.nonzero(inside)[0]
        self.rel = rel[inside]
        self.idx = idx[inside]
        self.spec = spec
        bins = np.asarray(spec.bins)
        self.flat = np.ravel_multi_index(self.idx.T, spec.bins) if len(self.idx) else np.zeros(0, np.int64)
        counts = np.bincount(self.flat, minlength=spec.n_bins)
        self.inv_count = 1.0 / counts[self.flat] if len(self.flat) else np.zeros(0)
        self.nbr_count = _neighbor_counts(spec).reshape(-1)
        self.offsets = neighbor_offsets(spec.neighborhood)
        self.bins = bins

    def pairs(self):
        """All kernel evaluations as flat arrays ``(rows, target, weight, diff, kernel)``.

        ``rows`` indexes the inside points, ``target`` is the flat bin the
        kernel value lands in and ``weight`` the factor it enters with.
        The self term comes first, then neighbor offsets in fixed order.
        """
        size = np.asarray(self.spec.bin_size)
        inv_s2 = 1.0 / (self.spec.sigma * self.spec.sigma)
        offs = np.concatenate([np.zeros((1, 3), dtype=np.int64), self.offsets])
        tgt = self.idx[None, :, :] + offs[:, None, :]
        ok = np.all((tgt >= 0) & (tgt < self.bins), axis=2)
        ok[0] = True
        off_id, rows = np.nonzero(ok)
        tgt = tgt[off_id, rows]
        tflat = np.ravel_multi_index(tgt.T, self.spec.bins)
        diff = self.rel[rows] - (tgt + 0.5) * size
        kern = np.exp(-np.einsum("ij,ij->i", diff, diff) * inv_s2)
        weight = self.inv_count[rows]
        is_nbr = off_id > 0
        weight = np.where(is_nbr, weight / np.maximum(self.nbr_count[tflat], 1), weight)
        return rows, tflat, weight, diff, kern


def soft_quantize(cloud, spec: VoxelGridSpec) -> np.ndarray:
    """Occupation tensor of shape ``spec.bins``; values lie in [0, 2]."""
    points = _as_points(cloud)
    out = np.zeros(spec.n_bins)
    if len(points):
        pairs = _Pairs(points, spec)
        if len(pairs.rel):
            _, tflat, weight, _, kern = pairs.pairs()
            out += np.bincount(tflat, weights=weight * kern, minlength=spec.n_bins)
    return out.reshape(spec.bins)


def soft_quantize_grad(cloud, spec: VoxelGridSpec, upstream) -> np.ndarray:
    """Gradient of ``sum(upstream * soft_quantize(cloud))`` w.r.t. the points.

    Returns an ``(N, 3)`` array; outside points get zero rows.
    """
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != spec.bins:
        raise InvalidShape(f"upstream shape {upstream.shape} != grid {spec.bins}")
    points = _as_points(cloud)
    grad = np.zeros_like(points)
    if not len(points):
        return grad
    up = upstream.reshape(-1)
    pairs = _Pairs(points, spec)
    acc = np.zeros((len(pairs.rel), 3))
    scale = -2.0 / (spec.sigma * spec.sigma)
    if len(acc):
        rows, tflat, weight, diff, kern = pairs.pairs()
        coef = up[tflat] * weight * kern * scale
        for c in range(3):
            acc[:, c] = np.bincount(rows, weights=coef * diff[:, c], minlength=len(acc))
    grad[pairs.inside] = acc
    return grad


def bev_flatten(t, mode: str = "max", axis: int = 2) -> np.ndarray:
    """Collapse one axis of an occupation tensor (the last by default)."""
    t = np.asarray(t, dtype=np.float64)
    if mode == "max":
        return t.max(axis=axis)
    if mode == "sum":
        return t.sum(axis=axis)
    raise InvalidShape(f"unknown BEV mode {mode!r}")


def bev_flatten_grad(t, upstream, mode: str = "max", axis: int = 2) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    if mode == "sum":
        return np.repeat(np.expand_dims(upstream, axis), t.shape[axis], axis=axis)
    if mode == "max":
        # argmax returns the first maximum, i.e. ties go to the lowest index
        arg = np.expand_dims(t.argmax(axis=axis), axis)
        g = np.zeros_like(t)
        np.put_along_axis(g, arg, np.expand_dims(upstream, axis), axis=axis)
        return g
    raise InvalidShape(f"unknown BEV mode {mode!r}")
