"""Slow, obviously-correct reference implementations.

Nothing here imports the optimized kernels it is compared against. Loops
run over scalars on purpose.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


def bin_centers(origin, bin_size, bins):
    """Flat list of (multi_index, center) in row-major order."""
    out = []
    for idx in itertools.product(*(range(n) for n in bins)):
        c = tuple(o + (i + 0.5) * s for o, s, i in zip(origin, bin_size, idx))
        out.append((idx, c))
    return out


def inside_grid(p, origin, bin_size, bins):
    return all(0.0 <= (p[k] - origin[k]) / bin_size[k] <= bins[k] for k in range(3))


def argmin_bin(p, centers):
    """Exhaustive nearest center; strict ``<`` keeps the lowest index on ties."""
    best, best_d = None, math.inf
    for flat, (_, c) in enumerate(centers):
        d = sum((p[k] - c[k]) ** 2 for k in range(3))
        if d < best_d:
            best, best_d = flat, d
    return best


def neighbors(idx, bins, neighborhood):
    out = []
    for off in itertools.product((-1, 0, 1), repeat=3):
        if off == (0, 0, 0):
            continue
        if neighborhood == "faces6" and sum(abs(o) for o in off) != 1:
            continue
        j = tuple(i + o for i, o in zip(idx, off))
        if all(0 <= j[k] < bins[k] for k in range(3)):
            out.append(j)
    return out


def soft_quantize_loop(points, origin, bin_size, bins, sigma, neighborhood):
    """Occupancy by a double loop over bins and points."""
    centers = bin_centers(origin, bin_size, bins)
    flat_of = {idx: f for f, (idx, _) in enumerate(centers)}
    owner = [
        argmin_bin(p, centers) if inside_grid(p, origin, bin_size, bins) else None
        for p in points
    ]

    def kernel_mean(src_flat, target_center):
        total, count = 0.0, 0
        for p, o in zip(points, owner):
            if o == src_flat:
                d2 = sum((p[k] - target_center[k]) ** 2 for k in range(3))
                total += math.exp(-d2 / (sigma * sigma))
                count += 1
        return total / count if count else 0.0

    out = np.zeros(len(centers))
    for m, (idx, c) in enumerate(centers):
        own = kernel_mean(m, c)
        nbrs = neighbors(idx, bins, neighborhood)
        spill = sum(kernel_mean(flat_of[j], c) for j in nbrs)
        out[m] = own + (spill / len(nbrs) if nbrs else 0.0)
    return out.reshape(bins)


def backproject_pixel(u, v, d, f, cx, cy):
    return ((u - cx) * d / f, (v - cy) * d / f, d)


def supervised_loop(pred, lidar):
    total, n = 0.0, 0
    for d_hat, d in zip(np.ravel(pred), np.ravel(lidar)):
        if d > 0:
            total += abs(d - d_hat)
            n += 1
    return total / n if n else 0.0


def md_loop(m_map, d_map, lidar, lam_m, lam_d):
    total = 0.0
    for m, d, l in zip(np.ravel(m_map), np.ravel(d_map), np.ravel(lidar)):
        total += lam_d * d if l > 0 else lam_m * m
    return total / np.size(lidar)


def metrics_loop(pred, gt):
    rows = [(p, g) for p, g in zip(np.ravel(pred), np.ravel(gt)) if g > 0]
    n = len(rows)
    abs_rel = sum(abs(p - g) / g for p, g in rows) / n
    sq_rel = sum((p - g) ** 2 / g for p, g in rows) / n
    rmse = math.sqrt(sum((p - g) ** 2 for p, g in rows) / n)
    rmse_log = math.sqrt(sum((math.log(p) - math.log(g)) ** 2 for p, g in rows) / n)
    ratio = [max(p / g, g / p) for p, g in rows]
    deltas = [sum(r < 1.25**k for r in ratio) / n for k in (1, 2, 3)]
    return dict(abs_rel=abs_rel, sq_rel=sq_rel, rmse=rmse, rmse_log=rmse_log,
                delta1=deltas[0], delta2=deltas[1], delta3=deltas[2])


def median_sorted(values):
    v = sorted(values)
    n = len(v)
    return v[n // 2] if n % 2 else 0.5 * (v[n // 2 - 1] + v[n // 2])
