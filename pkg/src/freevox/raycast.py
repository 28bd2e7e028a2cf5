"""Voxel traversal from the sensor origin to measured and virtual endpoints."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .grid import FreeSpaceMap, GridIndex, Level, global_indices, isin_sorted, pack_keys


@dataclass(frozen=True)
class Ray:
    origin: tuple[float, float, float]
    endpoint: tuple[float, float, float]

    def __post_init__(self) -> None:
        if not all(math.isfinite(c) for c in (*self.origin, *self.endpoint)):
            raise ValueError("ray coordinates must be finite")


@dataclass
class ScanTraversal:
    """Sorted unique voxel keys: ``free`` traversed by some ray, ``occupied`` holding a measurement."""

    free: np.ndarray
    occupied: np.ndarray


def traverse(ray: Ray, s_v: float) -> list[GridIndex]:
    """Voxels crossed by the segment, origin voxel first, endpoint voxel excluded.

    Face ties advance one axis at a time in x, y, z order. The step count per
    axis is fixed up front, so the walk always ends in the endpoint voxel.
    """
    if not s_v > 0:
        raise ValueError("voxel edge must be positive")
    o = [float(c) for c in ray.origin]
    e = [float(c) for c in ray.endpoint]
    cur = [math.floor(c / s_v) for c in o]
    step = [0, 0, 0]
    tmax = [math.inf] * 3
    tdelta = [math.inf] * 3
    remaining = [abs(math.floor(e[a] / s_v) - cur[a]) for a in range(3)]
    for a in range(3):
        d = e[a] - o[a]
        if d > 0:
            step[a] = 1
            tmax[a] = ((cur[a] + 1) * s_v - o[a]) / d
            tdelta[a] = s_v / d
        elif d < 0:
            step[a] = -1
            tmax[a] = (cur[a] * s_v - o[a]) / d
            tdelta[a] = -s_v / d

    out = []
    while remaining[0] + remaining[1] + remaining[2] > 0:
        out.append(GridIndex(cur[0], cur[1], cur[2], Level.VOXEL))
        axis = min((a for a in range(3) if remaining[a] > 0), key=lambda a: tmax[a])
        cur[axis] += step[axis]
        tmax[axis] += tdelta[axis]
        remaining[axis] -= 1
    return out


def clip_rays(origin: np.ndarray, endpoints: np.ndarray, max_length: float | None) -> np.ndarray:
    if max_length is None or not np.isfinite(max_length):
        return endpoints
    d = endpoints - origin
    length = np.linalg.norm(d, axis=1)
    scale = np.ones_like(length)
    long = length > max_length
    scale[long] = max_length / length[long]
    return origin + d * scale[:, None]


def collect_scan_traversal(
    origin,
    endpoints_real,
    endpoints_enhanced,
    free_map: FreeSpaceMap,
    *,
    skip_released: bool = True,
    max_ray_length: float | None = None,
) -> ScanTraversal:
    """Occupied voxels of the real endpoints and voxels traversed by all rays.

    Voxels inside released free blocks are not emitted. Real rays may be
    clipped to ``max_ray_length``; enhanced endpoints are already range-limited.
    """
    o = np.asarray(origin, dtype=np.float64).reshape(3)
    real = np.asarray(endpoints_real, dtype=np.float64).reshape(-1, 3)
    virtual = np.asarray(endpoints_enhanced, dtype=np.float64).reshape(-1, 3)
    s_v = free_map.cfg.s_v

    occupied = np.unique(pack_keys(global_indices(real, s_v)))
    ends = np.concatenate([clip_rays(o, real, max_ray_length), virtual])
    if not np.isfinite(ends).all() or not np.isfinite(o).all():
        raise ValueError("ray coordinates must be finite")
    released = free_map.released_keys() if skip_released else np.empty(0, dtype=np.int64)
    traversed = kernels.traverse_rays(o, ends, s_v, released, free_map.block_shift)
    traversed = traversed[~isin_sorted(occupied, traversed)]
    return ScanTraversal(free=traversed, occupied=occupied)
