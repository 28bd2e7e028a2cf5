"""Ground-truth static/dynamic voxel sets and preservation/rejection scoring.

Everything is compared as sets of voxels at the evaluation resolution, using
the same floor convention as the mapping grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .grid import global_indices, isin_sorted, pack_keys, unpack_keys


def voxelize(points: np.ndarray, eval_voxel: float) -> np.ndarray:
    """Sorted unique packed keys of the voxels containing ``points``."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if pts.shape[0] == 0:
        return np.empty(0, dtype=np.int64)
    return np.unique(pack_keys(global_indices(pts, eval_voxel)))


def voxel_centres(keys: np.ndarray, eval_voxel: float) -> np.ndarray:
    return (unpack_keys(keys) + 0.5) * eval_voxel


@dataclass
class GroundTruth:
    static: np.ndarray  # sorted voxel keys
    dynamic: np.ndarray  # sorted voxel keys, disjoint from static
    eval_voxel: float


def build_ground_truth(frames, eval_voxel: float) -> GroundTruth:
    """Static voxels from static points; dynamic voxels are all other touched voxels.

    A voxel holding both static and dynamic points counts as static.
    """
    if not eval_voxel > 0:
        raise ValueError("eval_voxel must be positive")
    static_parts, all_parts = [], []
    for fr in frames:
        if fr.dynamic is None:
            raise ValueError(f"frame {fr.index} carries no ground-truth flags")
        world = fr.world_points()
        all_parts.append(voxelize(world, eval_voxel))
        static_parts.append(voxelize(world[~np.asarray(fr.dynamic, dtype=bool)], eval_voxel))
    static = np.unique(np.concatenate(static_parts)) if static_parts else np.empty(0, dtype=np.int64)
    touched = np.unique(np.concatenate(all_parts)) if all_parts else np.empty(0, dtype=np.int64)
    return GroundTruth(static, touched[~isin_sorted(static, touched)], eval_voxel)


def f1_score(pr: float | None, rr: float | None) -> float | None:
    if pr is None or rr is None:
        return None
    return 0.0 if pr + rr == 0 else 2.0 * pr * rr / (pr + rr)


@dataclass
class MetricsReport:
    pr: float | None
    rr: float | None
    f1: float | None
    static_kept: int
    n_static: int
    dynamic_kept: int
    n_dynamic: int
    eval_voxel: float
    max_range: float | None = None

    def as_dict(self) -> dict:
        return {
            "PR": self.pr,
            "RR": self.rr,
            "F1": self.f1,
            "static_kept": self.static_kept,
            "n_static": self.n_static,
            "dynamic_kept": self.dynamic_kept,
            "n_dynamic": self.n_dynamic,
            "eval_voxel": self.eval_voxel,
            "max_range": self.max_range,
        }

    def line(self) -> str:
        fmt = lambda v: "undefined" if v is None else f"{100 * v:.2f}"  # noqa: E731
        return f"PR {fmt(self.pr)}  RR {fmt(self.rr)}  F1 {fmt(self.f1)}"


def _report(pred: np.ndarray, static: np.ndarray, dynamic: np.ndarray, eval_voxel: float, max_range=None) -> MetricsReport:
    kept_s = int(isin_sorted(pred, static).sum())
    kept_d = int(isin_sorted(pred, dynamic).sum())
    pr = kept_s / static.size if static.size else None
    rr = 1.0 - kept_d / dynamic.size if dynamic.size else None
    return MetricsReport(pr, rr, f1_score(pr, rr), kept_s, int(static.size), kept_d, int(dynamic.size), eval_voxel, max_range)


def _check_resolution(gt: GroundTruth, eval_voxel: float | None) -> float:
    if eval_voxel is None:
        return gt.eval_voxel
    if not math.isclose(eval_voxel, gt.eval_voxel):
        raise ValueError(f"ground truth was built at {gt.eval_voxel} m, not {eval_voxel} m")
    return eval_voxel


def score(map_points: np.ndarray, gt: GroundTruth, eval_voxel: float | None = None) -> MetricsReport:
    """PR = kept static voxels / static voxels; RR = 1 - kept dynamic voxels / dynamic voxels."""
    ev = _check_resolution(gt, eval_voxel)
    return _report(voxelize(map_points, ev), gt.static, gt.dynamic, ev)


def score_within_range(
    map_points: np.ndarray, gt: GroundTruth, eval_voxel: float | None, max_range: float, trajectory: np.ndarray
) -> MetricsReport:
    """:func:`score` over voxels whose centres lie within ``max_range`` of some trajectory position."""
    ev = _check_resolution(gt, eval_voxel)
    pred = voxelize(map_points, ev)
    if not math.isfinite(max_range):
        return _report(pred, gt.static, gt.dynamic, ev)
    traj = np.asarray(trajectory, dtype=np.float64)
    if traj.ndim == 3:
        traj = traj[:, :3, 3]
    tree = cKDTree(traj.reshape(-1, 3))

    def near(keys: np.ndarray) -> np.ndarray:
        if not keys.size:
            return keys
        dist, _ = tree.query(voxel_centres(keys, ev), k=1, distance_upper_bound=max_range * (1 + 1e-12))
        return keys[dist <= max_range]

    return _report(near(pred), near(gt.static), near(gt.dynamic), ev, max_range)
