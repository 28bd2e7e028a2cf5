"""Scan-removal front-end.

Per scan: project to a depth image, synthesise virtual free-space endpoints in
bearings without returns, update the conservative free-space estimate and
label every point with a :class:`DynamicLevel` from its voxel's distance to
free space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import kernels
from .grid import (
    ABSENT,
    RELEASED,
    DynamicLevel,
    FreeSpaceMap,
    GridConfig,
    dilate,
    global_indices,
    grow_tiers,
    pack_keys,
)
from .raycast import ScanTraversal

# name -> (phi_min, phi_max, phi_res, theta_min, theta_max, theta_res), degrees
SENSOR_PRESETS: dict[str, tuple[float, float, float, float, float, float]] = {
    "hdl64": (-180.0, 180.0, 0.18, -24.9, 2.0, 26.9 / 64),
    "os2-128": (-180.0, 180.0, 360.0 / 2048, -11.25, 11.25, 22.5 / 128),
    "vlp16": (-180.0, 180.0, 0.2, -16.0, 16.0, 2.0),
    "solid-state": (-35.2, 35.2, 0.2, -38.6, 38.6, 0.2),
    "synthetic-64": (-180.0, 180.0, 1.0, -30.0, 30.0, 60.0 / 64),
}


@dataclass(frozen=True)
class SensorModel:
    """Depth-image geometry and raycast-enhancement limits (angles in radians)."""

    phi_min: float
    phi_max: float
    phi_res: float
    theta_min: float
    theta_max: float
    theta_res: float
    r_max: float = 50.0
    r_m: float = 0.5
    fill_radius: int = 2
    fill_passes: int | None = None  # None: repeat until the region is covered
    fov_mask: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self) -> None:
        if not (self.phi_res > 0 and self.theta_res > 0):
            raise ValueError("angular resolutions must be positive")
        if not (self.phi_max > self.phi_min and self.theta_max > self.theta_min):
            raise ValueError("field-of-view bounds are empty")
        if not (0 <= self.r_m < self.r_max):
            raise ValueError("need 0 <= r_m < r_max")
        if self.fill_radius < 1 or (self.fill_passes is not None and self.fill_passes < 0):
            raise ValueError("fill_radius must be >= 1 and fill_passes >= 0")
        if self.fov_mask is not None and np.shape(self.fov_mask) != self.shape:
            raise ValueError(f"fov_mask shape {np.shape(self.fov_mask)} != image shape {self.shape}")

    @classmethod
    def from_degrees(cls, phi_min, phi_max, phi_res, theta_min, theta_max, theta_res, **kw) -> SensorModel:
        r = math.radians
        return cls(r(phi_min), r(phi_max), r(phi_res), r(theta_min), r(theta_max), r(theta_res), **kw)

    @classmethod
    def preset(cls, name: str, **kw) -> SensorModel:
        try:
            angles = SENSOR_PRESETS[name]
        except KeyError:
            raise ValueError(f"unknown sensor preset {name!r}; choose from {sorted(SENSOR_PRESETS)}") from None
        return cls.from_degrees(*angles, **kw)

    @property
    def shape(self) -> tuple[int, int]:
        m = math.ceil((self.phi_max - self.phi_min) / self.phi_res - 1e-9)
        n = math.ceil((self.theta_max - self.theta_min) / self.theta_res - 1e-9)
        return m, n

    @property
    def wraps(self) -> bool:
        return self.phi_max - self.phi_min >= 2 * math.pi - 1e-9

    @property
    def mask(self) -> np.ndarray:
        if self.fov_mask is None:
            return np.ones(self.shape, dtype=bool)
        return np.asarray(self.fov_mask, dtype=bool)

    def pixel_bearings(self) -> tuple[np.ndarray, np.ndarray]:
        """Azimuth and elevation of every pixel centre, each shaped like the image."""
        m, n = self.shape
        phi = self.phi_min + (np.arange(m) + 0.5) * self.phi_res
        theta = self.theta_min + (np.arange(n) + 0.5) * self.theta_res
        return np.meshgrid(phi, theta, indexing="ij")

    def as_dict(self) -> dict:
        d = math.degrees
        return {
            "phi_min_deg": d(self.phi_min),
            "phi_max_deg": d(self.phi_max),
            "phi_res_deg": d(self.phi_res),
            "theta_min_deg": d(self.theta_min),
            "theta_max_deg": d(self.theta_max),
            "theta_res_deg": d(self.theta_res),
            "r_max": self.r_max,
            "r_m": self.r_m,
            "fill_radius": self.fill_radius,
            "fill_passes": self.fill_passes,
            "fov_mask": self.fov_mask is not None,
        }


def validate_pose(pose) -> np.ndarray:
    T = np.asarray(pose, dtype=np.float64)
    if T.shape != (4, 4) or not np.isfinite(T).all():
        raise ValueError("pose must be a finite 4x4 matrix")
    if not np.allclose(T[3], [0.0, 0.0, 0.0, 1.0], atol=1e-9):
        raise ValueError("pose bottom row must be [0, 0, 0, 1]")
    R = T[:3, :3]
    if not np.allclose(R @ R.T, np.eye(3), atol=1e-6) or abs(np.linalg.det(R) - 1.0) > 1e-6:
        raise ValueError("pose rotation is not orthonormal with det +1")
    return T


def transform(points: np.ndarray, pose: np.ndarray) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    return pts @ pose[:3, :3].T + pose[:3, 3]


@dataclass
class Scan:
    points: np.ndarray
    pose: np.ndarray
    timestep: int

    def __post_init__(self) -> None:
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.pose = validate_pose(self.pose)

    @property
    def origin(self) -> np.ndarray:
        return self.pose[:3, 3].copy()

    def world_points(self) -> np.ndarray:
        return transform(self.points, self.pose)


@dataclass
class DepthImage:
    depth: np.ndarray  # (m, n), +inf where empty

    @property
    def occupied(self) -> np.ndarray:
        return np.isfinite(self.depth)


@dataclass
class LabeledScan:
    points: np.ndarray  # world frame
    labels: np.ndarray  # int8 DynamicLevel per point
    voxel_keys: np.ndarray  # sorted scan voxels
    voxel_labels: np.ndarray  # DynamicLevel per scan voxel
    timestep: int


@dataclass
class FreeSpaceUpdate:
    """What one scan did to the free-space map."""

    newly_free: np.ndarray  # voxels that went 0 -> 1 and are still free
    revoked: int = 0
    released_blocks: int = 0


# --------------------------------------------------------------------------
# depth image and raycast enhancement


def pixel_coordinates(points: np.ndarray, sensor: SensorModel):
    """Pixel ``(i, j)``, range and in-image flag for sensor-frame points."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    rng = np.linalg.norm(pts, axis=1)
    phi = np.arctan2(pts[:, 1], pts[:, 0])
    theta = np.arctan2(pts[:, 2], np.hypot(pts[:, 0], pts[:, 1]))
    m, n = sensor.shape
    i = np.floor((phi - sensor.phi_min) / sensor.phi_res).astype(np.int64)
    j = np.floor((theta - sensor.theta_min) / sensor.theta_res).astype(np.int64)
    valid = (
        np.isfinite(rng)
        & (rng > 0)
        & (phi >= sensor.phi_min)
        & (phi < sensor.phi_max)
        & (theta >= sensor.theta_min)
        & (theta < sensor.theta_max)
        & (i >= 0)
        & (i < m)
        & (j >= 0)
        & (j < n)
    )
    return i, j, rng, valid


def project_depth_image(scan: Scan | np.ndarray, sensor: SensorModel) -> DepthImage:
    """Minimum range per pixel; points outside the half-open FoV are dropped."""
    points = scan.points if isinstance(scan, Scan) else scan
    i, j, rng, valid = pixel_coordinates(points, sensor)
    depth = np.full(sensor.shape, np.inf)
    np.minimum.at(depth, (i[valid], j[valid]), rng[valid])
    return DepthImage(depth)


def enhancement_region(img: DepthImage, sensor: SensorModel) -> np.ndarray:
    """Pixels inside the scanning pattern that received no return."""
    return sensor.mask & ~img.occupied


def _idw_kernel(radius: int) -> np.ndarray:
    """Inverse-distance weights over a ``(2r+1)^2`` window, zero at the centre."""
    r = np.arange(-radius, radius + 1)
    d = np.hypot(r[:, None], r[None, :])
    k = np.zeros_like(d)
    k[d > 0] = 1.0 / d[d > 0]
    return k


def _window_sums(values: np.ndarray, weights_on: np.ndarray, radius: int, wrap: bool):
    """Inverse-distance weighted sums of ``values`` and of the weights over each window."""
    # azimuth wraps for a full-circle sensor; elevation is zero-padded
    mode_i = "wrap" if wrap else "constant"
    pad = ((radius, radius), (0, 0))
    v = np.pad(np.where(weights_on, values, 0.0), pad, mode=mode_i)
    w = np.pad(weights_on.astype(np.float64), pad, mode=mode_i)
    k = _idw_kernel(radius)
    core = slice(radius, radius + values.shape[0])
    num = ndimage.correlate(v, k, mode="constant", cval=0.0)[core]
    den = ndimage.correlate(w, k, mode="constant", cval=0.0)[core]
    return num, den


def fill_depth(img: DepthImage, region: np.ndarray, sensor: SensorModel) -> np.ndarray:
    """Weighted-average fill of ``region`` from surrounding returns.

    Each pass gives every unfilled region pixel the inverse-distance weighted
    mean of known pixels in its ``(2k+1)^2`` window; filled pixels become known
    for the next pass. Passes repeat until no region pixel can be reached, or
    at most ``fill_passes`` times when that is set. Pixels left unfilled read +inf.
    """
    depth = img.depth
    known = img.occupied.copy()
    values = np.where(known, depth, 0.0)
    filled = np.full(depth.shape, np.inf)
    todo = region & ~known
    passes = 0
    while sensor.fill_passes is None or passes < sensor.fill_passes:
        passes += 1
        if not todo.any():
            break
        num, den = _window_sums(values, known, sensor.fill_radius, sensor.wraps)
        reach = todo & (den > 0)
        if not reach.any():
            break
        filled[reach] = num[reach] / den[reach]
        values[reach] = filled[reach]
        known |= reach
        todo &= ~reach
    return filled


def recover_free_depth(img: DepthImage, region: np.ndarray, sensor: SensorModel) -> np.ndarray:
    """Recovered free depth: fill minus safety margin, clamped to ``[0, r_max]``."""
    fill = fill_depth(img, region, sensor)
    return recover_from_fill(fill, region, sensor)


def recover_from_fill(fill: np.ndarray, region: np.ndarray, sensor: SensorModel) -> np.ndarray:
    E = np.zeros(fill.shape)
    E[region] = np.maximum(np.minimum(fill[region] - sensor.r_m, sensor.r_max), 0.0)
    return E


def enhanced_endpoints(E: np.ndarray, sensor: SensorModel, pose) -> np.ndarray:
    """World-frame virtual endpoints along pixel-centre bearings with ``E > 0``."""
    phi, theta = sensor.pixel_bearings()
    sel = E > 0
    r, ph, th = E[sel], phi[sel], theta[sel]
    local = np.stack([r * np.cos(th) * np.cos(ph), r * np.cos(th) * np.sin(ph), r * np.sin(th)], axis=1)
    return transform(local, np.asarray(pose, dtype=np.float64))


# --------------------------------------------------------------------------
# free-space estimation


def estimate_free_space(trav: ScanTraversal, free_map: FreeSpaceMap, cfg: GridConfig | None = None) -> FreeSpaceUpdate:
    """Apply one scan's traversal to the free-space map (in place).

    Counters first, for traversed (not yet free) and occupied voxels alike;
    then the neighbourhood test that frees voxels; then revocation around
    voxels occupied for ``tau_r`` consecutive scans; finally release of blocks
    that became entirely free.
    """
    cfg = cfg or free_map.cfg
    f, n_f, n_o = free_map.f, free_map.n_f, free_map.n_o

    # traversed voxels; released blocks are already free and skipped
    slots, local = free_map.locate(trav.free)
    absent = slots == ABSENT
    if absent.any():
        free_map.allocate(free_map.block_keys_of(trav.free[absent]))
        slots, local = free_map.locate(trav.free)
    f, n_f, n_o = free_map.f, free_map.n_f, free_map.n_o
    live = slots >= 0
    s_t, l_t, k_t = slots[live], local[live], trav.free[live]
    upd = ~f[s_t, l_t]
    s_t, l_t, k_t = s_t[upd], l_t[upd], k_t[upd]
    n_f[s_t, l_t] += 1
    n_o[s_t, l_t] = 0

    # occupied voxels
    s_o, l_o = free_map.ensure(trav.occupied)
    f, n_f, n_o = free_map.f, free_map.n_f, free_map.n_o
    n_o[s_o, l_o] += 1
    n_f[s_o, l_o] = 0

    # freeing; the voxel itself is part of its neighbourhood, so n_f >= tau_f is necessary
    s_t, l_t = free_map.locate(k_t)
    ready = n_f[s_t, l_t] >= cfg.tau_f
    cand = k_t[ready]
    block_keys, block_slots = free_map.block_index()
    ok = kernels.neighbors_reach(
        cand, cfg.n_m_radius, cfg.tau_f, block_keys, block_slots, free_map.released_keys(), n_f, free_map.block_shift
    )
    newly = cand[ok]
    s_n, l_n = free_map.locate(newly)
    f[s_n, l_n] = True

    # sustained occupancy revokes free space around the voxel
    s_o, l_o = free_map.locate(trav.occupied)
    hot = trav.occupied[n_o[s_o, l_o] >= cfg.tau_r]
    revoked = 0
    if hot.size:
        around = dilate(hot, cfg.n_m_radius)
        slots_r, _ = free_map.locate(around)
        if (slots_r == RELEASED).any():
            free_map.allocate(free_map.block_keys_of(around[slots_r == RELEASED]))
        slots_r, local_r = free_map.locate(around)
        f = free_map.f
        live = slots_r >= 0
        revoked = int(f[slots_r[live], local_r[live]].sum())
        f[slots_r[live], local_r[live]] = False

    newly = newly[free_map.is_free(newly)]
    released = 0
    if newly.size:
        for key in np.unique(free_map.block_keys_of(newly)).tolist():
            released += free_map.release_if_free(key)
    return FreeSpaceUpdate(newly_free=newly, revoked=revoked, released_blocks=released)


# --------------------------------------------------------------------------
# labelling


def label_voxels(scan_voxels: np.ndarray, free_flags: np.ndarray, cfg: GridConfig) -> np.ndarray:
    """Tier sorted scan voxels: free ones conservative, then moderate and aggressive rings."""
    return grow_tiers(scan_voxels, np.asarray(free_flags, dtype=bool), cfg.n_m_radius, cfg.n_a_radius)


def label_points(points_world: np.ndarray, free_map: FreeSpaceMap, timestep: int = 0) -> LabeledScan:
    cfg = free_map.cfg
    keys = pack_keys(global_indices(points_world, cfg.s_v))
    scan_voxels, inverse = np.unique(keys, return_inverse=True)
    voxel_labels = label_voxels(scan_voxels, free_map.is_free(scan_voxels), cfg)
    return LabeledScan(
        points=np.asarray(points_world, dtype=np.float64).reshape(-1, 3),
        labels=voxel_labels[inverse.ravel()],
        voxel_keys=scan_voxels,
        voxel_labels=voxel_labels,
        timestep=timestep,
    )


def label_scan(scan: Scan, free_map: FreeSpaceMap, cfg: GridConfig | None = None) -> LabeledScan:
    """Label every point of ``scan`` against the current free-space map."""
    if cfg is not None and cfg != free_map.cfg:
        raise ValueError("grid config does not match the free-space map")
    return label_points(scan.world_points(), free_map, scan.timestep)


__all__ = [
    "SENSOR_PRESETS",
    "DepthImage",
    "DynamicLevel",
    "FreeSpaceUpdate",
    "LabeledScan",
    "Scan",
    "SensorModel",
    "enhanced_endpoints",
    "enhancement_region",
    "estimate_free_space",
    "fill_depth",
    "label_points",
    "label_scan",
    "label_voxels",
    "pixel_coordinates",
    "project_depth_image",
    "recover_free_depth",
    "transform",
    "validate_pose",
]
