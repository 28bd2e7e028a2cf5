"""Map-refinement back-end.

Labelled points are integrated into the subvoxel static map, remembering the
timestep of the observation that set each subvoxel. When voxels newly become
free, every earlier scan that left content in them is revisited: its voxels
are tiered around the freed ones and their subvoxels raised in dynamism.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .frontend import FreeSpaceUpdate, LabeledScan
from .grid import (
    EMPTY_LEVEL,
    DynamicLevel,
    GridConfig,
    StaticSpaceMap,
    _block_local_offsets,
    dilate,
    global_indices,
    isin_sorted,
    pack_keys,
    unpack_keys,
)


class TimestepRegistry:
    """Timestep -> sorted voxel keys that received a subvoxel at that step.

    Entries go stale when a later observation overwrites the subvoxel; lookups
    re-check ``t_o`` and rewrite an entry once its stale share passes
    ``compact_ratio``.
    """

    def __init__(self, compact_ratio: float = 0.5):
        self.compact_ratio = compact_ratio
        self._entries: dict[int, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, t: int) -> bool:
        return t in self._entries

    def timesteps(self) -> list[int]:
        return sorted(self._entries)

    def add(self, t: int, voxel_keys: np.ndarray) -> None:
        keys = np.unique(np.asarray(voxel_keys, dtype=np.int64))
        if not keys.size:
            return
        prev = self._entries.get(t)
        self._entries[t] = keys if prev is None else np.union1d(prev, keys)

    def raw(self, t: int) -> np.ndarray:
        return self._entries.get(t, np.empty(0, dtype=np.int64))

    def lookup(self, t: int, static_map: StaticSpaceMap, within: np.ndarray | None = None) -> np.ndarray:
        """Voxels holding a subvoxel with ``t_o == t``, optionally restricted to sorted ``within``."""
        entry = self.raw(t)
        cand = entry if within is None else entry[isin_sorted(within, entry)]
        if not cand.size:
            return cand
        live = (static_map.t_o[static_map.slots(cand)] == t).any(axis=1)
        if within is None and live.sum() < (1.0 - self.compact_ratio) * entry.size:
            self._rewrite(t, cand[live])
        return cand[live]

    def compact(self, static_map: StaticSpaceMap) -> None:
        for t in list(self._entries):
            self.lookup(t, static_map)

    def _rewrite(self, t: int, keys: np.ndarray) -> None:
        if keys.size:
            self._entries[t] = keys
        else:
            del self._entries[t]

    def total_entries(self) -> int:
        return sum(v.size for v in self._entries.values())


def subvoxel_split(points: np.ndarray, cfg: GridConfig) -> tuple[np.ndarray, np.ndarray]:
    """Packed voxel keys and flat in-voxel subvoxel indices for world points."""
    sub = global_indices(points, cfg.s_s)
    sh = cfg.subvoxel_shift
    loc = sub & ((1 << sh) - 1)
    flat = (loc[:, 0] << (2 * sh)) | (loc[:, 1] << sh) | loc[:, 2]
    return pack_keys(sub >> sh), flat


def integrate(labeled: LabeledScan, static_map: StaticSpaceMap, registry: TimestepRegistry, t: int) -> int:
    """Write labelled points into the static map; returns subvoxels created or replaced.

    An empty subvoxel adopts the point's label and ``t``; an occupied one is
    overwritten only by a strictly less dynamic label. Points sharing a
    subvoxel contribute their least dynamic label.
    """
    if labeled.points.shape[0] == 0:
        return 0
    cfg = static_map.cfg
    sub_keys = pack_keys(global_indices(labeled.points, cfg.s_s))
    uniq, inverse = np.unique(sub_keys, return_inverse=True)
    best = np.full(uniq.size, DynamicLevel.CONSERVATIVE + 1, dtype=np.int8)
    np.minimum.at(best, inverse.ravel(), labeled.labels.astype(np.int8))
    sub = unpack_keys(uniq)
    sh = cfg.subvoxel_shift
    loc = sub & ((1 << sh) - 1)
    u_flat = (loc[:, 0] << (2 * sh)) | (loc[:, 1] << sh) | loc[:, 2]
    u_vox = pack_keys(sub >> sh)

    slots = static_map.ensure(u_vox)
    current = static_map.d[slots, u_flat]
    write = (current == EMPTY_LEVEL) | (best < current)
    static_map.d[slots[write], u_flat[write]] = best[write]
    static_map.t_o[slots[write], u_flat[write]] = t
    registry.add(t, u_vox[write])
    return int(write.sum())


def incremental_free(update: FreeSpaceUpdate) -> np.ndarray:
    """Voxels that turned free during the step that produced ``update``."""
    return update.newly_free


def diff_free(before: np.ndarray, after: np.ndarray) -> np.ndarray:
    """Two-snapshot version of :func:`incremental_free` over sorted free-voxel keys."""
    return after[~isin_sorted(before, after)]


@dataclass
class ClearReport:
    timesteps: int = 0
    raised: int = 0


def clear_map(
    newly_free: np.ndarray, static_map: StaticSpaceMap, registry: TimestepRegistry, cfg: GridConfig
) -> ClearReport:
    """Raise the dynamism of earlier observations around newly freed voxels.

    For every timestep ``t_q`` with content inside a newly freed voxel, the
    voxels holding ``t_q`` content are tiered: conservative inside the freed
    set, moderate within ``n_m_radius`` of those, aggressive within
    ``n_a_radius`` of the moderate ones. Only subvoxels whose ``t_o`` is
    ``t_q`` are raised, and never lowered.
    """
    report = ClearReport()
    v_i = np.unique(np.asarray(newly_free, dtype=np.int64))
    if not v_i.size or not len(static_map):
        return report
    slots_i = static_map.slots(v_i)
    held = slots_i >= 0
    v_i, slots_i = v_i[held], slots_i[held]
    if not v_i.size:
        return report
    t_q_all = np.unique(static_map.t_o[slots_i])
    t_q_all = t_q_all[t_q_all >= 0]
    report.timesteps = int(t_q_all.size)

    for t_q in t_q_all.tolist():
        seeds = registry.lookup(t_q, static_map, within=v_i)
        if not seeds.size:
            continue
        ring_m = dilate(seeds, cfg.n_m_radius)
        mod = registry.lookup(t_q, static_map, within=ring_m)
        mod = mod[~isin_sorted(seeds, mod)]
        agg = np.empty(0, dtype=np.int64)
        if mod.size:
            agg = registry.lookup(t_q, static_map, within=dilate(mod, cfg.n_a_radius))
            agg = agg[~isin_sorted(seeds, agg) & ~isin_sorted(mod, agg)]
        for tier, keys in (
            (DynamicLevel.CONSERVATIVE, seeds),
            (DynamicLevel.MODERATE, mod),
            (DynamicLevel.AGGRESSIVE, agg),
        ):
            if keys.size:
                report.raised += _raise(static_map, keys, t_q, tier)
    return report


def _raise(static_map: StaticSpaceMap, voxel_keys: np.ndarray, t_q: int, tier: DynamicLevel) -> int:
    slots = static_map.slots(voxel_keys)
    t_o = static_map.t_o[slots]
    d = static_map.d[slots]
    hit = (t_o == t_q) & (d < tier)
    rows, cols = np.nonzero(hit)
    static_map.d[slots[rows], cols] = tier
    return int(rows.size)


def extract_static_map(static_map: StaticSpaceMap) -> np.ndarray:
    """Centres of every static subvoxel, ordered by packed subvoxel key."""
    keys, slots = static_map.voxel_index()
    if not keys.size:
        return np.empty((0, 3))
    sel = static_map.d[slots] == DynamicLevel.STATIC
    vi, li = np.nonzero(sel)
    sh = static_map.sub_shift
    sub = (unpack_keys(keys[vi]) << sh) + _block_local_offsets(sh)[li]
    order = np.argsort(pack_keys(sub))
    return (sub[order] + 0.5) * static_map.cfg.s_s


__all__ = [
    "ClearReport",
    "TimestepRegistry",
    "clear_map",
    "diff_free",
    "extract_static_map",
    "incremental_free",
    "integrate",
    "subvoxel_split",
]
