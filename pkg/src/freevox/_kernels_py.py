"""Pure-numpy implementations of the compiled kernels.

Used when the extension is not built, or when ``FREEVOX_PURE=1``. Results are
identical to the compiled versions; the traversal is vectorised across rays
and loops over DDA steps instead.
"""

from __future__ import annotations

import numpy as np

from .grid import (
    ABSENT,
    isin_sorted,
    lookup_sorted,
    neighbor_offsets,
    pack_keys,
    unpack_keys,
)

_CHUNK = 16384


def _traverse_chunk(o: np.ndarray, ends: np.ndarray, s: float) -> np.ndarray:
    n = ends.shape[0]
    start = np.floor(o / s).astype(np.int64)
    cur = np.repeat(start[None, :], n, axis=0)
    d = ends - o
    rem = np.abs(np.floor(ends / s).astype(np.int64) - cur)
    step = np.sign(d).astype(np.int64)
    with np.errstate(divide="ignore", invalid="ignore"):
        pos = d > 0
        neg = d < 0
        tmax = np.full((n, 3), np.inf)
        tdelta = np.full((n, 3), np.inf)
        upper = (cur + 1) * s - o
        lower = cur * s - o
        tmax[pos] = upper[pos] / d[pos]
        tmax[neg] = lower[neg] / d[neg]
        tdelta[pos] = s / d[pos]
        tdelta[neg] = -s / d[neg]

    out = []
    active = np.flatnonzero(rem.sum(axis=1) > 0)
    cur, tmax, tdelta, step, rem = cur[active], tmax[active], tdelta[active], step[active], rem[active]
    rows = np.arange(cur.shape[0])
    while cur.shape[0]:
        out.append(pack_keys(cur))
        masked = np.where(rem > 0, tmax, np.inf)
        axis = np.argmin(masked, axis=1)
        cur[rows, axis] += step[rows, axis]
        tmax[rows, axis] += tdelta[rows, axis]
        rem[rows, axis] -= 1
        keep = rem.sum(axis=1) > 0
        if not keep.all():
            cur, tmax, tdelta, step, rem = cur[keep], tmax[keep], tdelta[keep], step[keep], rem[keep]
            rows = np.arange(cur.shape[0])
    if not out:
        return np.empty(0, dtype=np.int64)
    return np.unique(np.concatenate(out))


def traverse_rays(origin, endpoints, voxel_size: float, released_blocks, block_shift: int) -> np.ndarray:
    o = np.asarray(origin, dtype=np.float64).reshape(3)
    ends = np.asarray(endpoints, dtype=np.float64).reshape(-1, 3)
    parts = [_traverse_chunk(o, ends[i : i + _CHUNK], float(voxel_size)) for i in range(0, ends.shape[0], _CHUNK)]
    keys = np.unique(np.concatenate(parts)) if parts else np.empty(0, dtype=np.int64)
    released = np.asarray(released_blocks, dtype=np.int64)
    if released.size and keys.size:
        blocks = pack_keys(unpack_keys(keys) >> block_shift)
        keys = keys[~isin_sorted(np.sort(released), blocks)]
    return keys


def neighbors_reach(keys, radius: int, tau: int, block_keys, block_slots, released_blocks, n_f, block_shift: int) -> np.ndarray:
    keys = np.asarray(keys, dtype=np.int64)
    out = np.ones(keys.size, dtype=bool)
    if keys.size == 0:
        return out
    idx = unpack_keys(keys)
    lmask = (1 << block_shift) - 1
    released = np.sort(np.asarray(released_blocks, dtype=np.int64))
    for off in neighbor_offsets(radius):
        nb = idx + off
        blocks = pack_keys(nb >> block_shift)
        slots = lookup_sorted(block_keys, block_slots, blocks, ABSENT)
        loc = nb & lmask
        flat = (loc[:, 0] << (2 * block_shift)) | (loc[:, 1] << block_shift) | loc[:, 2]
        live = slots >= 0
        reach = np.zeros(keys.size, dtype=bool)
        reach[live] = n_f[slots[live], flat[live]] >= tau
        if released.size:
            reach |= isin_sorted(released, blocks)
        out &= reach
    return out
