"""Multi-resolution map structure.

Space is cut into blocks, blocks into voxels and voxels into subvoxels, with
every edge length a power-of-two multiple of the next finer one. Integer cell
coordinates at any level convert to coarser levels by arithmetic right shift
and to block-local coordinates by a bit mask, which equal floor division and
non-negative modulo for negative coordinates as well.

Cell coordinates are packed into a single ``int64`` key (21 bits per axis,
offset so every field is non-negative). Packed keys are the currency of every
vectorised operation in the package: set algebra is done on sorted key arrays
and a neighbour offset is a single packed integer delta.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple

import numpy as np

AXIS_BITS = 21
KEY_OFFSET = 1 << (AXIS_BITS - 1)
INDEX_MIN = -KEY_OFFSET
INDEX_MAX = KEY_OFFSET - 1
_AXIS_MASK = (1 << AXIS_BITS) - 1

ABSENT = -1
RELEASED = -2


class Level(enum.IntEnum):
    SUBVOXEL = 0
    VOXEL = 1
    BLOCK = 2


class DynamicLevel(enum.IntEnum):
    """Dynamism of a point, ordered static < aggressive < moderate < conservative."""

    STATIC = 0
    AGGRESSIVE = 1
    MODERATE = 2
    CONSERVATIVE = 3


EMPTY_LEVEL = -1


def _pow2_exponent(ratio: float, what: str) -> int:
    exponent = round(math.log2(ratio)) if ratio > 0 else -1
    if exponent < 1 or not math.isclose(2.0**exponent, ratio, rel_tol=1e-9):
        raise ValueError(f"{what} must be a power of two >= 2, got {ratio!r}")
    return exponent


@dataclass(frozen=True)
class GridConfig:
    """Edge lengths (metres), free-space thresholds and neighbourhood radii.

    ``tau_f`` is the number of consecutive traversals a voxel needs before it
    may be freed, ``tau_r`` the number of consecutive occupied observations
    after which free space is revoked. Radii are Chebyshev radii in voxels.
    """

    s_s: float = 0.1
    s_v: float = 0.4
    s_b: float = 3.2
    tau_f: int = 6
    tau_r: int = 20
    n_m_radius: int = 1
    n_a_radius: int = 2
    d_s: int = field(init=False, default=0)
    d_v: int = field(init=False, default=0)
    d_b: int = field(init=False, default=0)

    def __post_init__(self) -> None:
        for name in ("s_s", "s_v", "s_b"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be a positive finite length, got {value!r}")
        dv = _pow2_exponent(self.s_v / self.s_s, "s_v / s_s")
        db = dv + _pow2_exponent(self.s_b / self.s_v, "s_b / s_v")
        if self.tau_f < 1 or self.tau_r < 1:
            raise ValueError("tau_f and tau_r must be >= 1")
        if self.n_m_radius < 1 or self.n_a_radius < self.n_m_radius:
            raise ValueError("need 1 <= n_m_radius <= n_a_radius")
        object.__setattr__(self, "d_v", dv)
        object.__setattr__(self, "d_b", db)

    def edge(self, level: Level) -> float:
        return (self.s_s, self.s_v, self.s_b)[level]

    def depth(self, level: Level) -> int:
        return (self.d_s, self.d_v, self.d_b)[level]

    def mask(self, level: Level, within: Level) -> int:
        """Bit mask extracting ``level`` coordinates local to a ``within`` cell."""
        return (1 << (self.depth(within) - self.depth(level))) - 1

    @property
    def block_shift(self) -> int:
        return self.d_b - self.d_v

    @property
    def subvoxel_shift(self) -> int:
        return self.d_v - self.d_s

    def as_dict(self) -> dict:
        return {
            "s_s": self.s_s,
            "s_v": self.s_v,
            "s_b": self.s_b,
            "tau_f": self.tau_f,
            "tau_r": self.tau_r,
            "n_m_radius": self.n_m_radius,
            "n_a_radius": self.n_a_radius,
        }


class GridIndex(NamedTuple):
    ix: int
    iy: int
    iz: int
    level: Level


# --------------------------------------------------------------------------
# scalar index math


def global_index(p, level: Level, cfg: GridConfig) -> GridIndex:
    edge = cfg.edge(level)
    coords = [float(c) for c in p]
    if len(coords) != 3 or not all(math.isfinite(c) for c in coords):
        raise ValueError(f"point must have three finite coordinates, got {p!r}")
    ix, iy, iz = (math.floor(c / edge) for c in coords)
    return GridIndex(ix, iy, iz, Level(level))


def local_index(i: GridIndex, within: Level, cfg: GridConfig) -> GridIndex:
    if within <= i.level:
        raise ValueError(f"{Level(within).name} is not coarser than {Level(i.level).name}")
    m = cfg.mask(i.level, within)
    return GridIndex(i.ix & m, i.iy & m, i.iz & m, i.level)


def coarsen_index(i: GridIndex, to_level: Level, cfg: GridConfig) -> GridIndex:
    if to_level < i.level:
        raise ValueError(f"cannot coarsen {Level(i.level).name} to {Level(to_level).name}")
    shift = cfg.depth(to_level) - cfg.depth(i.level)
    return GridIndex(i.ix >> shift, i.iy >> shift, i.iz >> shift, Level(to_level))


def neighborhood(v: GridIndex, radius: int) -> set[GridIndex]:
    if radius < 0:
        raise ValueError("radius must be >= 0")
    r = range(-radius, radius + 1)
    return {GridIndex(v.ix + dx, v.iy + dy, v.iz + dz, v.level) for dx in r for dy in r for dz in r}


# --------------------------------------------------------------------------
# vectorised index math on (N, 3) int64 arrays and packed keys


def global_indices(points: np.ndarray, edge: float) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if not np.isfinite(pts).all():
        raise ValueError("points contain non-finite coordinates")
    return np.floor(pts / edge).astype(np.int64)


def local_indices(idx: np.ndarray, depth_delta: int) -> np.ndarray:
    return np.bitwise_and(idx, (1 << depth_delta) - 1)


def coarsen_indices(idx: np.ndarray, depth_delta: int) -> np.ndarray:
    return np.right_shift(idx, depth_delta)


def pack_keys(idx: np.ndarray) -> np.ndarray:
    idx = np.asarray(idx, dtype=np.int64).reshape(-1, 3)
    if idx.size and (idx.min() < INDEX_MIN or idx.max() > INDEX_MAX):
        raise ValueError(f"cell index outside packable range [{INDEX_MIN}, {INDEX_MAX}]")
    shifted = idx + KEY_OFFSET
    return (shifted[:, 0] << (2 * AXIS_BITS)) | (shifted[:, 1] << AXIS_BITS) | shifted[:, 2]


def unpack_keys(keys: np.ndarray) -> np.ndarray:
    keys = np.asarray(keys, dtype=np.int64).ravel()
    out = np.empty((keys.size, 3), dtype=np.int64)
    out[:, 0] = (keys >> (2 * AXIS_BITS)) & _AXIS_MASK
    out[:, 1] = (keys >> AXIS_BITS) & _AXIS_MASK
    out[:, 2] = keys & _AXIS_MASK
    out -= KEY_OFFSET
    return out


def pack_key(ix: int, iy: int, iz: int) -> int:
    return int(pack_keys(np.array([[ix, iy, iz]]))[0])


def coarsen_keys(keys: np.ndarray, depth_delta: int) -> np.ndarray:
    return split_keys(keys, depth_delta)[0]


def split_keys(keys: np.ndarray, depth_delta: int) -> tuple[np.ndarray, np.ndarray]:
    """Parent keys ``depth_delta`` levels up and flat child-local indices, straight from packed keys.

    The key offset is a multiple of every supported cell ratio, so each biased
    axis field can be shifted and masked in place without unpacking.
    """
    keys = np.asarray(keys, dtype=np.int64).ravel()
    d = depth_delta
    bias = KEY_OFFSET - (KEY_OFFSET >> d)
    m = (1 << d) - 1
    fx = (keys >> (2 * AXIS_BITS)) & _AXIS_MASK
    fy = (keys >> AXIS_BITS) & _AXIS_MASK
    fz = keys & _AXIS_MASK
    parent = (((fx >> d) + bias) << (2 * AXIS_BITS)) | (((fy >> d) + bias) << AXIS_BITS) | ((fz >> d) + bias)
    local = ((fx & m) << (2 * d)) | ((fy & m) << d) | (fz & m)
    return parent, local


def neighbor_offsets(radius: int) -> np.ndarray:
    r = np.arange(-radius, radius + 1)
    grid = np.stack(np.meshgrid(r, r, r, indexing="ij"), axis=-1).reshape(-1, 3)
    return grid.astype(np.int64)


def packed_offsets(radius: int) -> np.ndarray:
    off = neighbor_offsets(radius)
    return (off[:, 0] << (2 * AXIS_BITS)) + (off[:, 1] << AXIS_BITS) + off[:, 2]


def dilate(keys: np.ndarray, radius: int) -> np.ndarray:
    """Sorted unique keys within Chebyshev ``radius`` of any input key."""
    keys = np.asarray(keys, dtype=np.int64)
    if keys.size == 0:
        return keys.copy()
    return np.unique((keys[:, None] + packed_offsets(radius)[None, :]).ravel())


def isin_sorted(sorted_keys: np.ndarray, queries: np.ndarray) -> np.ndarray:
    queries = np.asarray(queries, dtype=np.int64)
    if sorted_keys.size == 0:
        return np.zeros(queries.shape, dtype=bool)
    pos = np.searchsorted(sorted_keys, queries)
    pos[pos == sorted_keys.size] = 0
    return sorted_keys[pos] == queries


def lookup_sorted(sorted_keys: np.ndarray, values: np.ndarray, queries: np.ndarray, missing: int) -> np.ndarray:
    queries = np.asarray(queries, dtype=np.int64)
    out = np.full(queries.shape, missing, dtype=np.int64)
    if sorted_keys.size == 0:
        return out
    pos = np.searchsorted(sorted_keys, queries)
    pos[pos == sorted_keys.size] = 0
    hit = sorted_keys[pos] == queries
    out[hit] = values[pos[hit]]
    return out


def grow_tiers(candidates: np.ndarray, seed_mask: np.ndarray, r_m: int, r_a: int) -> np.ndarray:
    """Assign conservative/moderate/aggressive/static tiers over sorted ``candidates``.

    Seeds are conservative; moderate cells have a seed within ``r_m``; aggressive
    cells have a moderate cell within ``r_a``; everything else is static.
    """
    tiers = np.full(candidates.shape, DynamicLevel.STATIC, dtype=np.int8)
    tiers[seed_mask] = DynamicLevel.CONSERVATIVE
    seeds = candidates[seed_mask]
    if seeds.size == 0:
        return tiers
    rest = ~seed_mask
    mod = rest & isin_sorted(dilate(seeds, r_m), candidates)
    tiers[mod] = DynamicLevel.MODERATE
    if mod.any():
        rest &= ~mod
        agg = rest & isin_sorted(dilate(candidates[mod], r_a), candidates)
        tiers[agg] = DynamicLevel.AGGRESSIVE
    return tiers


# --------------------------------------------------------------------------
# maps


@dataclass
class FreeVoxel:
    f: bool = False
    n_f: int = 0
    n_o: int = 0
    in_released_block: bool = False


@dataclass
class StaticSubVoxel:
    t_o: int
    d: DynamicLevel


class _SlotPool:
    """Growable pool of fixed-width rows addressed by a packed key."""

    def __init__(self, width: int, columns: dict[str, tuple[np.dtype, int]], capacity: int = 64):
        self.width = width
        self._columns = columns
        self.arrays = {name: np.full((capacity, width), fill, dtype=dt) for name, (dt, fill) in columns.items()}
        self.slot_of: dict[int, int] = {}
        self._spare: list[int] = []
        self._next = 0
        self._sorted: tuple[np.ndarray, np.ndarray] | None = None

    def __len__(self) -> int:
        return len(self.slot_of)

    def _grow(self) -> None:
        cap = next(iter(self.arrays.values())).shape[0]
        for name, (dt, fill) in self._columns.items():
            grown = np.full((cap * 2, self.width), fill, dtype=dt)
            grown[:cap] = self.arrays[name]
            self.arrays[name] = grown

    def allocate(self, key: int) -> int:
        if self._spare:
            slot = self._spare.pop()
        else:
            if self._next == next(iter(self.arrays.values())).shape[0]:
                self._grow()
            slot = self._next
            self._next += 1
        for name, (_, fill) in self._columns.items():
            self.arrays[name][slot] = fill
        self.slot_of[key] = slot
        self._sorted = None
        return slot

    def free(self, key: int) -> None:
        self._spare.append(self.slot_of.pop(key))
        self._sorted = None

    def index(self) -> tuple[np.ndarray, np.ndarray]:
        if self._sorted is None:
            keys = np.fromiter(self.slot_of.keys(), dtype=np.int64, count=len(self.slot_of))
            slots = np.fromiter(self.slot_of.values(), dtype=np.int64, count=len(self.slot_of))
            order = np.argsort(keys)
            self._sorted = (keys[order], slots[order])
        return self._sorted

    def slots(self, keys: np.ndarray) -> np.ndarray:
        sorted_keys, sorted_slots = self.index()
        return lookup_sorted(sorted_keys, sorted_slots, keys, ABSENT)


class FreeSpaceMap:
    """Hashed blocks of dense ``{f, n_f, n_o}`` voxel grids.

    A block whose voxels are all free and carry no pending occupied count is
    released: its storage goes back to the pool and the block key is kept in a
    set of free blocks. Released voxels read back as ``f=1, n_f=tau_f, n_o=0``,
    which is indistinguishable from the stored state for every later update.
    """

    def __init__(self, cfg: GridConfig):
        self.cfg = cfg
        self.block_shift = cfg.block_shift
        self.voxels_per_block = 1 << (3 * self.block_shift)
        self._pool = _SlotPool(
            self.voxels_per_block,
            {"f": (np.dtype(bool), False), "n_f": (np.dtype(np.int32), 0), "n_o": (np.dtype(np.int32), 0)},
        )
        self._released: set[int] = set()
        self._released_sorted: np.ndarray | None = None

    # storage views
    @property
    def f(self) -> np.ndarray:
        return self._pool.arrays["f"]

    @property
    def n_f(self) -> np.ndarray:
        return self._pool.arrays["n_f"]

    @property
    def n_o(self) -> np.ndarray:
        return self._pool.arrays["n_o"]

    @property
    def n_allocated(self) -> int:
        return len(self._pool)

    @property
    def n_released(self) -> int:
        return len(self._released)

    def block_index(self) -> tuple[np.ndarray, np.ndarray]:
        """Sorted allocated block keys and their pool slots."""
        return self._pool.index()

    def released_keys(self) -> np.ndarray:
        if self._released_sorted is None:
            self._released_sorted = np.sort(np.fromiter(self._released, dtype=np.int64, count=len(self._released)))
        return self._released_sorted

    def allocated_blocks(self) -> Iterator[tuple[int, int]]:
        yield from sorted(self._pool.slot_of.items())

    # addressing
    def block_keys_of(self, voxel_keys: np.ndarray) -> np.ndarray:
        return coarsen_keys(voxel_keys, self.block_shift)

    def local_of(self, voxel_keys: np.ndarray) -> np.ndarray:
        return split_keys(voxel_keys, self.block_shift)[1]

    def locate(self, voxel_keys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Pool slot (or ABSENT / RELEASED) and block-local flat index per voxel."""
        blocks, local = split_keys(voxel_keys, self.block_shift)
        slots = self._pool.slots(blocks)
        if self._released:
            slots[isin_sorted(self.released_keys(), blocks)] = RELEASED
        return slots, local

    def allocate(self, block_keys: np.ndarray) -> None:
        """Give storage to absent or released blocks; released blocks come back free."""
        tau_f = self.cfg.tau_f
        for key in np.unique(np.asarray(block_keys, dtype=np.int64)).tolist():
            if key in self._pool.slot_of:
                continue
            slot = self._pool.allocate(key)
            if key in self._released:
                self._released.discard(key)
                self._released_sorted = None
                self.f[slot] = True
                self.n_f[slot] = tau_f

    def ensure(self, voxel_keys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        slots, local = self.locate(voxel_keys)
        missing = slots < 0
        if missing.any():
            self.allocate(self.block_keys_of(np.asarray(voxel_keys)[missing]))
            slots, local = self.locate(voxel_keys)
        return slots, local

    def release_if_free(self, block_key: int) -> bool:
        slot = self._pool.slot_of.get(int(block_key))
        if slot is None:
            return False
        if not (self.f[slot].all() and not self.n_o[slot].any()):
            return False
        self._pool.free(int(block_key))
        self._released.add(int(block_key))
        self._released_sorted = None
        return True

    def release_block_if_free(self, b: GridIndex) -> bool:
        if b.level != Level.BLOCK:
            raise ValueError("expected a block index")
        return self.release_if_free(pack_key(b.ix, b.iy, b.iz))

    # reads
    def query(self, voxel_keys: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(f, n_f, n_o)`` per voxel; unobserved voxels read as zeros."""
        slots, local = self.locate(voxel_keys)
        f = np.zeros(slots.shape, dtype=bool)
        n_f = np.zeros(slots.shape, dtype=np.int64)
        n_o = np.zeros(slots.shape, dtype=np.int64)
        live = slots >= 0
        f[live] = self.f[slots[live], local[live]]
        n_f[live] = self.n_f[slots[live], local[live]]
        n_o[live] = self.n_o[slots[live], local[live]]
        rel = slots == RELEASED
        f[rel] = True
        n_f[rel] = self.cfg.tau_f
        return f, n_f, n_o

    def is_free(self, voxel_keys: np.ndarray) -> np.ndarray:
        return self.query(voxel_keys)[0]

    def free_voxel_at(self, v: GridIndex, create: bool = False) -> FreeVoxel | None:
        if v.level != Level.VOXEL:
            raise ValueError("expected a voxel index")
        keys = np.array([pack_key(v.ix, v.iy, v.iz)], dtype=np.int64)
        slots, local = self.locate(keys)
        slot = int(slots[0])
        if slot == RELEASED:
            return FreeVoxel(True, self.cfg.tau_f, 0, in_released_block=True)
        if slot == ABSENT:
            if not create:
                return None
            slots, local = self.ensure(keys)
            slot = int(slots[0])
        j = int(local[0])
        return FreeVoxel(bool(self.f[slot, j]), int(self.n_f[slot, j]), int(self.n_o[slot, j]))

    def snapshot_free(self) -> np.ndarray:
        """Sorted keys of every voxel with f=1 inside allocated blocks, plus released blocks' voxels."""
        parts = []
        offs = _block_local_offsets(self.block_shift)
        for key, slot in self.allocated_blocks():
            base = unpack_keys(np.array([key]))[0] << self.block_shift
            sel = np.flatnonzero(self.f[slot])
            if sel.size:
                parts.append(pack_keys(base + offs[sel]))
        for key in self.released_keys().tolist():
            base = unpack_keys(np.array([key]))[0] << self.block_shift
            parts.append(pack_keys(base + offs))
        if not parts:
            return np.empty(0, dtype=np.int64)
        return np.sort(np.concatenate(parts))


def _block_local_offsets(shift: int) -> np.ndarray:
    """Local (x, y, z) for every flat index inside a cell of ``2**shift`` per axis."""
    n = 1 << shift
    flat = np.arange(n**3, dtype=np.int64)
    return np.stack([flat >> (2 * shift), (flat >> shift) & (n - 1), flat & (n - 1)], axis=1)


class StaticSpaceMap:
    """Voxel-keyed dense subvoxel grids holding ``(t_o, d)`` per subvoxel.

    Storage for a voxel is allocated on its first occupied subvoxel. Empty
    subvoxels carry ``t_o = -1`` and ``d = EMPTY_LEVEL``.
    """

    def __init__(self, cfg: GridConfig):
        self.cfg = cfg
        self.sub_shift = cfg.subvoxel_shift
        self.subvoxels_per_voxel = 1 << (3 * self.sub_shift)
        self._pool = _SlotPool(
            self.subvoxels_per_voxel,
            {"t_o": (np.dtype(np.int64), -1), "d": (np.dtype(np.int8), EMPTY_LEVEL)},
            capacity=256,
        )

    def __len__(self) -> int:
        return len(self._pool)

    @property
    def t_o(self) -> np.ndarray:
        return self._pool.arrays["t_o"]

    @property
    def d(self) -> np.ndarray:
        return self._pool.arrays["d"]

    def voxel_index(self) -> tuple[np.ndarray, np.ndarray]:
        return self._pool.index()

    def slots(self, voxel_keys: np.ndarray) -> np.ndarray:
        return self._pool.slots(voxel_keys)

    def ensure(self, voxel_keys: np.ndarray) -> np.ndarray:
        slots = self._pool.slots(voxel_keys)
        missing = slots < 0
        if missing.any():
            for key in np.unique(np.asarray(voxel_keys)[missing]).tolist():
                self._pool.allocate(key)
            slots = self._pool.slots(voxel_keys)
        return slots

    def subvoxel_at(self, s: GridIndex) -> StaticSubVoxel | None:
        if s.level != Level.SUBVOXEL:
            raise ValueError("expected a subvoxel index")
        v = coarsen_index(s, Level.VOXEL, self.cfg)
        slot = int(self.slots(np.array([pack_key(v.ix, v.iy, v.iz)]))[0])
        if slot < 0:
            return None
        loc = local_index(s, Level.VOXEL, self.cfg)
        sh = self.sub_shift
        j = (loc.ix << (2 * sh)) | (loc.iy << sh) | loc.iz
        if self.t_o[slot, j] < 0:
            return None
        return StaticSubVoxel(int(self.t_o[slot, j]), DynamicLevel(int(self.d[slot, j])))

    def occupied(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Sorted subvoxel keys of every occupied subvoxel with their ``t_o`` and ``d``."""
        keys, slots = self.voxel_index()
        if keys.size == 0:
            empty = np.empty(0, dtype=np.int64)
            return empty, empty, np.empty(0, dtype=np.int8)
        occ = self.t_o[slots] >= 0
        vi, li = np.nonzero(occ)
        base = unpack_keys(keys[vi]) << self.sub_shift
        sub = pack_keys(base + _block_local_offsets(self.sub_shift)[li])
        t_o = self.t_o[slots[vi], li]
        d = self.d[slots[vi], li]
        order = np.argsort(sub)
        return sub[order], t_o[order], d[order]
