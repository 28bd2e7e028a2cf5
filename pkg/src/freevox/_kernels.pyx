# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: batched voxel traversal and the free-neighbourhood test.

Both functions mirror ``_kernels_py`` operation for operation so the two
backends return identical arrays.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor, INFINITY
from libc.stdint cimport int64_t, uint64_t, int32_t
from libc.stdlib cimport calloc, free

cnp.import_array()

cdef int64_t AXIS_BITS = 21
cdef int64_t KEY_OFFSET = 1 << 20
cdef int64_t AXIS_MASK = (1 << 21) - 1
cdef int64_t EMPTY = -1


cdef inline int64_t _pack(int64_t x, int64_t y, int64_t z) noexcept nogil:
    return ((x + KEY_OFFSET) << 42) | ((y + KEY_OFFSET) << 21) | (z + KEY_OFFSET)


cdef inline uint64_t _mix(uint64_t k) noexcept nogil:
    # splitmix64 finaliser
    k ^= k >> 30
    k *= <uint64_t>0xbf58476d1ce4e5b9
    k ^= k >> 27
    k *= <uint64_t>0x94d049bb133111eb
    k ^= k >> 31
    return k


cdef class _KeySet:
    """Open-addressing set of non-negative int64 keys."""

    cdef int64_t* table
    cdef uint64_t mask
    cdef Py_ssize_t size

    def __cinit__(self, Py_ssize_t expected=1024):
        cdef uint64_t cap = 16
        while cap < <uint64_t>(expected * 2):
            cap <<= 1
        self._alloc(cap)

    cdef void _alloc(self, uint64_t cap) except *:
        self.table = <int64_t*>calloc(cap, sizeof(int64_t))
        if self.table == NULL:
            raise MemoryError()
        cdef uint64_t i
        for i in range(cap):
            self.table[i] = EMPTY
        self.mask = cap - 1
        self.size = 0

    def __dealloc__(self):
        if self.table != NULL:
            free(self.table)

    cdef void _grow(self) except *:
        cdef int64_t* old = self.table
        cdef uint64_t old_cap = self.mask + 1
        cdef uint64_t i
        self._alloc(old_cap * 2)
        for i in range(old_cap):
            if old[i] != EMPTY:
                self.add(old[i])
        free(old)

    cdef inline bint contains(self, int64_t key) noexcept nogil:
        cdef uint64_t h = _mix(<uint64_t>key) & self.mask
        while True:
            if self.table[h] == key:
                return True
            if self.table[h] == EMPTY:
                return False
            h = (h + 1) & self.mask

    cdef void add(self, int64_t key) except *:
        cdef uint64_t h = _mix(<uint64_t>key) & self.mask
        while True:
            if self.table[h] == key:
                return
            if self.table[h] == EMPTY:
                self.table[h] = key
                self.size += 1
                if <uint64_t>(self.size * 2) > self.mask:
                    self._grow()
                return
            h = (h + 1) & self.mask

    cdef cnp.ndarray to_sorted(self):
        out = np.empty(self.size, dtype=np.int64)
        cdef int64_t[::1] view = out
        cdef uint64_t i
        cdef Py_ssize_t n = 0
        for i in range(self.mask + 1):
            if self.table[i] != EMPTY:
                view[n] = self.table[i]
                n += 1
        out.sort()
        return out


cdef _KeySet _set_from(const int64_t[::1] keys):
    cdef _KeySet s = _KeySet(max(keys.shape[0], 16))
    cdef Py_ssize_t i
    for i in range(keys.shape[0]):
        s.add(keys[i])
    return s


def traverse_rays(origin, endpoints, double voxel_size, released_blocks, int block_shift):
    """Sorted unique keys of voxels traversed by rays from ``origin``.

    The voxel holding each endpoint is not emitted, nor is any voxel inside a
    block listed in ``released_blocks``.
    """
    cdef double[::1] o = np.ascontiguousarray(origin, dtype=np.float64).reshape(3)
    cdef double[:, ::1] ends = np.ascontiguousarray(endpoints, dtype=np.float64).reshape(-1, 3)
    cdef const int64_t[::1] rel = np.ascontiguousarray(released_blocks, dtype=np.int64)
    cdef _KeySet released = _set_from(rel)
    cdef bint any_released = rel.shape[0] > 0
    cdef double s = voxel_size
    cdef double ox = o[0], oy = o[1], oz = o[2]
    cdef double ex, ey, ez, dx, dy, dz
    cdef double tmx, tmy, tmz, tdx, tdy, tdz
    cdef int64_t cx, cy, cz, stx, sty, stz, rx, ry, rz
    cdef int64_t bx, by, bz, lbx, lby, lbz
    cdef int64_t start_x = <int64_t>floor(ox / s)
    cdef int64_t start_y = <int64_t>floor(oy / s)
    cdef int64_t start_z = <int64_t>floor(oz / s)
    cdef bint in_released
    cdef Py_ssize_t r
    cdef int64_t total = 0

    # rough initial size: dense near-field rays mostly revisit voxels
    for r in range(ends.shape[0]):
        rx = <int64_t>floor(ends[r, 0] / s) - start_x
        ry = <int64_t>floor(ends[r, 1] / s) - start_y
        rz = <int64_t>floor(ends[r, 2] / s) - start_z
        total += (rx if rx > 0 else -rx) + (ry if ry > 0 else -ry) + (rz if rz > 0 else -rz)
    cdef _KeySet out = _KeySet(min(max(total // 32, 4096), 1 << 22))

    for r in range(ends.shape[0]):
        ex = ends[r, 0]
        ey = ends[r, 1]
        ez = ends[r, 2]
        cx = start_x
        cy = start_y
        cz = start_z
        dx = ex - ox
        dy = ey - oy
        dz = ez - oz
        rx = <int64_t>floor(ex / s) - cx
        ry = <int64_t>floor(ey / s) - cy
        rz = <int64_t>floor(ez / s) - cz
        if dx > 0:
            stx = 1
            tmx = ((cx + 1) * s - ox) / dx
            tdx = s / dx
        elif dx < 0:
            stx = -1
            tmx = (cx * s - ox) / dx
            tdx = -s / dx
        else:
            stx = 0
            tmx = INFINITY
            tdx = INFINITY
        if dy > 0:
            sty = 1
            tmy = ((cy + 1) * s - oy) / dy
            tdy = s / dy
        elif dy < 0:
            sty = -1
            tmy = (cy * s - oy) / dy
            tdy = -s / dy
        else:
            sty = 0
            tmy = INFINITY
            tdy = INFINITY
        if dz > 0:
            stz = 1
            tmz = ((cz + 1) * s - oz) / dz
            tdz = s / dz
        elif dz < 0:
            stz = -1
            tmz = (cz * s - oz) / dz
            tdz = -s / dz
        else:
            stz = 0
            tmz = INFINITY
            tdz = INFINITY
        if rx < 0:
            rx = -rx
        if ry < 0:
            ry = -ry
        if rz < 0:
            rz = -rz

        lbx = lby = lbz = 0
        in_released = False
        if any_released:
            lbx = cx >> block_shift
            lby = cy >> block_shift
            lbz = cz >> block_shift
            in_released = released.contains(_pack(lbx, lby, lbz))

        while rx + ry + rz > 0:
            if any_released:
                bx = cx >> block_shift
                by = cy >> block_shift
                bz = cz >> block_shift
                if bx != lbx or by != lby or bz != lbz:
                    lbx = bx
                    lby = by
                    lbz = bz
                    in_released = released.contains(_pack(bx, by, bz))
            if not in_released:
                out.add(_pack(cx, cy, cz))
            if rx > 0 and (ry == 0 or tmx <= tmy) and (rz == 0 or tmx <= tmz):
                cx += stx
                tmx += tdx
                rx -= 1
            elif ry > 0 and (rz == 0 or tmy <= tmz):
                cy += sty
                tmy += tdy
                ry -= 1
            else:
                cz += stz
                tmz += tdz
                rz -= 1
    return out.to_sorted()


cdef inline Py_ssize_t _bsearch(const int64_t[::1] arr, int64_t key) noexcept nogil:
    cdef Py_ssize_t lo = 0, hi = arr.shape[0], mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if arr[mid] < key:
            lo = mid + 1
        else:
            hi = mid
    if lo < arr.shape[0] and arr[lo] == key:
        return lo
    return -1


def neighbors_reach(keys, int radius, int tau, block_keys, block_slots, released_blocks, n_f, int block_shift):
    """For each voxel key: do all voxels within ``radius`` have ``n_f >= tau``?

    Voxels in absent blocks count as ``n_f = 0``, voxels in released blocks as
    reaching the threshold.
    """
    cdef const int64_t[::1] q = np.ascontiguousarray(keys, dtype=np.int64)
    cdef const int64_t[::1] bk = np.ascontiguousarray(block_keys, dtype=np.int64)
    cdef const int64_t[::1] bs = np.ascontiguousarray(block_slots, dtype=np.int64)
    cdef const int64_t[::1] rel = np.ascontiguousarray(released_blocks, dtype=np.int64)
    cdef const int32_t[:, ::1] nf = n_f
    out_arr = np.zeros(q.shape[0], dtype=np.bool_)
    cdef cnp.npy_bool[::1] out = out_arr
    cdef int64_t lmask = (1 << block_shift) - 1
    cdef int64_t x, y, z, vx, vy, vz, bx, by, bz, key, local
    cdef int64_t lbx = 0, lby = 0, lbz = 0
    cdef Py_ssize_t i, pos, slot = -1
    cdef int state = 0  # 0 absent, 1 allocated, 2 released
    cdef bint have_block, ok
    cdef int ddx, ddy, ddz

    for i in range(q.shape[0]):
        key = q[i]
        x = ((key >> 42) & AXIS_MASK) - KEY_OFFSET
        y = ((key >> 21) & AXIS_MASK) - KEY_OFFSET
        z = (key & AXIS_MASK) - KEY_OFFSET
        ok = True
        have_block = False
        for ddx in range(-radius, radius + 1):
            if not ok:
                break
            for ddy in range(-radius, radius + 1):
                if not ok:
                    break
                for ddz in range(-radius, radius + 1):
                    vx = x + ddx
                    vy = y + ddy
                    vz = z + ddz
                    bx = vx >> block_shift
                    by = vy >> block_shift
                    bz = vz >> block_shift
                    if not have_block or bx != lbx or by != lby or bz != lbz:
                        have_block = True
                        lbx = bx
                        lby = by
                        lbz = bz
                        pos = _bsearch(bk, _pack(bx, by, bz))
                        if pos >= 0:
                            state = 1
                            slot = bs[pos]
                        elif _bsearch(rel, _pack(bx, by, bz)) >= 0:
                            state = 2
                        else:
                            state = 0
                    if state == 2:
                        continue
                    if state == 0:
                        ok = False
                        break
                    local = ((vx & lmask) << (2 * block_shift)) | ((vy & lmask) << block_shift) | (vz & lmask)
                    if nf[slot, local] < tau:
                        ok = False
                        break
        out[i] = ok
    return out_arr
