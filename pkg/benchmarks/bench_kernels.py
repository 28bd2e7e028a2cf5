"""Compare the compiled and numpy kernel backends on identical inputs.

    python benchmarks/bench_kernels.py [--rays 20000] [--repeat 5]

Both backends are imported directly, so no environment switch is needed.
Outputs are checked for equality before timings are reported.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from freevox import _kernels_py
from freevox.grid import FreeSpaceMap, GridConfig, pack_keys

try:
    from freevox import _kernels as _kernels_c
except ImportError:  # extension not built
    _kernels_c = None


def _best(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def ray_case(n_rays: int, length: float, rng: np.random.Generator):
    origin = rng.uniform(-1, 1, 3)
    d = rng.normal(size=(n_rays, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    ends = origin + d * rng.uniform(0.2 * length, length, (n_rays, 1))
    return origin, ends


def neighbour_case(cfg: GridConfig, n_queries: int, rng: np.random.Generator):
    fmap = FreeSpaceMap(cfg)
    idx = rng.integers(-40, 40, size=(60000, 3))
    keys = np.unique(pack_keys(idx))
    slots, local = fmap.ensure(keys)
    fmap.n_f[slots, local] = rng.integers(0, 10, keys.size)
    queries = np.unique(pack_keys(rng.integers(-38, 38, size=(n_queries, 3))))
    return fmap, queries


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rays", type=int, default=20000)
    ap.add_argument("--length", type=float, default=30.0)
    ap.add_argument("--queries", type=int, default=20000)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    if _kernels_c is None:
        raise SystemExit("compiled extension not available; run `pip install -e . --no-build-isolation`")

    rng = np.random.default_rng(args.seed)
    cfg = GridConfig()
    shift = cfg.block_shift
    rows = []

    origin, ends = ray_case(args.rays, args.length, rng)
    released = np.empty(0, dtype=np.int64)
    run = {name: (lambda m=mod: m.traverse_rays(origin, ends, cfg.s_v, released, shift))
           for name, mod in (("cython", _kernels_c), ("python", _kernels_py))}
    assert np.array_equal(run["cython"](), run["python"]()), "traverse_rays backends disagree"
    rows.append((f"traverse_rays ({args.rays} rays, {args.length:g} m)",
                 _best(run["cython"], args.repeat), _best(run["python"], args.repeat)))

    fmap, queries = neighbour_case(cfg, args.queries, rng)
    block_keys, block_slots = fmap.block_index()
    call = (block_keys, block_slots, fmap.released_keys(), fmap.n_f)
    run = {name: (lambda m=mod: m.neighbors_reach(queries, 1, cfg.tau_f, *call, shift))
           for name, mod in (("cython", _kernels_c), ("python", _kernels_py))}
    assert np.array_equal(run["cython"](), run["python"]()), "neighbors_reach backends disagree"
    rows.append((f"neighbors_reach ({queries.size} voxels, radius 1)",
                 _best(run["cython"], args.repeat), _best(run["python"], args.repeat)))

    print(f"{'kernel':48s} {'cython ms':>10s} {'python ms':>10s} {'speedup':>8s}")
    for name, tc, tp in rows:
        print(f"{name:48s} {1000 * tc:10.2f} {1000 * tp:10.2f} {tp / tc:7.1f}x")


if __name__ == "__main__":
    main()
