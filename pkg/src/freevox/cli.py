"""``freevox`` command line: run, eval, synth, bench.

Exit codes: 0 success, 1 input or format error, 2 configuration error.
Progress goes to stderr (level from ``FREEVOX_LOG_LEVEL``); results go to files.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .evaluate import build_ground_truth, score, score_within_range
from .frontend import Scan
from .io import Dataset, FormatError, SceneError, load_scene, read_map, simulate, write_dataset, write_map, write_metrics
from .io.kitti import DEFAULT_DYNAMIC_CLASSES
from .pipeline import STAGES, ConfigError, Pipeline, PipelineConfig, _merge, build_config

log = logging.getLogger("freevox")

EXIT_OK, EXIT_INPUT, EXIT_CONFIG = 0, 1, 2


class Source:
    """Frames from a dataset directory, or simulated from a scene name or file."""

    def __init__(self, location: str, dynamic_classes=DEFAULT_DYNAMIC_CLASSES):
        path = Path(location)
        if path.is_dir():
            self.dataset: Dataset | None = Dataset(path, dynamic_classes)
            self.pipeline_doc = dict(self.dataset.meta.get("pipeline", {}))
            self._frames = None
        else:
            scene = load_scene(location)
            self.dataset = None
            self.pipeline_doc = dict(scene.pipeline)
            self._frames = simulate(scene)

    def __len__(self) -> int:
        return len(self.dataset) if self.dataset is not None else len(self._frames)

    def frame(self, i: int):
        return self.dataset.frame(i) if self.dataset is not None else self._frames[i]

    def frames(self, limit: int | None = None):
        n = len(self) if limit is None else min(limit, len(self))
        for i in range(n):
            yield self.frame(i)

    @property
    def has_labels(self) -> bool:
        if self.dataset is not None:
            return self.dataset.has_labels
        return all(fr.dynamic is not None for fr in self._frames)


def _parse_classes(text: str) -> frozenset[int]:
    out: set[int] = set()
    for part in text.split(","):
        lo, _, hi = part.partition("-")
        out.update(range(int(lo), int(hi or lo) + 1))
    return frozenset(out)


def resolve_config(args, base_doc: dict | None = None) -> tuple[PipelineConfig, list[str]]:
    """Preset < dataset suggestion < --config file < flags < --set overrides."""
    import yaml

    doc = dict(base_doc or {})
    if args.config:
        try:
            file_doc = yaml.safe_load(Path(args.config).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"{args.config}: {exc}") from None
        if not isinstance(file_doc, dict):
            raise ConfigError(f"{args.config}: configuration must be a mapping")
        doc = _merge(doc, file_doc)
    overrides: list[str] = []
    if args.preset:
        overrides.append(f"preset={args.preset}")
    if getattr(args, "no_backend", False):
        overrides.append("enable_backend=false")
    if getattr(args, "no_raycast_enh", False):
        overrides.append("enable_raycast_enhancement=false")
    if getattr(args, "max_range", None) is not None:
        overrides.append(f"max_ray_length={args.max_range}")
    overrides += list(args.set or [])
    cfg = build_config(doc, overrides)
    voxel = getattr(args, "voxel_size", None)
    if voxel is not None:
        # scale the whole hierarchy so the voxel edge matches, keeping ratios
        g = cfg.grid.as_dict()
        f = voxel / g["s_v"]
        extra = [f"grid.s_s={g['s_s'] * f!r}", f"grid.s_v={voxel!r}", f"grid.s_b={g['s_b'] * f!r}"]
        overrides += extra
        cfg = build_config(doc, overrides)
    return cfg, overrides


def _percentiles(values) -> dict:
    arr = np.asarray(values, dtype=float) * 1000.0
    return {"median_ms": float(np.median(arr)), "p95_ms": float(np.percentile(arr, 95)), "mean_ms": float(arr.mean())}


def replay(source: Source, cfg: PipelineConfig, limit: int | None = None, on_step=None) -> tuple[Pipeline, list[dict]]:
    pipe = Pipeline(cfg)
    timings = []
    n = len(source) if limit is None else min(limit, len(source))
    for k, fr in enumerate(source.frames(limit)):
        labeled = pipe.step(Scan(fr.points, fr.pose, k + 1))
        timings.append(pipe.last.timings)
        if on_step is not None:
            on_step(k, labeled)
        if (k + 1) % 10 == 0 or k + 1 == n:
            log.info("step %d/%d  %.1f ms", k + 1, n, 1000 * pipe.last.timings["total"])
    return pipe, timings


# --------------------------------------------------------------------------
# subcommands


def cmd_run(args) -> int:
    source = Source(args.input)
    cfg, overrides = resolve_config(args, source.pipeline_doc)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    label_dir = out / "labels"
    if args.save_labels:
        label_dir.mkdir(exist_ok=True)

    def save(k, labeled):
        if args.save_labels:
            (label_dir / f"{k:06d}.dyn").write_bytes(labeled.labels.astype(np.uint8).tobytes())

    log.info("replaying %d frames (%s preset)", len(source), cfg.preset)
    pipe, timings = replay(source, cfg, args.frames, save)
    snap = pipe.snapshot()
    snap.config = {**snap.config, "overrides": overrides}
    write_map(out / "map.ply", snap)
    latency = {stage: _percentiles([t[stage] for t in timings]) for stage in (*STAGES, "total")} if timings else {}
    doc = {"steps": len(timings), "latency": latency, "config": cfg.as_dict(), "overrides": overrides}
    (out / "latency.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    log.info("map: %d points -> %s", snap.points.shape[0], out / "map.ply")
    return EXIT_OK


def cmd_eval(args) -> int:
    points, meta = read_map(args.map)
    classes = _parse_classes(args.dynamic_classes) if args.dynamic_classes else DEFAULT_DYNAMIC_CLASSES
    source = Source(args.dataset, classes)
    if not source.has_labels:
        raise FormatError(f"{args.dataset}: ground-truth labels are missing")
    eval_voxel = args.voxel_size or meta.get("config", {}).get("eval_voxel") or 0.2
    frames = list(source.frames(meta.get("timestep") or None))
    gt = build_ground_truth(frames, eval_voxel)
    if args.max_range is not None:
        traj = np.array([fr.pose for fr in frames])
        report = score_within_range(points, gt, eval_voxel, args.max_range, traj)
    else:
        report = score(points, gt, eval_voxel)
    params = {"map": meta, "dataset": str(args.dataset), "frames": len(frames), "dynamic_classes": sorted(classes)}
    if args.out:
        write_metrics(args.out, report, params)
    log.info("%s", report.line())
    print(report.line(), file=sys.stderr)
    return EXIT_OK


def cmd_synth(args) -> int:
    scene = load_scene(args.scenario)
    root = write_dataset(scene, args.out)
    log.info("wrote %d frames of %s to %s", scene.n_frames, scene.name, root)
    return EXIT_OK


def cmd_bench(args) -> int:
    source = Source(args.input)
    cfg, overrides = resolve_config(args, source.pipeline_doc)
    if args.repetitions < 1:
        raise ConfigError("--repetitions must be at least 1")
    samples = []
    for rep in range(args.repetitions):
        t0 = time.perf_counter()
        _, timings = replay(source, cfg, args.frames)
        wall = time.perf_counter() - t0
        sample = {stage: 1000 * float(np.mean([t[stage] for t in timings])) for stage in (*STAGES, "total")}
        totals = [1000 * t["total"] for t in timings]
        sample["step_median"] = float(np.median(totals))
        sample["step_p95"] = float(np.percentile(totals, 95))
        sample["wall_s"] = wall
        samples.append(sample)
        log.info("repetition %d/%d: median step %.1f ms", rep + 1, args.repetitions, sample["step_median"])
    keys = list(samples[0])
    doc: dict = {"repetitions": args.repetitions, "steps": len(timings), "config": cfg.as_dict(), "overrides": overrides}
    if args.repetitions == 1:
        doc["sample_ms"] = samples[0]
    else:
        doc["median_ms"] = {k: float(np.median([s[k] for s in samples])) for k in keys}
        doc["p95_ms"] = {k: float(np.percentile([s[k] for s in samples], 95)) for k in keys}
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# --------------------------------------------------------------------------


def _config_flags(p: argparse.ArgumentParser, ablations: bool = True) -> None:
    p.add_argument("--config", help="YAML configuration file")
    p.add_argument("--preset", choices=["outdoor", "indoor", "sparse"])
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any configuration key, e.g. grid.tau_f=3")
    p.add_argument("--voxel-size", type=float, help="free-space voxel edge (m); the grid hierarchy is scaled to match")
    p.add_argument("--max-range", type=float, help="clip measured rays to this length (m)")
    if ablations:
        p.add_argument("--no-backend", action="store_true", help="disable map clearing")
        p.add_argument("--no-raycast-enh", action="store_true", help="disable virtual free-space rays")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="freevox", description="Online dynamic-object removal for LiDAR maps.")
    ap.add_argument("--version", action="version", version=f"freevox {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="replay a dataset or scene and export the static map")
    p.add_argument("input", help="KITTI-style dataset directory, bundled scene name, or scene file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--frames", type=int, help="only the first N frames")
    p.add_argument("--save-labels", action="store_true", help="write per-point dynamism levels per scan")
    _config_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="score a map against ground-truth labels")
    p.add_argument("map", help="map PLY written by run")
    p.add_argument("dataset", help="dataset directory, bundled scene name, or scene file")
    p.add_argument("--voxel-size", type=float, help="evaluation voxel edge (m); default from the map's config")
    p.add_argument("--max-range", type=float, help="only score voxels within this distance of the trajectory")
    p.add_argument("--dynamic-classes", help="semantic ids counted as dynamic, e.g. 252-259")
    p.add_argument("--out", help="metrics JSON path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="write a synthetic scene as a KITTI-style dataset")
    p.add_argument("scenario", help="bundled scenario name or scene file")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("bench", help="per-stage step latency")
    p.add_argument("input", help="dataset directory, bundled scene name, or scene file")
    p.add_argument("--repetitions", type=int, default=3)
    p.add_argument("--frames", type=int, help="only the first N frames")
    p.add_argument("--out", help="write the statistics here instead of stdout")
    _config_flags(p)
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=os.environ.get("FREEVOX_LOG_LEVEL", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, SceneError, OSError, ValueError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
