"""One full timestep of the mapping pipeline, plus configuration handling.

Configuration documents are YAML (or JSON) mappings::

    preset: outdoor            # outdoor | indoor | sparse
    grid:   {s_s: 0.1, s_v: 0.4, s_b: 3.2, tau_f: 6, tau_r: 20, n_m_radius: 1, n_a_radius: 2}
    sensor: {preset: hdl64, r_max: 50.0, r_m: 0.5, fill_radius: 2, fill_passes: null}
    enable_raycast_enhancement: true
    enable_backend: true
    eval_voxel: 0.2
    max_ray_length: null       # clip real rays (m); null = no clipping
    registry_compact_every: 50 # steps between timestep-registry compactions

Any key not given falls back to the preset. Explicit sensor angles can be
given as ``phi_min_deg``, ``phi_max_deg``, ``phi_res_deg`` and the ``theta_*``
counterparts. Dotted ``key=value`` overrides (``grid.tau_f=3``) are applied last.
"""

from __future__ import annotations

import copy
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .backend import TimestepRegistry, clear_map, extract_static_map, integrate
from .frontend import (
    SENSOR_PRESETS,
    FreeSpaceUpdate,
    LabeledScan,
    Scan,
    SensorModel,
    enhanced_endpoints,
    enhancement_region,
    estimate_free_space,
    label_points,
    project_depth_image,
    recover_free_depth,
)
from .grid import FreeSpaceMap, GridConfig, StaticSpaceMap
from .raycast import collect_scan_traversal


class ConfigError(ValueError):
    pass


PRESETS: dict[str, dict] = {
    "outdoor": {
        "grid": {"s_s": 0.1, "s_v": 0.4, "s_b": 3.2, "tau_f": 6, "tau_r": 20, "n_m_radius": 1, "n_a_radius": 2},
        "sensor": {"preset": "hdl64", "r_max": 50.0, "r_m": 0.5, "fill_radius": 2, "fill_passes": None},
        "enable_raycast_enhancement": True,
        "enable_backend": True,
        "eval_voxel": 0.2,
        "max_ray_length": None,
        "registry_compact_every": 50,
    },
}
PRESETS["indoor"] = copy.deepcopy(PRESETS["outdoor"])
PRESETS["indoor"]["grid"].update({"s_s": 0.05, "s_v": 0.2})
PRESETS["indoor"]["sensor"]["preset"] = "synthetic-64"
PRESETS["indoor"]["eval_voxel"] = 0.1
PRESETS["sparse"] = copy.deepcopy(PRESETS["outdoor"])
PRESETS["sparse"]["grid"]["tau_f"] = 3
PRESETS["sparse"]["sensor"]["preset"] = "vlp16"

_SENSOR_ANGLE_KEYS = ("phi_min_deg", "phi_max_deg", "phi_res_deg", "theta_min_deg", "theta_max_deg", "theta_res_deg")
_TOP_KEYS = {
    "preset",
    "grid",
    "sensor",
    "enable_raycast_enhancement",
    "enable_backend",
    "eval_voxel",
    "max_ray_length",
    "registry_compact_every",
}


@dataclass(frozen=True)
class PipelineConfig:
    grid: GridConfig = field(default_factory=GridConfig)
    sensor: SensorModel = field(default_factory=lambda: SensorModel.preset("hdl64"))
    enable_raycast_enhancement: bool = True
    enable_backend: bool = True
    eval_voxel: float = 0.2
    max_ray_length: float | None = None
    registry_compact_every: int = 50
    preset: str | None = None

    @classmethod
    def from_preset(cls, name: str = "outdoor", overrides: dict | None = None) -> PipelineConfig:
        return build_config({"preset": name, **(overrides or {})})

    def as_dict(self) -> dict:
        return {
            "preset": self.preset,
            "grid": self.grid.as_dict(),
            "sensor": self.sensor.as_dict(),
            "enable_raycast_enhancement": self.enable_raycast_enhancement,
            "enable_backend": self.enable_backend,
            "eval_voxel": self.eval_voxel,
            "max_ray_length": self.max_ray_length,
            "registry_compact_every": self.registry_compact_every,
        }


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def apply_overrides(doc: dict, overrides: list[str] | None) -> dict:
    """Apply ``dotted.key=value`` strings; values are parsed as YAML scalars."""
    doc = copy.deepcopy(doc)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        node = doc
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {item!r} descends into a scalar")
        node[parts[-1]] = yaml.safe_load(raw)
    return doc


def build_config(doc: dict | None = None, overrides: list[str] | None = None) -> PipelineConfig:
    doc = apply_overrides(doc or {}, overrides)
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
    preset = doc.get("preset") or "outdoor"
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    full = _merge(PRESETS[preset], {k: v for k, v in doc.items() if k != "preset"})
    try:
        grid = GridConfig(**full["grid"])
        sensor = _build_sensor(full["sensor"])
        max_len = full.get("max_ray_length")
        cfg = PipelineConfig(
            grid=grid,
            sensor=sensor,
            enable_raycast_enhancement=bool(full["enable_raycast_enhancement"]),
            enable_backend=bool(full["enable_backend"]),
            eval_voxel=float(full["eval_voxel"]),
            max_ray_length=None if max_len is None else float(max_len),
            registry_compact_every=int(full["registry_compact_every"]),
            preset=preset,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    if not cfg.eval_voxel > 0:
        raise ConfigError("eval_voxel must be positive")
    return cfg


def _build_sensor(doc: dict) -> SensorModel:
    doc = dict(doc)
    name = doc.pop("preset", None)
    angles = {k: doc.pop(k) for k in _SENSOR_ANGLE_KEYS if k in doc}
    doc.pop("fov_mask", None)
    if name is not None and name not in SENSOR_PRESETS:
        raise ConfigError(f"unknown sensor preset {name!r}; choose from {sorted(SENSOR_PRESETS)}")
    base = dict(zip(_SENSOR_ANGLE_KEYS, SENSOR_PRESETS[name])) if name else {}
    base.update(angles)
    missing = [k for k in _SENSOR_ANGLE_KEYS if k not in base]
    if missing:
        raise ConfigError(f"sensor needs a preset or explicit angles; missing {missing}")
    return SensorModel.from_degrees(*(float(base[k]) for k in _SENSOR_ANGLE_KEYS), **doc)


def load_config(path: str | Path | None = None, preset: str | None = None, overrides: list[str] | None = None) -> PipelineConfig:
    doc: dict = {}
    if path is not None:
        try:
            doc = yaml.safe_load(Path(path).read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: configuration must be a mapping")
    if preset is not None:
        doc["preset"] = preset
    return build_config(doc, overrides)


@dataclass
class PipelineState:
    free_map: FreeSpaceMap
    static_map: StaticSpaceMap
    registry: TimestepRegistry
    t: int = 0

    @classmethod
    def empty(cls, grid: GridConfig) -> PipelineState:
        return cls(FreeSpaceMap(grid), StaticSpaceMap(grid), TimestepRegistry())


STAGES = ("raycast", "free_space", "label", "integrate", "clear")


@dataclass
class StepResult:
    labeled: LabeledScan
    update: FreeSpaceUpdate
    timings: dict[str, float]


def step(state: PipelineState, scan: Scan, config: PipelineConfig) -> StepResult:
    """Advance ``state`` by one scan (in place)."""
    if scan.timestep != state.t + 1:
        raise ValueError(f"scan timestep {scan.timestep} does not follow state timestep {state.t}")
    sensor = config.sensor
    clock = time.perf_counter
    timings = {}

    t0 = clock()
    world = scan.world_points()
    if config.enable_raycast_enhancement:
        img = project_depth_image(scan, sensor)
        E = recover_free_depth(img, enhancement_region(img, sensor), sensor)
        virtual = enhanced_endpoints(E, sensor, scan.pose)
    else:
        virtual = np.empty((0, 3))
    trav = collect_scan_traversal(scan.origin, world, virtual, state.free_map, max_ray_length=config.max_ray_length)
    t1 = clock()
    update = estimate_free_space(trav, state.free_map)
    t2 = clock()
    labeled = label_points(world, state.free_map, scan.timestep)
    t3 = clock()
    integrate(labeled, state.static_map, state.registry, scan.timestep)
    t4 = clock()
    if config.enable_backend:
        clear_map(update.newly_free, state.static_map, state.registry, config.grid)
    if config.registry_compact_every and scan.timestep % config.registry_compact_every == 0:
        state.registry.compact(state.static_map)
    t5 = clock()

    state.t = scan.timestep
    for name, (a, b) in zip(STAGES, ((t0, t1), (t1, t2), (t2, t3), (t3, t4), (t4, t5))):
        timings[name] = b - a
    timings["total"] = t5 - t0
    return StepResult(labeled, update, timings)


@dataclass
class Snapshot:
    points: np.ndarray
    timestep: int
    config: dict

    @property
    def metadata(self) -> dict:
        return {"timestep": self.timestep, "n_points": int(self.points.shape[0]), "config": self.config}


def snapshot_static_map(state: PipelineState, config: PipelineConfig) -> Snapshot:
    return Snapshot(extract_static_map(state.static_map), state.t, config.as_dict())


class Pipeline:
    """Convenience owner of a config and its evolving state."""

    def __init__(self, config: PipelineConfig | None = None):
        self.config = config or PipelineConfig.from_preset("outdoor")
        self.state = PipelineState.empty(self.config.grid)
        self.last: StepResult | None = None

    @property
    def t(self) -> int:
        return self.state.t

    def step(self, scan: Scan) -> LabeledScan:
        self.last = step(self.state, scan, self.config)
        return self.last.labeled

    def step_points(self, points: np.ndarray, pose: np.ndarray) -> LabeledScan:
        return self.step(Scan(points, pose, self.state.t + 1))

    def snapshot(self) -> Snapshot:
        return snapshot_static_map(self.state, self.config)
