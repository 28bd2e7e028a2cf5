"""Synthetic LiDAR scenes with exact per-point ground truth.

Scenes are YAML documents::

    name: room-crossing
    rate_hz: 10                  # scan rate; frame k is taken at t = k / rate_hz
    frames: 100
    sensor:
      model: {preset: synthetic-64}   # beams fire through every pixel centre
      max_range: 30.0
      min_range: 0.0
      trajectory:                     # piecewise linear, held constant past the ends
        - {t: 0.0, position: [5.0, 2.5, 1.2], yaw_deg: 0.0}
    static:
      - {box: {min: [0, 0, 0], max: [10, 10, 3]}, label: 50}
      - {plane: {normal: [0, 0, 1], offset: 0.0}, label: 40}
    dynamic:
      - size: [1.0, 1.0, 2.0]         # axis-aligned box, positioned by its centre
        label: 252
        trajectory: [{t: 0, position: [1, 6.5, 1]}, {t: 8, position: [9, 6.5, 1]}]
    pipeline: {preset: indoor}        # suggested pipeline configuration

A ray starting inside a box hits its far side, so a single box models a room.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from ..frontend import SensorModel
from .kitti import DatasetFrame, write_dataset_frames

HIT_EPS = 1e-9
BUNDLED = ("room-crossing", "trailing-vehicle", "corridor", "sparse-sensor", "open-sky")


class SceneError(ValueError):
    pass


@dataclass(frozen=True)
class Box:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]
    label: int = 50

    def __post_init__(self) -> None:
        if not all(math.isfinite(a) and math.isfinite(b) and a < b for a, b in zip(self.lo, self.hi)):
            raise SceneError(f"degenerate box {self.lo} .. {self.hi}")


@dataclass(frozen=True)
class Plane:
    """Points ``x`` with ``normal . x = offset``."""

    normal: tuple[float, float, float]
    offset: float
    label: int = 40

    def __post_init__(self) -> None:
        n = np.asarray(self.normal, dtype=float)
        if n.shape != (3,) or not np.isfinite(n).all() or np.linalg.norm(n) == 0:
            raise SceneError(f"degenerate plane normal {self.normal}")


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray  # (K,) strictly increasing
    positions: np.ndarray  # (K, 3)
    yaws: np.ndarray  # (K,) radians

    @classmethod
    def from_keyframes(cls, keys: list[dict]) -> Trajectory:
        if not keys:
            raise SceneError("trajectory needs at least one keyframe")
        try:
            times = np.array([float(k.get("t", 0.0)) for k in keys])
            pos = np.array([[float(c) for c in k["position"]] for k in keys])
            yaws = np.radians([float(k.get("yaw_deg", 0.0)) for k in keys])
        except (KeyError, TypeError, ValueError) as exc:
            raise SceneError(f"bad trajectory keyframe: {exc}") from None
        if pos.shape != (len(keys), 3) or not np.isfinite(pos).all() or not np.isfinite(times).all():
            raise SceneError("trajectory positions must be finite 3-vectors")
        if np.any(np.diff(times) <= 0):
            raise SceneError("trajectory times must be strictly increasing")
        return cls(times, pos, yaws)

    def position(self, t: float) -> np.ndarray:
        return np.array([np.interp(t, self.times, self.positions[:, a]) for a in range(3)])

    def yaw(self, t: float) -> float:
        return float(np.interp(t, self.times, self.yaws))


@dataclass(frozen=True)
class MovingBox:
    size: tuple[float, float, float]
    trajectory: Trajectory
    label: int = 252

    def __post_init__(self) -> None:
        if not all(math.isfinite(s) and s > 0 for s in self.size):
            raise SceneError(f"degenerate moving box size {self.size}")

    def box_at(self, t: float) -> Box:
        c = self.trajectory.position(t)
        half = np.asarray(self.size) / 2
        return Box(tuple(c - half), tuple(c + half), self.label)


@dataclass
class SimSensor:
    model: SensorModel
    trajectory: Trajectory
    max_range: float = 50.0
    min_range: float = 0.0

    def beams(self) -> np.ndarray:
        """Unit beam directions in the sensor frame, one per pixel centre, row-major over the image."""
        phi, theta = self.model.pixel_bearings()
        mask = self.model.mask
        phi, theta = phi[mask], theta[mask]
        return np.stack([np.cos(theta) * np.cos(phi), np.cos(theta) * np.sin(phi), np.sin(theta)], axis=1)

    def pose(self, t: float) -> np.ndarray:
        yaw = self.trajectory.yaw(t)
        c, s = math.cos(yaw), math.sin(yaw)
        T = np.eye(4)
        T[:3, :3] = [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
        T[:3, 3] = self.trajectory.position(t)
        return T


@dataclass
class SyntheticScene:
    name: str
    rate_hz: float
    n_frames: int
    sensor: SimSensor
    static: list = field(default_factory=list)
    dynamic: list[MovingBox] = field(default_factory=list)
    pipeline: dict = field(default_factory=dict)
    source: dict = field(default_factory=dict)

    def time(self, k: int) -> float:
        return k / self.rate_hz

    def primitives_at(self, t: float) -> list[tuple[object, bool]]:
        return [(p, False) for p in self.static] + [(d.box_at(t), True) for d in self.dynamic]


# --------------------------------------------------------------------------
# intersection


def ray_box_distance(origin: np.ndarray, dirs: np.ndarray, box: Box) -> np.ndarray:
    """First positive hit distance per ray (inf if none); from inside, the exit distance."""
    lo = np.asarray(box.lo) - origin
    hi = np.asarray(box.hi) - origin
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = lo / dirs
        t2 = hi / dirs
    tmin = np.minimum(t1, t2)
    tmax = np.maximum(t1, t2)
    # rays parallel to a slab are inside it for all t or never
    parallel = dirs == 0
    inside = (lo <= 0) & (hi >= 0)
    tmin = np.where(parallel, np.where(inside, -np.inf, np.inf), tmin)
    tmax = np.where(parallel, np.where(inside, np.inf, -np.inf), tmax)
    near = tmin.max(axis=1)
    far = tmax.min(axis=1)
    hit = near <= far
    t = np.where(near > HIT_EPS, near, far)
    return np.where(hit & (t > HIT_EPS), t, np.inf)


def ray_plane_distance(origin: np.ndarray, dirs: np.ndarray, plane: Plane) -> np.ndarray:
    n = np.asarray(plane.normal, dtype=float)
    denom = dirs @ n
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (plane.offset - n @ origin) / denom
    return np.where((denom != 0) & (t > HIT_EPS), t, np.inf)


def _distance(origin, dirs, prim) -> np.ndarray:
    if isinstance(prim, Box):
        return ray_box_distance(origin, dirs, prim)
    return ray_plane_distance(origin, dirs, prim)


def nearest_hit(scene: SyntheticScene, t: float, origin, direction) -> tuple[float, int]:
    """Scalar nearest intersection: distance (inf if none) and primitive index (-1 if none).

    Primitive indices run over static primitives first, then moving boxes.
    Written with plain floats so it can serve as an independent check on
    :func:`simulate_scan`.
    """
    o = [float(c) for c in origin]
    norm = math.sqrt(sum(float(c) ** 2 for c in direction))
    d = [float(c) / norm for c in direction]
    best, best_i = math.inf, -1
    for i, (prim, _) in enumerate(scene.primitives_at(t)):
        if isinstance(prim, Box):
            near, far = -math.inf, math.inf
            for a in range(3):
                lo, hi = prim.lo[a] - o[a], prim.hi[a] - o[a]
                if d[a] == 0.0:
                    if lo > 0 or hi < 0:
                        near, far = math.inf, -math.inf
                    continue
                ta, tb = sorted((lo / d[a], hi / d[a]))
                near, far = max(near, ta), min(far, tb)
            if near > far:
                continue
            dist = near if near > HIT_EPS else far
        else:
            den = sum(n * di for n, di in zip(prim.normal, d))
            if den == 0.0:
                continue
            dist = (prim.offset - sum(n * oi for n, oi in zip(prim.normal, o))) / den
        if HIT_EPS < dist < best:
            best, best_i = dist, i
    return best, best_i


def simulate_scan(scene: SyntheticScene, k: int) -> DatasetFrame:
    """Frame ``k``: nearest hit per beam within the sensor's range, in the sensor frame."""
    t = scene.time(k)
    sensor = scene.sensor
    pose = sensor.pose(t)
    local = sensor.beams()
    dirs = local @ pose[:3, :3].T
    origin = pose[:3, 3]
    prims = scene.primitives_at(t)
    best = np.full(local.shape[0], np.inf)
    which = np.full(local.shape[0], -1, dtype=np.int64)
    for i, (prim, _) in enumerate(prims):
        dist = _distance(origin, dirs, prim)
        closer = dist < best
        best[closer] = dist[closer]
        which[closer] = i
    keep = (best <= sensor.max_range) & (best >= sensor.min_range) & (which >= 0)
    dynamic_prim = np.array([dyn for _, dyn in prims], dtype=bool)
    label_of = np.array([getattr(p, "label", 0) for p, _ in prims], dtype=np.uint32)
    points = local[keep] * best[keep, None]
    w = which[keep]
    return DatasetFrame(
        points=points,
        pose=pose,
        dynamic=dynamic_prim[w] if prims else np.zeros(0, dtype=bool),
        intensity=np.zeros(points.shape[0], dtype=np.float32),
        index=k,
        labels=label_of[w] if prims else np.zeros(0, dtype=np.uint32),
    )


def simulate(scene: SyntheticScene) -> list[DatasetFrame]:
    return [simulate_scan(scene, k) for k in range(scene.n_frames)]


def _slab_span(origin: np.ndarray, dirs: np.ndarray, lo, hi) -> tuple[np.ndarray, np.ndarray]:
    lo = np.asarray(lo) - origin
    hi = np.asarray(hi) - origin
    with np.errstate(divide="ignore", invalid="ignore"):
        t1, t2 = lo / dirs, hi / dirs
    parallel = dirs == 0
    inside = (lo <= 0) & (hi >= 0)
    near = np.where(parallel, np.where(inside, -np.inf, np.inf), np.minimum(t1, t2)).max(axis=1)
    far = np.where(parallel, np.where(inside, np.inf, -np.inf), np.maximum(t1, t2)).min(axis=1)
    return near, far


def free_view_runs(
    scene: SyntheticScene, k: int, cells: np.ndarray, cell: float, limit: int, within: Box | None = None
) -> np.ndarray:
    """Per cell, how many frames directly before ``k`` saw through it, capped at ``limit``.

    ``cells`` are integer grid indices at edge ``cell``, optionally clipped to
    the box ``within`` (e.g. the volume an object fills at ``k``). A frame sees
    through a cell if some beam enters it before reaching its own return (or
    the sensor's range). Confirming a cell free takes at least the free-space
    threshold of such frames in a row.
    """
    cells = np.asarray(cells, dtype=np.int64).reshape(-1, 3)
    lo = cells * cell
    hi = lo + cell
    if within is not None:
        lo = np.maximum(lo, within.lo)
        hi = np.minimum(hi, within.hi)
        if np.any(hi <= lo):
            raise ValueError("a cell does not overlap the clipping box")
    runs = np.zeros(len(cells), dtype=np.int64)
    alive = np.ones(len(cells), dtype=bool)
    local = scene.sensor.beams()
    for j in range(k - 1, max(k - 1 - limit, -1), -1):
        if not alive.any():
            break
        t = scene.time(j)
        pose = scene.sensor.pose(t)
        dirs = local @ pose[:3, :3].T
        origin = pose[:3, 3]
        near, far = _slab_span(origin, dirs, lo[alive].min(axis=0), hi[alive].max(axis=0))
        d = dirs[(near <= far) & (far > 0)]
        ret = np.full(d.shape[0], scene.sensor.max_range)
        for prim, _ in scene.primitives_at(t):
            ret = np.minimum(ret, _distance(origin, d, prim))
        for c in np.nonzero(alive)[0]:
            n, f = _slab_span(origin, d, lo[c], hi[c])
            if ((n <= f) & (f > 0) & (np.maximum(n, 0.0) < ret)).any():
                runs[c] += 1
            else:
                alive[c] = False
    return runs


# --------------------------------------------------------------------------
# scene documents


def _vec(v, what: str) -> tuple[float, float, float]:
    try:
        out = tuple(float(c) for c in v)
    except (TypeError, ValueError):
        raise SceneError(f"{what}: expected three numbers, got {v!r}") from None
    if len(out) != 3:
        raise SceneError(f"{what}: expected three numbers, got {v!r}")
    return out


def _sensor_model(doc: dict) -> SensorModel:
    from ..pipeline import ConfigError, _build_sensor

    try:
        return _build_sensor(doc)
    except ConfigError as exc:
        raise SceneError(str(exc)) from None


def scene_from_dict(doc: dict) -> SyntheticScene:
    if not isinstance(doc, dict):
        raise SceneError("scene must be a mapping")
    try:
        sensor_doc = doc["sensor"]
        sensor = SimSensor(
            model=_sensor_model(dict(sensor_doc.get("model", {"preset": "synthetic-64"}))),
            trajectory=Trajectory.from_keyframes(sensor_doc["trajectory"]),
            max_range=float(sensor_doc.get("max_range", 50.0)),
            min_range=float(sensor_doc.get("min_range", 0.0)),
        )
        static = []
        for item in doc.get("static", []):
            label = int(item.get("label", 50))
            if "box" in item:
                b = item["box"]
                static.append(Box(_vec(b["min"], "box min"), _vec(b["max"], "box max"), label))
            elif "plane" in item:
                p = item["plane"]
                static.append(Plane(_vec(p["normal"], "plane normal"), float(p["offset"]), int(item.get("label", 40))))
            else:
                raise SceneError(f"static primitive needs 'box' or 'plane': {item!r}")
        dynamic = [
            MovingBox(_vec(d["size"], "size"), Trajectory.from_keyframes(d["trajectory"]), int(d.get("label", 252)))
            for d in doc.get("dynamic", [])
        ]
        scene = SyntheticScene(
            name=str(doc.get("name", "scene")),
            rate_hz=float(doc.get("rate_hz", 10.0)),
            n_frames=int(doc["frames"]),
            sensor=sensor,
            static=static,
            dynamic=dynamic,
            pipeline=dict(doc.get("pipeline", {})),
            source=copy.deepcopy(doc),
        )
    except KeyError as exc:
        raise SceneError(f"missing scene key {exc}") from None
    except (TypeError, AttributeError) as exc:
        raise SceneError(f"malformed scene: {exc}") from None
    if not (scene.rate_hz > 0 and scene.n_frames >= 0):
        raise SceneError("rate_hz must be positive and frames non-negative")
    if not (0 <= sensor.min_range < sensor.max_range):
        raise SceneError("need 0 <= min_range < max_range")
    return scene


def bundled_scene_path(name: str) -> Path:
    return Path(str(resources.files("freevox") / "scenarios" / f"{name}.yaml"))


def load_scene(name_or_path: str | Path) -> SyntheticScene:
    """A bundled scenario by name, or a scene document by path."""
    path = Path(name_or_path)
    if not path.is_file() and str(name_or_path) in BUNDLED:
        path = bundled_scene_path(str(name_or_path))
    if not path.is_file():
        raise SceneError(f"no scene file or bundled scenario named {str(name_or_path)!r}; bundled: {', '.join(BUNDLED)}")
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise SceneError(f"{path}: {exc}") from None
    return scene_from_dict(doc)


def write_dataset(scene: SyntheticScene, out_dir: str | Path) -> Path:
    """Simulate every frame and write a KITTI-style sequence with ground-truth labels."""
    meta = {"scene": scene.source, "name": scene.name, "rate_hz": scene.rate_hz, "pipeline": scene.pipeline}
    return write_dataset_frames(out_dir, simulate(scene), meta=meta)
