"""KITTI-style dataset layout.

::

    <root>/velodyne/000000.bin   float32 records (x, y, z, intensity), sensor frame
    <root>/labels/000000.label   uint32 per point, lower 16 bits = semantic class
    <root>/poses.txt             one row-major 3x4 pose per line
    <root>/calib.txt             optional; a "Tr:" line maps sensor to pose frame
    <root>/meta.yaml             optional; sensor model and suggested pipeline config
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np
import yaml

DEFAULT_DYNAMIC_CLASSES = frozenset(range(252, 260))
RECORD_BYTES = 16


class FormatError(ValueError):
    """Malformed dataset file; the message names the file and position."""


@dataclass
class DatasetFrame:
    points: np.ndarray  # (N, 3) sensor frame, float64
    pose: np.ndarray  # world <- sensor
    dynamic: np.ndarray | None = None  # per-point ground truth
    intensity: np.ndarray | None = None
    index: int = 0
    labels: np.ndarray | None = None  # semantic class ids, when known

    def __post_init__(self) -> None:
        if self.dynamic is not None and len(self.dynamic) != len(self.points):
            raise ValueError(f"{len(self.dynamic)} flags for {len(self.points)} points")

    def world_points(self) -> np.ndarray:
        return self.points @ self.pose[:3, :3].T + self.pose[:3, 3]


def read_scan_bin(path: str | Path) -> np.ndarray:
    """``(N, 4)`` float32 array of x, y, z, intensity."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) % RECORD_BYTES:
        whole = len(raw) - len(raw) % RECORD_BYTES
        raise FormatError(f"{path}: truncated record at byte offset {whole} (size {len(raw)} is not a multiple of 16)")
    return np.frombuffer(raw, dtype="<f4").reshape(-1, 4).astype(np.float32)


def write_scan_bin(path: str | Path, points: np.ndarray, intensity: np.ndarray | None = None) -> None:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    rec = np.zeros((pts.shape[0], 4), dtype="<f4")
    rec[:, :3] = pts
    if intensity is not None:
        rec[:, 3] = intensity
    Path(path).write_bytes(rec.tobytes())


def _parse_row(fields: list[str], path: Path, lineno: int) -> np.ndarray:
    if len(fields) != 12:
        raise FormatError(f"{path}:{lineno}: expected 12 values, got {len(fields)}")
    try:
        vals = np.array([float(x) for x in fields])
    except ValueError as exc:
        raise FormatError(f"{path}:{lineno}: {exc}") from None
    if not np.isfinite(vals).all():
        raise FormatError(f"{path}:{lineno}: non-finite value")
    T = np.eye(4)
    T[:3, :4] = vals.reshape(3, 4)
    return T


def read_calib(path: str | Path) -> np.ndarray:
    """The sensor-to-pose-frame transform from a ``Tr:`` line."""
    path = Path(path)
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        key, _, rest = line.partition(":")
        if key.strip() == "Tr":
            return _parse_row(rest.split(), path, lineno)
    raise FormatError(f"{path}: no 'Tr:' line")


def read_poses(path: str | Path, calib_path: str | Path | None = None) -> np.ndarray:
    """``(F, 4, 4)`` poses; with a calibration each becomes ``Tr^-1 @ P @ Tr``."""
    path = Path(path)
    poses = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        poses.append(_parse_row(line.split(), path, lineno))
    out = np.array(poses).reshape(-1, 4, 4)
    if calib_path is not None:
        Tr = read_calib(calib_path)
        out = np.linalg.inv(Tr)[None] @ out @ Tr[None]
    return out


def write_poses(path: str | Path, poses: np.ndarray) -> None:
    rows = [" ".join(repr(float(v)) for v in T[:3, :4].ravel()) for T in np.asarray(poses)]
    Path(path).write_text("".join(r + "\n" for r in rows))


def write_calib(path: str | Path, Tr: np.ndarray | None = None) -> None:
    Tr = np.eye(4) if Tr is None else np.asarray(Tr)
    Path(path).write_text("Tr: " + " ".join(repr(float(v)) for v in Tr[:3, :4].ravel()) + "\n")


def read_label_ids(path: str | Path, n_points: int | None = None) -> np.ndarray:
    """Semantic class per point (instance id in the upper 16 bits dropped)."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) % 4:
        raise FormatError(f"{path}: truncated label at byte offset {len(raw) - len(raw) % 4}")
    ids = np.frombuffer(raw, dtype="<u4") & 0xFFFF
    if n_points is not None and ids.size != n_points:
        raise FormatError(f"{path}: {ids.size} labels for {n_points} points")
    return ids.astype(np.uint32)


def read_labels(
    path: str | Path, n_points: int | None = None, dynamic_classes=DEFAULT_DYNAMIC_CLASSES
) -> np.ndarray:
    """Per-point dynamic flags."""
    ids = read_label_ids(path, n_points)
    return np.isin(ids, np.fromiter(dynamic_classes, dtype=np.uint32))


def write_labels(path: str | Path, labels: np.ndarray) -> None:
    Path(path).write_bytes(np.asarray(labels, dtype="<u4").tobytes())


class Dataset:
    """Lazy reader over a KITTI-style sequence directory."""

    def __init__(self, root: str | Path, dynamic_classes=DEFAULT_DYNAMIC_CLASSES):
        self.root = Path(root)
        self.dynamic_classes = frozenset(dynamic_classes)
        scan_dir = self.root / "velodyne"
        if not scan_dir.is_dir():
            raise FormatError(f"{self.root}: no velodyne/ directory")
        self.scan_paths = sorted(scan_dir.glob("*.bin"))
        pose_path = self.root / "poses.txt"
        if not pose_path.is_file():
            raise FormatError(f"{self.root}: no poses.txt")
        calib = self.root / "calib.txt"
        self.poses = read_poses(pose_path, calib if calib.is_file() else None)
        if len(self.poses) != len(self.scan_paths):
            raise FormatError(f"{pose_path}: {len(self.poses)} poses for {len(self.scan_paths)} scans")
        meta = self.root / "meta.yaml"
        self.meta: dict = (yaml.safe_load(meta.read_text()) or {}) if meta.is_file() else {}

    def __len__(self) -> int:
        return len(self.scan_paths)

    def label_path(self, i: int) -> Path:
        return self.root / "labels" / (self.scan_paths[i].stem + ".label")

    @property
    def has_labels(self) -> bool:
        return all(self.label_path(i).is_file() for i in range(len(self)))

    def frame(self, i: int, with_labels: bool = True) -> DatasetFrame:
        rec = read_scan_bin(self.scan_paths[i])
        dyn = None
        if with_labels and self.label_path(i).is_file():
            ids = read_label_ids(self.label_path(i), rec.shape[0])
            dyn = np.isin(ids, np.fromiter(self.dynamic_classes, dtype=np.uint32))
        else:
            ids = None
        return DatasetFrame(rec[:, :3].astype(np.float64), self.poses[i], dyn, rec[:, 3], i, ids)

    def __iter__(self) -> Iterator[DatasetFrame]:
        for i in range(len(self)):
            yield self.frame(i)


def write_dataset_frames(root: str | Path, frames: list[DatasetFrame], meta: dict | None = None) -> Path:
    """Write frames (and their semantic labels, if every frame has them) as a sequence directory."""
    root = Path(root)
    (root / "velodyne").mkdir(parents=True, exist_ok=True)
    with_labels = all(fr.labels is not None for fr in frames)
    if with_labels:
        (root / "labels").mkdir(exist_ok=True)
    for k, fr in enumerate(frames):
        write_scan_bin(root / "velodyne" / f"{k:06d}.bin", fr.points, fr.intensity)
        if with_labels:
            write_labels(root / "labels" / f"{k:06d}.label", fr.labels)
    write_poses(root / "poses.txt", np.array([fr.pose for fr in frames]).reshape(-1, 4, 4))
    write_calib(root / "calib.txt")
    if meta is not None:
        (root / "meta.yaml").write_text(yaml.safe_dump(meta, sort_keys=True))
    return root
