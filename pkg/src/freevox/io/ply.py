"""Binary little-endian PLY for map export, and JSON metrics documents."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

COMMENT_TAG = "freevox "


def write_ply(path: str | Path, points: np.ndarray, meta: dict | None = None) -> None:
    """Write xyz vertices as float64; ``meta`` goes into a single JSON header comment."""
    pts = np.ascontiguousarray(np.asarray(points, dtype="<f8").reshape(-1, 3))
    header = ["ply", "format binary_little_endian 1.0"]
    if meta is not None:
        header.append("comment " + COMMENT_TAG + json.dumps(meta, sort_keys=True, separators=(",", ":")))
    header += [f"element vertex {pts.shape[0]}", "property double x", "property double y", "property double z", "end_header"]
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(pts.tobytes())


def read_ply(path: str | Path) -> tuple[np.ndarray, dict]:
    """Read back what :func:`write_ply` wrote (double or float xyz, no other properties)."""
    from .kitti import FormatError

    path = Path(path)
    raw = path.read_bytes()
    end = raw.find(b"end_header\n")
    if not raw.startswith(b"ply\n") or end < 0:
        raise FormatError(f"{path}: not a PLY file")
    body = end + len(b"end_header\n")
    meta: dict = {}
    n = None
    props = []
    for lineno, line in enumerate(raw[:end].decode("ascii", "replace").splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format" and parts[1] != "binary_little_endian":
            raise FormatError(f"{path}:{lineno}: unsupported format {parts[1]}")
        if parts[0] == "comment" and line[8:].startswith(COMMENT_TAG):
            meta = json.loads(line[8 + len(COMMENT_TAG) :])
        elif parts[:2] == ["element", "vertex"]:
            n = int(parts[2])
        elif parts[0] == "property":
            props.append(parts[1])
    if n is None or len(props) != 3 or len(set(props)) != 1 or props[0] not in ("double", "float"):
        raise FormatError(f"{path}: expected exactly x, y, z vertex properties of one float type")
    dtype = "<f8" if props[0] == "double" else "<f4"
    need = n * 3 * np.dtype(dtype).itemsize
    if len(raw) - body != need:
        raise FormatError(f"{path}: vertex data is {len(raw) - body} bytes at offset {body}, expected {need}")
    pts = np.frombuffer(raw, dtype=dtype, count=3 * n, offset=body).reshape(n, 3).astype(np.float64)
    return pts, meta


def write_map(path: str | Path, snapshot) -> None:
    """Export a pipeline snapshot (points plus timestep and config echo)."""
    write_ply(path, snapshot.points, {"timestep": snapshot.timestep, "config": snapshot.config})


def read_map(path: str | Path) -> tuple[np.ndarray, dict]:
    return read_ply(path)


def write_metrics(path: str | Path, report, params: dict | None = None) -> None:
    doc = report.as_dict() if hasattr(report, "as_dict") else dict(report)
    if params is not None:
        doc["parameters"] = params
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_metrics(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())
