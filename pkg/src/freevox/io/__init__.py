"""Dataset readers and writers, map and metrics export, synthetic scenes."""

from .kitti import (
    DEFAULT_DYNAMIC_CLASSES,
    Dataset,
    DatasetFrame,
    FormatError,
    read_calib,
    read_label_ids,
    read_labels,
    read_poses,
    read_scan_bin,
    write_calib,
    write_dataset_frames,
    write_labels,
    write_poses,
    write_scan_bin,
)
from .ply import read_map, read_metrics, read_ply, write_map, write_metrics, write_ply
from .synthetic import (
    BUNDLED,
    Box,
    MovingBox,
    Plane,
    SceneError,
    SimSensor,
    SyntheticScene,
    Trajectory,
    free_view_runs,
    load_scene,
    nearest_hit,
    scene_from_dict,
    simulate,
    simulate_scan,
    write_dataset,
)

__all__ = [
    "BUNDLED",
    "DEFAULT_DYNAMIC_CLASSES",
    "Box",
    "Dataset",
    "DatasetFrame",
    "FormatError",
    "MovingBox",
    "Plane",
    "SceneError",
    "SimSensor",
    "SyntheticScene",
    "Trajectory",
    "free_view_runs",
    "load_scene",
    "nearest_hit",
    "read_calib",
    "read_label_ids",
    "read_labels",
    "read_map",
    "read_metrics",
    "read_ply",
    "read_poses",
    "read_scan_bin",
    "scene_from_dict",
    "simulate",
    "simulate_scan",
    "write_calib",
    "write_dataset",
    "write_dataset_frames",
    "write_labels",
    "write_map",
    "write_metrics",
    "write_ply",
    "write_poses",
    "write_scan_bin",
]
