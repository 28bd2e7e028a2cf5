from __future__ import annotations

import functools

import numpy as np
import pytest

from freevox.frontend import Scan
from freevox.io import load_scene, scene_from_dict, simulate
from freevox.pipeline import Pipeline, build_config


def replay(frames, cfg):
    pipe = Pipeline(cfg)
    timings = []
    for k, fr in enumerate(frames):
        pipe.step(Scan(fr.points, fr.pose, k + 1))
        timings.append(pipe.last.timings)
    return pipe, timings


@functools.lru_cache(maxsize=None)
def bundled_frames(name: str):
    scene = load_scene(name)
    return scene, simulate(scene)


@functools.lru_cache(maxsize=None)
def bundled_run(name: str, overrides: tuple[str, ...] = ()):
    """Pipeline replay of a bundled scenario, cached for the session."""
    scene, frames = bundled_frames(name)
    cfg = build_config(scene.pipeline, list(overrides))
    return replay(frames, cfg)


def small_room_doc(frames: int = 30, moving: bool = True) -> dict:
    """A 6 x 6 x 3 m room with a coarse sensor, cheap enough for unit tests."""
    doc = {
        "name": "small-room",
        "rate_hz": 10,
        "frames": frames,
        "sensor": {
            "model": {
                "phi_min_deg": -180, "phi_max_deg": 180, "phi_res_deg": 2.0,
                "theta_min_deg": -30, "theta_max_deg": 30, "theta_res_deg": 2.0,
            },
            "max_range": 20.0,
            "trajectory": [
                {"t": 0.0, "position": [2.03, 3.03, 1.23]},
                {"t": 20.0, "position": [4.03, 3.03, 1.23], "yaw_deg": 30.0},
            ],
        },
        "static": [{"box": {"min": [0.03, 0.03, 0.03], "max": [6.03, 6.03, 3.03]}, "label": 50}],
        "dynamic": [],
        "pipeline": {"preset": "indoor", "sensor": {
            "phi_min_deg": -180, "phi_max_deg": 180, "phi_res_deg": 2.0,
            "theta_min_deg": -30, "theta_max_deg": 30, "theta_res_deg": 2.0}},
    }
    if moving:
        doc["dynamic"] = [{
            "size": [0.6, 0.6, 1.6], "label": 252,
            "trajectory": [{"t": 0.0, "position": [1.03, 5.03, 0.83]},
                           {"t": 10.0, "position": [5.03, 5.03, 0.83]},
                           {"t": 20.0, "position": [1.03, 5.03, 0.83]}],
        }]
    return doc


@pytest.fixture(scope="session")
def small_room():
    scene = scene_from_dict(small_room_doc())
    return scene, simulate(scene)


@pytest.fixture(scope="session")
def static_room():
    scene = scene_from_dict(small_room_doc(frames=50, moving=False))
    return scene, simulate(scene)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
