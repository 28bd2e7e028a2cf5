from __future__ import annotations

import json
import math
import os
import subprocess
import sys

import numpy as np
import pytest
import yaml
from conftest import small_room_doc

from freevox.cli import main
from freevox.evaluate import build_ground_truth, voxel_centres
from freevox.io import Dataset, read_map, write_ply
from freevox.pipeline import STAGES


@pytest.fixture(scope="module")
def scene_file(tmp_path_factory):
    p = tmp_path_factory.mktemp("scene") / "room.yaml"
    p.write_text(yaml.safe_dump(small_room_doc(frames=12)))
    return p


@pytest.fixture(scope="module")
def dataset(scene_file, tmp_path_factory):
    out = tmp_path_factory.mktemp("ds") / "room"
    assert main(["synth", str(scene_file), "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def run_dir(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["run", str(dataset), "--out", str(out), "--save-labels", "--set", "grid.tau_f=5"]) == 0
    return out


def test_synth_layout(dataset):
    ds = Dataset(dataset)
    assert len(ds) == 12 and ds.has_labels
    assert (dataset / "calib.txt").is_file() and (dataset / "meta.yaml").is_file()
    assert any(fr.dynamic.any() for fr in ds)


def test_run_outputs(run_dir, dataset):
    pts, meta = read_map(run_dir / "map.ply")
    assert pts.shape[0] > 0
    assert meta["timestep"] == 12
    assert meta["config"]["grid"]["tau_f"] == 5
    assert "grid.tau_f=5" in meta["config"]["overrides"]
    lat = json.loads((run_dir / "latency.json").read_text())
    assert lat["steps"] == 12
    assert lat["overrides"] == ["grid.tau_f=5"]
    assert lat["config"]["grid"]["tau_f"] == 5
    assert set(lat["latency"]) == {*STAGES, "total"}
    labels = sorted((run_dir / "labels").glob("*.dyn"))
    assert len(labels) == 12
    ds = Dataset(dataset)
    for path, fr in zip(labels, ds):
        assert path.stat().st_size == fr.points.shape[0]


def test_run_is_deterministic(dataset, run_dir, tmp_path):
    assert main(["run", str(dataset), "--out", str(tmp_path), "--set", "grid.tau_f=5"]) == 0
    assert (tmp_path / "map.ply").read_bytes() == (run_dir / "map.ply").read_bytes()


def test_run_from_scene_file_matches_dataset(scene_file, dataset, tmp_path):
    # a scene simulated in memory and the same scene written to disk differ only by float32 storage
    assert main(["run", str(scene_file), "--out", str(tmp_path / "a")]) == 0
    assert main(["run", str(dataset), "--out", str(tmp_path / "b")]) == 0
    a, _ = read_map(tmp_path / "a" / "map.ply")
    b, _ = read_map(tmp_path / "b" / "map.ply")
    assert abs(len(a) - len(b)) <= 0.01 * len(a)


def test_ablation_flags(dataset, tmp_path):
    assert main(["run", str(dataset), "--out", str(tmp_path), "--frames", "3", "--no-backend", "--no-raycast-enh"]) == 0
    _, meta = read_map(tmp_path / "map.ply")
    assert meta["config"]["enable_backend"] is False
    assert meta["config"]["enable_raycast_enhancement"] is False
    assert meta["timestep"] == 3


def test_voxel_size_scales_hierarchy(dataset, tmp_path):
    assert main(["run", str(dataset), "--out", str(tmp_path), "--frames", "2", "--voxel-size", "0.4"]) == 0
    grid = read_map(tmp_path / "map.ply")[1]["config"]["grid"]
    assert grid["s_v"] == 0.4
    assert math.isclose(grid["s_s"], 0.1) and math.isclose(grid["s_b"], 6.4)


def test_config_file_and_precedence(dataset, tmp_path):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text("grid: {tau_f: 4, tau_r: 9}\n")
    out = tmp_path / "out"
    assert main(["run", str(dataset), "--out", str(out), "--frames", "2", "--config", str(cfg), "--set", "grid.tau_f=3"]) == 0
    grid = read_map(out / "map.ply")[1]["config"]["grid"]
    assert grid["tau_f"] == 3 and grid["tau_r"] == 9


def test_eval_reports(run_dir, dataset, tmp_path, capsys):
    out = tmp_path / "m.json"
    assert main(["eval", str(run_dir / "map.ply"), str(dataset), "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["eval_voxel"] == 0.1
    assert doc["PR"] == doc["static_kept"] / doc["n_static"]
    assert math.isclose(doc["F1"], 2 * doc["PR"] * doc["RR"] / (doc["PR"] + doc["RR"]))
    assert doc["parameters"]["map"]["config"]["grid"]["tau_f"] == 5
    assert doc["parameters"]["frames"] == 12
    captured = capsys.readouterr()
    assert captured.out == "" and "PR" in captured.err


def test_eval_max_range(run_dir, dataset, tmp_path):
    out = tmp_path / "m.json"
    assert main(["eval", str(run_dir / "map.ply"), str(dataset), "--max-range", "20", "--out", str(out)]) == 0
    assert json.loads(out.read_text())["max_range"] == 20.0


def test_eval_perfect_map(dataset, tmp_path):
    gt = build_ground_truth(list(Dataset(dataset)), 0.1)
    write_ply(tmp_path / "p.ply", voxel_centres(gt.static, 0.1), {"timestep": 12, "config": {"eval_voxel": 0.1}})
    out = tmp_path / "m.json"
    assert main(["eval", str(tmp_path / "p.ply"), str(dataset), "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert (doc["PR"], doc["RR"], doc["F1"]) == (1.0, 1.0, 1.0)


def test_eval_missing_labels(run_dir, dataset, tmp_path, capsys):
    import shutil

    bare = tmp_path / "bare"
    shutil.copytree(dataset, bare)
    shutil.rmtree(bare / "labels")
    assert main(["eval", str(run_dir / "map.ply"), str(bare)]) == 1
    assert "labels are missing" in capsys.readouterr().err


def test_bench_single_sample(dataset, tmp_path):
    out = tmp_path / "b.json"
    assert main(["bench", str(dataset), "--repetitions", "1", "--frames", "4", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert "sample_ms" in doc and "median_ms" not in doc and "p95_ms" not in doc
    s = doc["sample_ms"]
    assert abs(sum(s[k] for k in STAGES) - s["total"]) <= 0.1 * s["total"]
    assert doc["config"]["grid"]["s_v"] == 0.2


def test_bench_percentiles(dataset, capsys):
    assert main(["bench", str(dataset), "--repetitions", "2", "--frames", "2"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["repetitions"] == 2
    assert set(doc["median_ms"]) == set(doc["p95_ms"]) == {*STAGES, "total", "step_median", "step_p95", "wall_s"}


def test_bench_zero_repetitions(dataset):
    assert main(["bench", str(dataset), "--repetitions", "0"]) == 2


def test_config_error_exit_code(dataset, tmp_path, capsys):
    assert main(["run", str(dataset), "--out", str(tmp_path), "--set", "grid.nope=1"]) == 2
    assert "configuration error" in capsys.readouterr().err


def test_bad_config_file(dataset, tmp_path):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text("- a list\n")
    assert main(["run", str(dataset), "--out", str(tmp_path), "--config", str(cfg)]) == 2


def test_input_error_exit_codes(tmp_path, capsys):
    assert main(["run", "no-such-scene", "--out", str(tmp_path)]) == 1
    assert main(["eval", str(tmp_path / "missing.ply"), "room-crossing"]) == 1
    bad = tmp_path / "bad"
    (bad / "velodyne").mkdir(parents=True)
    (bad / "velodyne" / "000000.bin").write_bytes(b"\x00" * 17)
    (bad / "poses.txt").write_text("1 0 0 0 0 1 0 0 0 0 1 0\n")
    assert main(["run", str(bad), "--out", str(tmp_path / "o")]) == 1
    assert "offset 16" in capsys.readouterr().err


def test_synth_invalid_scenario(tmp_path):
    p = tmp_path / "s.yaml"
    p.write_text("frames: 3\n")
    assert main(["synth", str(p), "--out", str(tmp_path / "o")]) == 1


def test_unknown_flag_rejected(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["run", "x", "--out", "y", "--bogus"])
    assert exc.value.code == 2


def test_module_entry_point_logs_to_stderr(dataset, tmp_path):
    env = dict(os.environ, FREEVOX_LOG_LEVEL="INFO")
    proc = subprocess.run(
        [sys.executable, "-m", "freevox", "run", str(dataset), "--out", str(tmp_path), "--frames", "2"],
        capture_output=True, text=True, env=env, check=False,
    )
    assert proc.returncode == 0, proc.stderr
    assert proc.stdout == ""
    assert "step 2/2" in proc.stderr
