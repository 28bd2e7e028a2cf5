from __future__ import annotations

import math

import numpy as np
import pytest
from conftest import bundled_frames, bundled_run
from hypothesis import given, settings
from hypothesis import strategies as st

from freevox.evaluate import (
    GroundTruth,
    build_ground_truth,
    f1_score,
    score,
    score_within_range,
    voxel_centres,
    voxelize,
)
from freevox.io import DatasetFrame


def _frame(points, dynamic, pose=None):
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    return DatasetFrame(pts, np.eye(4) if pose is None else pose, np.asarray(dynamic, dtype=bool))


def test_one_static_point():
    gt = build_ground_truth([_frame([[0.05, 0.05, 0.05]], [False])], 0.2)
    assert gt.static.size == 1 and gt.dynamic.size == 0


def test_static_and_dynamic_share_voxel():
    gt = build_ground_truth([_frame([[0.05, 0.05, 0.05], [0.15, 0.1, 0.1]], [False, True])], 0.2)
    assert gt.static.size == 1 and gt.dynamic.size == 0


def test_dynamic_voxel_separate():
    gt = build_ground_truth([_frame([[0.05, 0.05, 0.05], [1.0, 0.1, 0.1]], [False, True])], 0.2)
    assert gt.static.size == 1 and gt.dynamic.size == 1
    assert not np.intersect1d(gt.static, gt.dynamic).size


def test_static_in_a_later_frame_wins():
    frames = [_frame([[1.0, 0, 0]], [True]), _frame([[1.05, 0, 0]], [False])]
    gt = build_ground_truth(frames, 0.2)
    assert gt.static.size == 1 and gt.dynamic.size == 0


def test_world_frame_used():
    pose = np.eye(4)
    pose[:3, 3] = [10.0, 0, 0]
    gt = build_ground_truth([_frame([[0.05, 0.05, 0.05]], [False], pose)], 0.2)
    np.testing.assert_allclose(voxel_centres(gt.static, 0.2), [[10.1, 0.1, 0.1]])


def test_missing_flags():
    with pytest.raises(ValueError, match="no ground-truth flags"):
        build_ground_truth([DatasetFrame(np.zeros((1, 3)), np.eye(4))], 0.2)


def _two_class_gt():
    frames = [_frame([[0.1, 0.1, 0.1], [0.5, 0.1, 0.1], [2.1, 0.1, 0.1], [2.5, 0.1, 0.1]], [False, False, True, True])]
    return frames, build_ground_truth(frames, 0.2)


def test_perfect_prediction():
    _, gt = _two_class_gt()
    rep = score(voxel_centres(gt.static, 0.2), gt, 0.2)
    assert (rep.pr, rep.rr, rep.f1) == (1.0, 1.0, 1.0)


def test_everything_predicted():
    frames, gt = _two_class_gt()
    rep = score(frames[0].points, gt)
    assert (rep.pr, rep.rr) == (1.0, 0.0)
    assert rep.dynamic_kept == rep.n_dynamic == 2


def test_f1_from_published_rates():
    assert abs(f1_score(0.9876, 0.9790) - 0.9833) <= 1e-4


def test_f1_zero_when_both_zero():
    assert f1_score(0.0, 0.0) == 0.0


def test_undefined_metrics():
    gt = build_ground_truth([_frame([[0.1, 0.1, 0.1]], [False])], 0.2)
    rep = score(np.zeros((0, 3)), gt)
    assert rep.pr == 0.0 and rep.rr is None and rep.f1 is None
    assert "RR undefined" in rep.line()
    empty = GroundTruth(np.empty(0, np.int64), np.empty(0, np.int64), 0.2)
    rep = score(np.zeros((0, 3)), empty)
    assert rep.pr is None and rep.rr is None


def test_resolution_mismatch():
    _, gt = _two_class_gt()
    with pytest.raises(ValueError, match="built at"):
        score(np.zeros((1, 3)), gt, 0.1)


def test_range_infinite_equals_score():
    frames, gt = _two_class_gt()
    pred = frames[0].points[[0, 2]]
    a = score(pred, gt)
    b = score_within_range(pred, gt, 0.2, math.inf, np.zeros((1, 3)))
    assert a.as_dict() | {"max_range": None} == b.as_dict() | {"max_range": None}


def test_far_voxel_excluded_from_both_sides():
    frames = [_frame([[1.0, 0.1, 0.1], [25.1, 0.1, 0.1]], [False, True])]
    gt = build_ground_truth(frames, 0.2)
    rep = score_within_range(frames[0].points, gt, 0.2, 20.0, np.array([np.eye(4)]))
    assert rep.n_static == 1 and rep.n_dynamic == 0 and rep.dynamic_kept == 0
    assert rep.max_range == 20.0


def test_range_uses_any_pose():
    frames = [_frame([[25.1, 0.1, 0.1]], [False])]
    gt = build_ground_truth(frames, 0.2)
    far = np.array([[0.0, 0, 0], [30.0, 0, 0]])
    assert score_within_range(frames[0].points, gt, 0.2, 20.0, far).n_static == 1
    assert score_within_range(frames[0].points, gt, 0.2, 20.0, far[:1]).n_static == 0


def test_range_restriction_keeps_trailing_rejection():
    scene, frames = bundled_frames("trailing-vehicle")
    pipe, _ = bundled_run("trailing-vehicle")
    gt = build_ground_truth(frames, 0.2)
    traj = np.array([fr.pose for fr in frames])
    pts = pipe.snapshot().points
    full = score(pts, gt)
    near = score_within_range(pts, gt, 0.2, 20.0, traj)
    assert near.rr >= full.rr


# --------------------------------------------------------------------------
# properties

cells = st.tuples(*[st.integers(-6, 6)] * 3)


@st.composite
def gt_and_prediction(draw):
    stat = draw(st.sets(cells, min_size=1, max_size=30))
    dyn = draw(st.sets(cells, min_size=1, max_size=30)) - stat
    pts = [(np.array(c) + 0.5) * 0.2 for c in stat]
    flags = [False] * len(pts)
    pts += [(np.array(c) + 0.5) * 0.2 for c in dyn]
    flags += [True] * len(dyn)
    gt = build_ground_truth([_frame(pts, flags)], 0.2)
    pred = draw(st.lists(cells, max_size=40))
    jitter = draw(st.floats(0.01, 0.19))
    pred_pts = np.array([(np.array(c)) * 0.2 + jitter for c in pred]).reshape(-1, 3)
    return gt, pred_pts


@settings(max_examples=100, deadline=None)
@given(gt_and_prediction(), st.randoms())
def test_score_permutation_and_duplication_invariant(case, rnd):
    gt, pred = case
    base = score(pred, gt).as_dict()
    idx = list(range(len(pred))) * 2
    rnd.shuffle(idx)
    assert score(pred[idx] if idx else pred, gt).as_dict() == base


@settings(max_examples=100, deadline=None)
@given(gt_and_prediction(), st.data())
def test_score_monotone(case, data):
    gt, pred = case
    before = score(pred, gt)
    which = data.draw(st.sampled_from(["static", "dynamic"]))
    pool = gt.static if which == "static" else gt.dynamic
    if not pool.size:
        return
    key = data.draw(st.sampled_from(pool.tolist()))
    after = score(np.vstack([pred, voxel_centres(np.array([key]), 0.2)]), gt)
    if which == "static":
        assert after.pr >= before.pr and after.rr == before.rr
    else:
        assert after.rr <= before.rr and after.pr == before.pr


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1))
def test_f1_harmonic_mean(pr, rr):
    f = f1_score(pr, rr)
    if pr + rr == 0:
        assert f == 0.0
    else:
        assert math.isclose(f, 2 * pr * rr / (pr + rr))
        assert min(pr, rr) - 1e-12 <= f <= max(pr, rr) + 1e-12


def test_voxelize_floor_convention():
    keys = voxelize(np.array([[-0.01, 0.0, 0.19], [-0.2, 0.0, 0.0]]), 0.2)
    assert keys.size == 1
    np.testing.assert_allclose(voxel_centres(keys, 0.2), [[-0.1, 0.1, 0.1]])
