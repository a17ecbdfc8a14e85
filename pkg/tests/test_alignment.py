import math

import numpy as np
import pytest

from conftest import frontal_camera, random_rigid, random_scene
from kinsplat.alignment import (
    AlignmentError,
    FramePairObservation,
    LayoutConfig,
    bev_camera,
    block_mean,
    distal_weights,
    estimate_frame_transform,
    express_object,
    layout_shift,
    load_observation_file,
    localize_camera,
    save_alignment_report,
    save_observation_file,
)
from kinsplat.rasterizer import render
from kinsplat.transforms import SimilarityTransform, quat_angle, matrix_to_quat


def consensus_observations(rng, truth, n=4, weights=None):
    obs = []
    for k in range(n):
        t_gs = random_rigid(rng)
        obs.append(FramePairObservation(
            joint_index=k, t_gs=t_gs, t_sim=truth @ t_gs,
            weight=1.0 if weights is None else weights[k]))
    return obs


def test_consensus_recovery_exact(rng):
    truth = random_rigid(rng)
    est = estimate_frame_transform(consensus_observations(rng, truth))
    assert np.max(np.abs(est.transform.matrix - truth.matrix)) < 1e-12
    assert all(r.rotation_rad < 1e-9 and r.translation_m < 1e-9
               for r in est.residuals)
    assert est.warnings == []


def test_left_equivariance(rng):
    # premultiplying every sim pose by L premultiplies the estimate by L
    obs = []
    for k in range(5):
        t_gs = random_rigid(rng)
        t_sim = random_rigid(rng) if k == 2 else SimilarityTransform(
            (random_rigid(rng) @ t_gs).matrix)
        obs.append(FramePairObservation(k, t_gs, t_sim, weight=1.0 + 0.3 * k))
    left = random_rigid(rng)
    base = estimate_frame_transform(obs)
    shifted = estimate_frame_transform([
        FramePairObservation(o.joint_index, o.t_gs, left @ o.t_sim, o.weight)
        for o in obs
    ])
    assert np.max(np.abs(shifted.transform.matrix -
                         (left @ base.transform).matrix)) < 1e-9


def test_weighted_mean_translation(rng):
    # identical rotations, two distinct translations: weighted average
    rot = np.eye(3)
    t1 = SimilarityTransform.from_parts(rot, np.array([1.0, 0.0, 0.0]))
    t2 = SimilarityTransform.from_parts(rot, np.array([0.0, 1.0, 0.0]))
    ident = SimilarityTransform.identity()
    est = estimate_frame_transform([
        FramePairObservation(0, ident, t1, weight=3.0),
        FramePairObservation(1, ident, t2, weight=1.0),
    ])
    assert np.allclose(est.transform.translation, [0.75, 0.25, 0.0],
                       atol=1e-12)


def test_quaternion_sign_alignment(rng):
    # candidates representing the same rotation with opposite quaternion signs
    # must average to that rotation, not cancel
    truth = random_rigid(rng)
    obs = consensus_observations(rng, truth, n=3)
    est = estimate_frame_transform(obs)
    assert quat_angle(matrix_to_quat(est.transform.rotation),
                      matrix_to_quat(truth.rotation)) < 1e-9


def test_disagreement_warnings(rng):
    truth = random_rigid(rng)
    obs = consensus_observations(rng, truth, n=3)
    outlier_gs = random_rigid(rng)
    big = SimilarityTransform.from_parts(
        truth.rotation, truth.translation + np.array([0.2, 0.0, 0.0]))
    obs.append(FramePairObservation(9, outlier_gs, big @ outlier_gs))
    est = estimate_frame_transform(obs)
    assert len(est.warnings) >= 1
    assert "joint 9" in " ".join(est.warnings)


def test_degenerate_and_invalid_inputs(rng):
    with pytest.raises(AlignmentError):
        estimate_frame_transform([])
    ident = SimilarityTransform.identity()
    with pytest.raises(AlignmentError):
        estimate_frame_transform(
            [FramePairObservation(0, ident, ident, weight=0.0)])
    with pytest.raises(AlignmentError):
        FramePairObservation(0, ident, ident, weight=-1.0)
    scaled = SimilarityTransform.from_parts(np.eye(3), np.zeros(3), 2.0)
    with pytest.raises(AlignmentError):
        FramePairObservation(0, ident, scaled)


def test_express_object(rng):
    t_sim_gs = random_rigid(rng)
    t_obj = random_rigid(rng)
    out = express_object(t_obj, t_sim_gs)
    p = rng.normal(size=3)
    assert np.allclose(out.apply(p), t_sim_gs.apply(t_obj.apply(p)),
                       atol=1e-12)


def test_distal_weights():
    w = distal_weights(4)
    assert np.allclose(w, [0.1, 0.2, 0.3, 0.4])
    assert w.sum() == pytest.approx(1.0)
    with pytest.raises(AlignmentError):
        distal_weights(0)


def test_observation_file_round_trip(tmp_path, rng):
    truth = random_rigid(rng)
    obs = consensus_observations(rng, truth, weights=[1.0, 2.0, 0.5, 1.5])
    path = tmp_path / "obs.json"
    save_observation_file(obs, path)
    loaded = load_observation_file(path)
    assert len(loaded) == 4
    for a, b in zip(obs, loaded):
        assert a.joint_index == b.joint_index
        assert np.array_equal(a.t_gs.matrix, b.t_gs.matrix)
        assert a.weight == b.weight
    est = estimate_frame_transform(loaded)
    save_alignment_report(est, tmp_path / "report.json")
    assert (tmp_path / "report.json").stat().st_size > 0


# ---------------------------------------------------------------------------
# BEV layout
# ---------------------------------------------------------------------------

def test_bev_camera_looks_down():
    cfg = LayoutConfig(bev_height=2.0)
    cam = bev_camera(np.array([0.5, 0.2, 0.0]), cfg, fx=100.0, fy=100.0,
                     width=64, height=64)
    assert np.allclose(cam.center, [0.5, 0.2, 2.0])
    # optical axis (camera +z in world coordinates) points straight down
    assert np.allclose(cam.pose.rotation[:, 2], [0.0, 0.0, -1.0])
    # a point directly under the camera projects to the principal point
    r, t = cam.world_to_camera()
    p = r @ np.array([0.5, 0.2, 0.0]) + t
    assert p[2] == pytest.approx(2.0)
    assert np.allclose(p[:2], 0.0, atol=1e-12)


def test_layout_shift_recovers_translation():
    rng = np.random.default_rng(21)
    fixed = np.zeros((48, 48), dtype=bool)
    fixed[10:30, 14:34] = True
    fixed[12, 16] = False  # make it asymmetric
    for dx, dy in [(3, -2), (-10, 10), (0, 0), (10, 10)]:
        moving = np.zeros_like(fixed)
        ys, xs = np.nonzero(fixed)
        moving[ys - dy, xs - dx] = True  # gs layout displaced by (-dx, -dy)
        shift = layout_shift(moving, fixed, LayoutConfig(max_shift=12))
        assert (shift.dx, shift.dy) == (dx, dy)
        assert shift.iou == pytest.approx(1.0)


def test_layout_shift_tie_break_prefers_small_shift():
    full = np.ones((20, 20), dtype=bool)
    shift = layout_shift(full, full, LayoutConfig(max_shift=2))
    assert (shift.dx, shift.dy) == (0, 0)


def test_layout_shift_tie_break_is_deterministic():
    # one moving pixel equidistant from two fixed pixels: IoU ties at 0.5
    # for dx = -1 and dx = +1; lexicographic order picks dx = -1
    fixed = np.zeros((20, 20), dtype=bool)
    fixed[10, 9] = fixed[10, 11] = True
    moving = np.zeros_like(fixed)
    moving[10, 10] = True
    shift = layout_shift(moving, fixed, LayoutConfig(max_shift=3))
    assert (shift.dx, shift.dy) == (-1, 0)
    assert shift.iou == pytest.approx(0.5)


def test_layout_shift_validation():
    cfg = LayoutConfig(max_shift=2)
    with pytest.raises(AlignmentError):
        layout_shift(np.ones((4, 4), bool), np.ones((5, 5), bool), cfg)
    with pytest.raises(AlignmentError, match="empty"):
        layout_shift(np.zeros((4, 4), bool), np.ones((4, 4), bool), cfg)
    with pytest.raises(AlignmentError):
        LayoutConfig(alpha_threshold=0.0)
    with pytest.raises(AlignmentError):
        LayoutConfig(bev_height=-1.0)


# ---------------------------------------------------------------------------
# photometric localization (cheap smoke; the strict trials live in the
# acceptance suite)
# ---------------------------------------------------------------------------

def test_block_mean():
    img = np.arange(16, dtype=np.float64).reshape(4, 4)
    down = block_mean(img, 2)
    assert down.shape == (2, 2)
    assert down[0, 0] == pytest.approx((0 + 1 + 4 + 5) / 4)
    with pytest.raises(AlignmentError):
        block_mean(img, 3)
    assert block_mean(img, 1) is img


def test_localize_camera_improves_pose(rng):
    scene = random_scene(rng, 300, spread=0.5)
    cam = frontal_camera(width=40, height=32, fx=50.0, distance=1.6)
    observed = render(scene, cam).rgb
    from kinsplat.transforms import rotation_about_axis

    off = SimilarityTransform.from_parts(
        cam.pose.rotation @ rotation_about_axis([0, 1, 0], math.radians(1.0)),
        cam.pose.translation + [0.008, 0.0, 0.0])
    result = localize_camera(scene, observed, off, cam, budget=6)
    assert result.residual <= _initial_residual(scene, cam, observed, off)
    # each pyramid level's accepted-residual history is non-increasing
    for level in result.history:
        assert all(b <= a for a, b in zip(level, level[1:]))
    assert result.iterations >= 1


def _initial_residual(scene, cam, observed, pose):
    from kinsplat.rasterizer import CameraModel

    cam2 = CameraModel(cam.fx, cam.fy, cam.cx, cam.cy, cam.width, cam.height,
                       pose)
    return float(np.mean(np.abs(render(scene, cam2).rgb - observed)))


def test_localize_validates_inputs(rng):
    scene = random_scene(rng, 10)
    cam = frontal_camera(width=40, height=32)
    with pytest.raises(AlignmentError):
        localize_camera(scene, np.zeros((8, 8, 3)), cam.pose, cam)
    with pytest.raises(AlignmentError):
        localize_camera(scene, np.zeros((32, 40, 3)), cam.pose, cam, budget=0)


def test_localize_guard_never_worsens(rng):
    # observed image rendered from the init pose itself: the guard must hand
    # back a residual no worse than the start
    scene = random_scene(rng, 120, spread=0.4)
    cam = frontal_camera(width=40, height=32, fx=45.0, distance=1.5)
    observed = render(scene, cam).rgb
    result = localize_camera(scene, observed, cam.pose, cam, budget=1)
    init = _initial_residual(scene, cam, observed, cam.pose)
    assert result.residual <= init + 1e-15
