import numpy as np
import pytest

from conftest import frontal_camera, random_rigid, random_scene
from oracles import composite_pixel_oracle, projection_jacobian_numeric
from kinsplat.rasterizer import (
    ALPHA_CAP,
    CameraModel,
    DILATION,
    alpha_of,
    camera_from_dict,
    camera_to_dict,
    load_camera_file,
    project_gaussian,
    render,
    render_mask,
    render_reference,
    save_camera_file,
)
from kinsplat.splats import Gaussian, GaussianScene, covariance_of, logit
from kinsplat.transforms import SimilarityTransform
from kinsplat.editing import transform_scene


def make_gaussian(mean, scale=0.03, opacity=0.8, color=(0.2, 0.1, -0.1)):
    coeffs = np.asarray(color, dtype=np.float64)[:, None] / 0.28209479177387814
    return Gaussian(mean=mean, rotation=[1, 0, 0, 0],
                    log_scale=np.log(scale) * np.ones(3),
                    opacity_logit=logit(opacity), sh_coeffs=coeffs)


# ---------------------------------------------------------------------------
# camera model
# ---------------------------------------------------------------------------

def test_camera_validation():
    pose = SimilarityTransform.identity()
    with pytest.raises(ValueError):
        CameraModel(fx=-1.0, fy=100.0, cx=32.0, cy=32.0, width=64, height=64,
                    pose=pose)
    with pytest.raises(ValueError):
        CameraModel(fx=100.0, fy=100.0, cx=999.0, cy=32.0, width=64, height=64,
                    pose=pose)
    scaled = SimilarityTransform.from_parts(np.eye(3), np.zeros(3), 2.0)
    with pytest.raises(ValueError):
        CameraModel(fx=100.0, fy=100.0, cx=32.0, cy=32.0, width=64, height=64,
                    pose=scaled)


def test_world_to_camera_inverts_pose(rng):
    pose = random_rigid(rng)
    cam = CameraModel(fx=100.0, fy=100.0, cx=32.0, cy=32.0, width=64,
                      height=64, pose=pose)
    r, t = cam.world_to_camera()
    p = rng.normal(size=(5, 3))
    roundtrip = (pose.apply(p)) @ r.T + t
    assert np.allclose(roundtrip, p, atol=1e-12)
    assert np.allclose(cam.center, pose.translation)


def test_camera_file_round_trip(tmp_path, rng):
    cam = frontal_camera()
    path = tmp_path / "cam.json"
    save_camera_file(cam, path)
    loaded = load_camera_file(path)
    assert loaded.fx == cam.fx and loaded.width == cam.width
    assert np.array_equal(loaded.pose.matrix, cam.pose.matrix)
    rec = camera_to_dict(cam)
    assert camera_from_dict(rec).cy == cam.cy


def test_camera_scaled():
    cam = frontal_camera(width=128, height=96, fx=120.0)
    half = cam.scaled(2)
    assert (half.width, half.height) == (64, 48)
    assert half.fx == pytest.approx(60.0)
    assert half.cx == pytest.approx(cam.cx / 2)


# ---------------------------------------------------------------------------
# projection against independent math
# ---------------------------------------------------------------------------

def test_projected_center_and_depth():
    cam = frontal_camera(width=128, height=96, fx=120.0, distance=2.0)
    g = make_gaussian([0.1, -0.05, 0.2])
    frag = project_gaussian(g, cam)
    z = 0.2 + 2.0  # camera sits 2 m behind the origin looking down +z
    assert frag.depth == pytest.approx(z, abs=1e-12)
    assert frag.mean2d[0] == pytest.approx(120.0 * 0.1 / z + 64.0, abs=1e-9)
    assert frag.mean2d[1] == pytest.approx(120.0 * (-0.05) / z + 48.0, abs=1e-9)


def test_cov2d_matches_numerical_jacobian(rng):
    cam = frontal_camera(width=128, height=96, fx=120.0, distance=2.0)
    w_rot, _ = cam.world_to_camera()
    for _ in range(20):
        g = Gaussian(mean=rng.uniform(-0.3, 0.3, size=3),
                     rotation=rng.normal(size=4),
                     log_scale=rng.uniform(-4.5, -3.0, size=3),
                     opacity_logit=1.0,
                     sh_coeffs=np.zeros((3, 1)))
        frag = project_gaussian(g, cam)
        p_cam = w_rot @ (g.mean - cam.center)
        jac = projection_jacobian_numeric(p_cam, cam.fx, cam.fy)
        jw = jac @ w_rot
        want = jw @ covariance_of(g) @ jw.T + DILATION * np.eye(2)
        assert np.max(np.abs(frag.cov2d - want)) < 1e-6


def test_behind_camera_is_culled():
    cam = frontal_camera(distance=2.0)
    assert project_gaussian(make_gaussian([0.0, 0.0, -5.0]), cam) is None


def test_alpha_of_peak_and_cap():
    cam = frontal_camera()
    frag = project_gaussian(make_gaussian([0.0, 0.0, 0.0], opacity=0.8), cam)
    assert alpha_of(frag, frag.mean2d) == pytest.approx(0.8, abs=1e-12)
    hot = project_gaussian(make_gaussian([0, 0, 0], opacity=0.999), cam)
    assert alpha_of(hot, hot.mean2d) == ALPHA_CAP
    assert alpha_of(frag, frag.mean2d + 500.0) == 0.0


# ---------------------------------------------------------------------------
# compositing against the textbook formula
# ---------------------------------------------------------------------------

def test_composite_single_pixel_oracle():
    cam = frontal_camera(width=64, height=64, fx=80.0, distance=1.0)
    # stack three Gaussians on the optical axis, exactly at pixel (32, 32)
    colors = [(0.3, 0.1, 0.0), (-0.1, 0.2, 0.1), (0.0, -0.2, 0.3)]
    opac = [0.5, 0.6, 0.4]
    depths = [0.0, 0.2, 0.4]
    gs = [make_gaussian([0.0, 0.0, z], scale=0.05, opacity=o, color=c)
          for z, o, c in zip(depths, opac, colors)]
    scene = GaussianScene.from_gaussians(gs)
    bg = (0.25, 0.5, 0.75)
    out = render(scene, cam, background=bg)

    rgb = [np.clip(np.asarray(c) + 0.5, 0.0, 1.0) for c in colors]
    want = composite_pixel_oracle(rgb, opac, bg)
    assert np.allclose(out.rgb[32, 32], want, atol=1e-12)
    # alpha-weighted mean depth, in camera coordinates (camera 1 m back)
    zc = [1.0 + z for z in depths]
    ws = [0.5, 0.5 * 0.6, 0.5 * 0.4 * 0.4]
    want_depth = sum(z * w for z, w in zip(zc, ws)) / sum(ws)
    assert out.depth[32, 32] == pytest.approx(want_depth, abs=1e-12)
    assert out.alpha[32, 32] == pytest.approx(sum(ws), abs=1e-12)


def test_empty_and_culled_scenes():
    cam = frontal_camera()
    with pytest.raises(ValueError, match="empty"):
        render(GaussianScene.empty(), cam)
    behind = GaussianScene.from_gaussians([make_gaussian([0, 0, -9.0])])
    out = render(behind, cam, background=(0.2, 0.3, 0.4))
    assert np.all(out.rgb == np.array([0.2, 0.3, 0.4]))
    assert np.all(out.alpha == 0.0)


def test_render_mask():
    cam = frontal_camera(width=64, height=64, fx=80.0, distance=1.0)
    scene = GaussianScene.from_gaussians(
        [make_gaussian([0, 0, 0], scale=0.05, opacity=0.9)])
    mask = render_mask(scene, cam, alpha_threshold=0.5)
    assert mask.dtype == bool
    assert mask[32, 32]
    assert not mask[0, 0]
    assert not render_mask(GaussianScene.empty(), cam).any()
    with pytest.raises(ValueError):
        render_mask(scene, cam, alpha_threshold=1.5)


# ---------------------------------------------------------------------------
# tile kernel vs global-sort reference
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("degree", [0, 1, 2, 3])
def test_tile_matches_reference(rng, degree):
    scene = random_scene(rng, 300, sh_degree=degree)
    cam = frontal_camera(width=128, height=128, fx=110.0)
    fast = render(scene, cam, background=(0.1, 0.2, 0.3))
    slow = render_reference(scene, cam, background=(0.1, 0.2, 0.3))
    assert np.max(np.abs(fast.rgb - slow.rgb)) < 1e-12
    assert np.max(np.abs(fast.depth - slow.depth)) < 1e-9
    assert np.max(np.abs(fast.alpha - slow.alpha)) < 1e-12


def test_tile_matches_reference_nonsquare(rng):
    # image size not a multiple of the tile size exercises edge tiles
    scene = random_scene(rng, 150)
    cam = frontal_camera(width=100, height=75, fx=90.0)
    fast = render(scene, cam)
    slow = render_reference(scene, cam)
    assert np.max(np.abs(fast.rgb - slow.rgb)) < 1e-12


def test_render_equivariance_single(rng):
    import dataclasses

    scene = random_scene(rng, 200, sh_degree=0)
    cam = frontal_camera(width=96, height=96, fx=90.0)
    base = render(scene, cam).rgb
    t = random_rigid(rng)
    moved = render(transform_scene(scene, t),
                   dataclasses.replace(cam, pose=t @ cam.pose))
    assert np.mean(np.abs(moved.rgb - base)) < 1e-3
