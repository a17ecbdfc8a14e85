import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import random_scene
from oracles import covariance_oracle, sh_basis_oracle
from kinsplat.splats import (
    Gaussian,
    GaussianScene,
    SplatFormatError,
    covariance_of,
    eval_sh_basis,
    eval_sh_color,
    load_labels,
    load_splat_file,
    logit,
    save_labels,
    save_splat_file,
    scene_covariances,
    scene_sh_colors,
    sh_coeff_count,
    sigmoid,
)

unit_dirs = arrays(
    np.float64, (3,),
    elements=st.floats(-1.0, 1.0, allow_nan=False),
).filter(lambda v: np.linalg.norm(v) > 1e-2).map(
    lambda v: v / np.linalg.norm(v))


def test_sigmoid_logit_inverse():
    x = np.linspace(-8, 8, 33)
    assert np.allclose(logit(sigmoid(x)), x, atol=1e-9)
    p = np.linspace(0.01, 0.99, 33)
    assert np.allclose(sigmoid(logit(p)), p, atol=1e-12)


def test_sh_coeff_count():
    assert [sh_coeff_count(d) for d in range(4)] == [1, 4, 9, 16]


# ---------------------------------------------------------------------------
# covariance against a scipy-based oracle
# ---------------------------------------------------------------------------

@given(arrays(np.float64, (4,),
              elements=st.floats(-1.0, 1.0)).filter(
                  lambda q: np.linalg.norm(q) > 1e-2),
       arrays(np.float64, (3,), elements=st.floats(-6.0, 1.0)))
def test_covariance_matches_scipy(q, log_scale):
    q = q / np.linalg.norm(q)
    g = Gaussian(mean=np.zeros(3), rotation=q, log_scale=log_scale,
                 opacity_logit=0.0, sh_coeffs=np.zeros((3, 1)))
    expected = covariance_oracle(g.rotation, log_scale)
    scale = float(np.exp(2.0 * log_scale.max()))
    assert np.allclose(covariance_of(g), expected, atol=1e-12 * max(scale, 1.0))


def test_scene_covariances_match_single(rng):
    scene = random_scene(rng, 40, sh_degree=1)
    batch = scene_covariances(scene)
    for i in range(len(scene)):
        assert np.allclose(batch[i], covariance_of(scene[i]), atol=1e-14)


def test_covariance_is_spd(rng):
    scene = random_scene(rng, 50)
    for sigma in scene_covariances(scene):
        assert np.allclose(sigma, sigma.T)
        assert np.all(np.linalg.eigvalsh(sigma) > 0)


# ---------------------------------------------------------------------------
# spherical harmonics against scipy's complex harmonics
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("degree", [0, 1, 2, 3])
def test_sh_basis_matches_scipy(degree, rng):
    dirs = rng.normal(size=(200, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    ours = eval_sh_basis(degree, dirs)
    ref = sh_basis_oracle(degree, dirs)
    assert ours.shape == ref.shape == (200, sh_coeff_count(degree))
    assert np.max(np.abs(ours - ref)) < 1e-12


@given(unit_dirs)
def test_sh_basis_degree0_constant(d):
    assert eval_sh_basis(0, d)[0, 0] == pytest.approx(
        0.5 / np.sqrt(np.pi), abs=1e-15)


def test_sh_color_paths_agree(rng):
    scene = random_scene(rng, 20, sh_degree=2)
    dirs = rng.normal(size=(20, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    batch = scene_sh_colors(scene, dirs)
    for i in range(len(scene)):
        assert np.allclose(batch[i], eval_sh_color(scene[i], dirs[i]),
                           atol=1e-14)


# ---------------------------------------------------------------------------
# container behaviour
# ---------------------------------------------------------------------------

def test_scene_getitem_and_from_gaussians(rng):
    scene = random_scene(rng, 10, sh_degree=1, with_labels=True)
    rebuilt = GaussianScene.from_gaussians([scene[i] for i in range(10)])
    assert np.array_equal(scene.means, rebuilt.means)
    assert np.array_equal(scene.rotations, rebuilt.rotations)
    assert np.array_equal(scene.joint_labels, rebuilt.joint_labels)


def test_scene_rejects_mixed_degrees(rng):
    a = random_scene(rng, 2, sh_degree=0)[0]
    b = random_scene(rng, 2, sh_degree=1)[0]
    with pytest.raises(ValueError):
        GaussianScene.from_gaussians([a, b])
    with pytest.raises(ValueError):
        GaussianScene.from_gaussians([])


def test_empty_scene():
    scene = GaussianScene.empty(sh_degree=2)
    assert len(scene) == 0
    assert scene.sh_coeffs.shape == (0, 3, 9)


def test_zero_quaternion_becomes_identity():
    g = Gaussian(mean=np.zeros(3), rotation=np.zeros(4), log_scale=np.zeros(3),
                 opacity_logit=0.0, sh_coeffs=np.zeros((3, 1)))
    assert np.array_equal(g.rotation, [1.0, 0.0, 0.0, 0.0])


def test_near_unit_quaternion_kept_bitwise():
    q = np.array([1.0 + 3e-7, 0.0, 0.0, 0.0])  # within the 1e-6 band
    scene = GaussianScene(
        means=np.zeros((1, 3)), rotations=q[None], log_scales=np.zeros((1, 3)),
        opacity_logits=np.zeros(1), sh_coeffs=np.zeros((1, 3, 1)), sh_degree=0)
    assert scene.rotations[0, 0] == 1.0 + 3e-7


# ---------------------------------------------------------------------------
# file IO
# ---------------------------------------------------------------------------

def _quantize32(scene):
    """Force every array onto exact float32 grid points."""
    f32 = lambda a: a.astype(np.float32).astype(np.float64)
    return scene.replace(
        means=f32(scene.means), rotations=f32(scene.rotations),
        log_scales=f32(scene.log_scales),
        opacity_logits=f32(scene.opacity_logits),
        sh_coeffs=f32(scene.sh_coeffs), normals=f32(scene.normals))


@pytest.mark.parametrize("degree,n", [(0, 30), (1, 12), (2, 7), (3, 9), (3, 1)])
def test_splat_file_bit_exact_round_trip(tmp_path, rng, degree, n):
    scene = _quantize32(random_scene(rng, n, sh_degree=degree))
    p1 = tmp_path / "a.ply"
    p2 = tmp_path / "b.ply"
    save_splat_file(scene, p1)
    loaded = load_splat_file(p1)
    for name in ("means", "rotations", "log_scales", "opacity_logits",
                 "sh_coeffs", "normals"):
        assert np.array_equal(getattr(scene, name), getattr(loaded, name)), name
    save_splat_file(loaded, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_splat_file_save_load_identity_values(tmp_path, rng):
    # float64 values that are not float32 grid points survive one quantization
    scene = random_scene(rng, 8)
    path = tmp_path / "x.ply"
    save_splat_file(scene, path)
    loaded = load_splat_file(path)
    assert np.allclose(scene.means, loaded.means, atol=1e-6)
    assert load_splat_file(path).sh_degree == 0


def test_splat_format_errors(tmp_path, rng):
    path = tmp_path / "bad.ply"
    path.write_bytes(b"not a ply at all")
    with pytest.raises(SplatFormatError):
        load_splat_file(path)

    path.write_bytes(b"ply\nformat ascii 1.0\nend_header\n")
    with pytest.raises(SplatFormatError, match="format"):
        load_splat_file(path)

    # truncated body
    good = tmp_path / "good.ply"
    save_splat_file(random_scene(rng, 3), good)
    blob = good.read_bytes()
    path.write_bytes(blob[:-4])
    with pytest.raises(SplatFormatError, match="truncated"):
        load_splat_file(path)

    with pytest.raises(ValueError):
        save_splat_file(GaussianScene.empty(), tmp_path / "empty.ply")


def test_labels_round_trip(tmp_path):
    labels = np.array([0, 1, 2, 2, 0, 3], dtype=np.int32)
    path = tmp_path / "scene.labels"
    save_labels(labels, path)
    assert np.array_equal(load_labels(path), labels)
