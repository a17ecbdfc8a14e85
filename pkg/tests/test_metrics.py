import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kinsplat.images import (
    decode_png,
    encode_png,
    from_uint8,
    load_depth,
    load_image,
    save_depth,
    save_image,
    to_uint8,
)
from kinsplat.metrics import (
    MetricError,
    compare,
    compare_sequence,
    difference_image,
    l1_error,
    pixel_distance,
    psnr,
    ssim,
)


def checker(h=32, w=48):
    img = np.zeros((h, w, 3))
    img[::2, ::2] = [0.8, 0.2, 0.1]
    img[1::2, 1::2] = [0.1, 0.6, 0.9]
    return img


# ---------------------------------------------------------------------------
# closed forms
# ---------------------------------------------------------------------------

def test_psnr_uniform_bias():
    # MSE of a constant 0.1 offset is exactly 0.01, so 10*log10(1/0.01) = 20
    a = np.full((16, 16, 3), 0.4)
    b = a + 0.1
    assert abs(psnr(a, b) - 20.0) < 1e-12
    assert abs(l1_error(a, b) - 0.1) < 1e-12


def test_psnr_identical_capped():
    a = checker()
    assert psnr(a, a) == 100.0


def test_ssim_self_is_exactly_one():
    a = checker()
    assert ssim(a, a) == 1.0


def test_ssim_matches_skimage():
    skimage = pytest.importorskip("skimage.metrics")
    rng = np.random.default_rng(7)
    a = rng.random((40, 56, 3))
    b = np.clip(a + 0.08 * rng.standard_normal(a.shape), 0.0, 1.0)
    ours = ssim(a, b)
    ref = skimage.structural_similarity(
        a, b, win_size=11, gaussian_weights=True, sigma=1.5,
        use_sample_covariance=False, data_range=1.0, channel_axis=2)
    assert abs(ours - ref) < 1e-4


def test_ssim_degrades_with_noise():
    rng = np.random.default_rng(3)
    a = checker(40, 40)
    small = np.clip(a + 0.02 * rng.standard_normal(a.shape), 0, 1)
    big = np.clip(a + 0.3 * rng.standard_normal(a.shape), 0, 1)
    assert ssim(a, big) < ssim(a, small) < 1.0


@given(st.integers(0, 2 ** 32 - 1))
def test_l1_symmetry(seed):
    rng = np.random.default_rng(seed)
    a = rng.random((8, 9, 3))
    b = rng.random((8, 9, 3))
    assert l1_error(a, b) == l1_error(b, a)
    assert psnr(a, b) == psnr(b, a)


def test_shape_errors():
    a = np.zeros((16, 16, 3))
    with pytest.raises(MetricError, match="shapes differ"):
        l1_error(a, np.zeros((16, 17, 3)))
    with pytest.raises(MetricError, match="expected"):
        l1_error(np.zeros((16, 16)), np.zeros((16, 16)))
    with pytest.raises(MetricError, match="at least"):
        ssim(np.zeros((8, 8, 3)), np.zeros((8, 8, 3)))


def test_compare_bundles_all_three():
    a = checker()
    b = np.clip(a + 0.05, 0, 1)
    report = compare(a, b)
    assert report.l1 == l1_error(a, b)
    assert report.psnr == psnr(a, b)
    assert report.ssim == ssim(a, b)
    assert "PSNR" in report.table()


def test_difference_image():
    a = np.full((12, 12, 3), 0.3)
    b = np.full((12, 12, 3), 0.7)
    d = difference_image(a, b)
    assert np.allclose(d, 0.4)
    assert difference_image(b, a).max() <= 1.0


def test_pixel_distance():
    a = np.array([[0.0, 0.0], [3.0, 4.0]])
    b = np.array([[0.0, 0.0], [0.0, 0.0]])
    assert pixel_distance(a, b) == 2.5
    with pytest.raises(MetricError, match="matching"):
        pixel_distance(a, b[:1])
    with pytest.raises(MetricError, match="no points"):
        pixel_distance(np.zeros((0, 2)), np.zeros((0, 2)))


# ---------------------------------------------------------------------------
# sequence comparison over directories
# ---------------------------------------------------------------------------

def test_compare_sequence(tmp_path):
    dir_a = tmp_path / "a"
    dir_b = tmp_path / "b"
    diff = tmp_path / "diff"
    dir_a.mkdir()
    dir_b.mkdir()
    rng = np.random.default_rng(11)
    for k in range(3):
        img = rng.random((24, 24, 3))
        save_image(img, dir_a / f"frame_{k}.png")
        save_image(np.clip(img + 0.02, 0, 1), dir_b / f"frame_{k}.png")
    (dir_a / "notes.txt").write_text("ignored")

    report = compare_sequence(dir_a, dir_b, diff_dir=str(diff))
    assert len(report.frames) == 3
    assert [f.name for f in report.frames] == [
        "frame_0.png", "frame_1.png", "frame_2.png"]
    assert report.l1 == pytest.approx(
        np.mean([f.l1 for f in report.frames]))
    assert sorted(p.name for p in diff.iterdir()) == [
        "frame_0.png", "frame_1.png", "frame_2.png"]

    out = tmp_path / "report.json"
    report.save(out)
    assert out.exists()


def test_compare_sequence_mismatched_names(tmp_path):
    dir_a = tmp_path / "a"
    dir_b = tmp_path / "b"
    dir_a.mkdir()
    dir_b.mkdir()
    save_image(np.zeros((16, 16, 3)), dir_a / "only_a.png")
    with pytest.raises(MetricError, match="only_a.png"):
        compare_sequence(dir_a, dir_b)
    with pytest.raises(MetricError, match="no frames"):
        compare_sequence(dir_b, dir_b)


# ---------------------------------------------------------------------------
# image file helpers
# ---------------------------------------------------------------------------

def test_uint8_round_trip():
    # exact multiples of 1/255 survive the quantization untouched
    levels = np.arange(256, dtype=np.float64) / 255.0
    img = np.stack([levels, levels, levels], axis=1).reshape(16, 16, 3)
    assert np.array_equal(from_uint8(to_uint8(img)), img)
    assert to_uint8(np.array([[[1.2, -0.3, 0.5]]])).tolist() == [[[255, 0, 128]]]


def test_png_round_trip_bytes_stable(tmp_path):
    rng = np.random.default_rng(5)
    img = rng.random((20, 30, 3))
    data1 = encode_png(img)
    data2 = encode_png(img)
    assert data1 == data2
    decoded = decode_png(data1)
    assert np.max(np.abs(decoded - img)) <= 0.5 / 255.0 + 1e-12

    path = tmp_path / "x.png"
    save_image(img, path)
    assert np.array_equal(load_image(path), decoded)
    with pytest.raises(ValueError, match="expected"):
        encode_png(np.zeros((4, 4)))


def test_depth_round_trip(tmp_path):
    depth = np.random.default_rng(9).random((15, 21)) * 4.0
    path = tmp_path / "d.npy"
    save_depth(depth, path)
    back = load_depth(path)
    assert back.dtype == np.float64
    assert np.array_equal(back, depth.astype(np.float32).astype(np.float64))
