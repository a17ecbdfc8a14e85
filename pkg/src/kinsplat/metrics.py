"""Image comparison: L1, PSNR, SSIM, and keypoint pixel distance.

Inputs are float images in [0, 1], shape (H, W, 3). PSNR uses the joint
MSE over all pixels and channels and is capped at 100 dB so identical
images stay finite. SSIM is the canonical parameterization: 11x11
Gaussian window (sigma 1.5), C1 = 0.01^2, C2 = 0.03^2, computed per
channel and averaged, with the filter-radius border cropped before
averaging. The numerator and denominator of the SSIM map are built from
identical expressions, so compare(a, a) returns SSIM of exactly 1.0.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .images import load_image, save_image

PSNR_CAP = 100.0
SSIM_SIGMA = 1.5
SSIM_WINDOW = 11
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


class MetricError(ValueError):
    pass


@dataclass
class FrameMetrics:
    name: str
    l1: float
    psnr: float
    ssim: float


@dataclass
class MetricReport:
    l1: float
    psnr: float
    ssim: float
    frames: list[FrameMetrics] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "l1": self.l1,
            "psnr": self.psnr,
            "ssim": self.ssim,
            "frames": [
                {"name": f.name, "l1": f.l1, "psnr": f.psnr, "ssim": f.ssim}
                for f in self.frames
            ],
        }

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    def table(self) -> str:
        lines = [f"{'frame':<32} {'L1':>10} {'PSNR':>8} {'SSIM':>8}"]
        for f in self.frames:
            lines.append(
                f"{f.name:<32} {f.l1:>10.6f} {f.psnr:>8.2f} {f.ssim:>8.4f}")
        lines.append(
            f"{'mean':<32} {self.l1:>10.6f} {self.psnr:>8.2f} {self.ssim:>8.4f}")
        return "\n".join(lines)


def _check_pair(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise MetricError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim != 3 or a.shape[2] != 3:
        raise MetricError(f"expected (H, W, 3) images, got {a.shape}")
    return a, b


def l1_error(a: np.ndarray, b: np.ndarray) -> float:
    a, b = _check_pair(a, b)
    return float(np.mean(np.abs(a - b)))


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def _ssim_channel(x: np.ndarray, y: np.ndarray) -> float:
    # 11-tap Gaussian: truncate chosen so the radius is exactly 5 samples
    truncate = (SSIM_WINDOW // 2) / SSIM_SIGMA - 1e-9

    def blur(img):
        return gaussian_filter(img, sigma=SSIM_SIGMA, truncate=truncate,
                               mode="reflect")

    ux = blur(x)
    uy = blur(y)
    uxx = blur(x * x)
    uyy = blur(y * y)
    uxy = blur(x * y)
    vx = uxx - ux * ux
    vy = uyy - uy * uy
    vxy = uxy - ux * uy
    num = (2.0 * ux * uy + SSIM_C1) * (2.0 * vxy + SSIM_C2)
    den = (ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2)
    s = num / den
    pad = SSIM_WINDOW // 2
    return float(s[pad:-pad, pad:-pad].mean())


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    a, b = _check_pair(a, b)
    if min(a.shape[0], a.shape[1]) < SSIM_WINDOW:
        raise MetricError(
            f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW} for SSIM")
    return float(np.mean([_ssim_channel(a[:, :, c], b[:, :, c])
                          for c in range(3)]))


def compare(a: np.ndarray, b: np.ndarray) -> MetricReport:
    """L1 / PSNR / SSIM for one image pair."""
    a, b = _check_pair(a, b)
    return MetricReport(l1=l1_error(a, b), psnr=psnr(a, b), ssim=ssim(a, b))


def difference_image(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-pixel |a - b|, clipped to [0, 1]."""
    a, b = _check_pair(a, b)
    return np.clip(np.abs(a - b), 0.0, 1.0)


def compare_sequence(dir_a, dir_b, diff_dir=None) -> MetricReport:
    """Compare same-named PNG frames of two directories; aggregates are the
    means of the per-frame metrics. With diff_dir set, writes a difference
    image per frame."""
    names_a = sorted(n for n in os.listdir(dir_a) if n.endswith(".png"))
    names_b = sorted(n for n in os.listdir(dir_b) if n.endswith(".png"))
    if names_a != names_b:
        missing_a = sorted(set(names_b) - set(names_a))
        missing_b = sorted(set(names_a) - set(names_b))
        raise MetricError(
            f"frame sets differ: missing from {dir_a}: {missing_a}; "
            f"missing from {dir_b}: {missing_b}")
    if not names_a:
        raise MetricError("no frames to compare")

    if diff_dir is not None:
        os.makedirs(diff_dir, exist_ok=True)
    frames = []
    for name in names_a:
        a = load_image(os.path.join(dir_a, name))
        b = load_image(os.path.join(dir_b, name))
        report = compare(a, b)
        frames.append(FrameMetrics(name=name, l1=report.l1, psnr=report.psnr,
                                   ssim=report.ssim))
        if diff_dir is not None:
            save_image(difference_image(a, b), os.path.join(diff_dir, name))
    return MetricReport(
        l1=float(np.mean([f.l1 for f in frames])),
        psnr=float(np.mean([f.psnr for f in frames])),
        ssim=float(np.mean([f.ssim for f in frames])),
        frames=frames,
    )


def pixel_distance(points_a: np.ndarray, points_b: np.ndarray) -> float:
    """Mean Euclidean distance between corresponding annotated points
    (N, 2 each), the keypoint-offset measure used for sim-vs-real framing."""
    points_a = np.asarray(points_a, dtype=np.float64).reshape(-1, 2)
    points_b = np.asarray(points_b, dtype=np.float64).reshape(-1, 2)
    if points_a.shape != points_b.shape:
        raise MetricError("point sets must have matching shapes")
    if len(points_a) == 0:
        raise MetricError("no points given")
    return float(np.mean(np.linalg.norm(points_a - points_b, axis=1)))
