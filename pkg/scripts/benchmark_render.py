"""Rasterizer throughput benchmark: 100k Gaussians at 640x480.

Prints per-frame wall time for the tiled kernel (after a warmup frame that
absorbs JIT compilation) and a one-frame comparison against the reference
compositor on a smaller scene.

Usage: python3 scripts/benchmark_render.py [n_gaussians] [frames]
"""

import sys
import time

import numpy as np

from kinsplat.rasterizer import CameraModel, render, render_reference
from kinsplat.splats import GaussianScene
from kinsplat.transforms import SimilarityTransform


def make_scene(rng, n, sh_degree=0):
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    n_coeff = (sh_degree + 1) ** 2
    return GaussianScene(
        means=rng.uniform(-1.0, 1.0, size=(n, 3)),
        rotations=q,
        log_scales=rng.uniform(-5.5, -3.5, size=(n, 3)),
        opacity_logits=rng.uniform(-1.0, 2.5, size=(n,)),
        sh_coeffs=rng.uniform(-0.4, 0.4, size=(n, 3, n_coeff)),
        sh_degree=sh_degree,
    )


def main():
    n = int(sys.argv[1]) if len(sys.argv) > 1 else 100_000
    frames = int(sys.argv[2]) if len(sys.argv) > 2 else 5
    rng = np.random.default_rng(0)
    scene = make_scene(rng, n)
    pose = SimilarityTransform.from_parts(np.eye(3), np.array([0.0, 0.0, -3.0]))
    camera = CameraModel(fx=500.0, fy=500.0, cx=320.0, cy=240.0,
                         width=640, height=480, pose=pose)

    render(scene, camera)  # warmup: JIT compile + caches
    times = []
    for _ in range(frames):
        t0 = time.perf_counter()
        render(scene, camera)
        times.append(time.perf_counter() - t0)
    times_ms = [1000.0 * t for t in times]
    print(f"scene: {n} gaussians, {camera.width}x{camera.height}")
    print(f"per-frame ms: {', '.join(f'{t:.1f}' for t in times_ms)}")
    print(f"median {np.median(times_ms):.1f} ms, "
          f"best {min(times_ms):.1f} ms, worst {max(times_ms):.1f} ms")

    small = make_scene(np.random.default_rng(1), 800)
    cam128 = CameraModel(fx=110.0, fy=110.0, cx=64.0, cy=64.0,
                         width=128, height=128, pose=pose)
    fast = render(small, cam128)
    slow = render_reference(small, cam128)
    err = float(np.abs(fast.rgb - slow.rgb).max())
    print(f"tile-vs-reference max |diff| on 800 gaussians: {err:.3e}")


if __name__ == "__main__":
    main()
