"""Seeded camera-localization trials.

Each trial renders a ground-truth view of a synthetic scene, perturbs the
camera pose by ~1 degree / ~1 cm, and runs photometric localization from
the perturbed pose. Reports recovered rotation/translation error per trial.

Usage: python3 scripts/localize_trials.py [trials] [budget]
"""

import math
import sys
import time

import numpy as np

from kinsplat.alignment import localize_camera
from kinsplat.rasterizer import CameraModel, render
from kinsplat.splats import GaussianScene
from kinsplat.transforms import SimilarityTransform, rotation_about_axis


def make_scene(rng, n=5000):
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return GaussianScene(
        means=rng.uniform(-0.6, 0.6, size=(n, 3)),
        rotations=q,
        log_scales=rng.uniform(-5.0, -3.8, size=(n, 3)),
        opacity_logits=rng.uniform(0.0, 2.5, size=(n,)),
        sh_coeffs=rng.uniform(-0.5, 0.5, size=(n, 3, 1)),
        sh_degree=0,
    )


def perturb(pose, rng, rot_deg=1.0, trans_m=0.01):
    axis = rng.normal(size=3)
    delta_r = rotation_about_axis(axis, math.radians(rot_deg))
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    return SimilarityTransform.from_parts(
        pose.rotation @ delta_r, pose.translation + trans_m * direction)


def pose_error(a, b):
    dr = a.rotation.T @ b.rotation
    angle = math.degrees(math.acos(min(1.0, max(-1.0, (np.trace(dr) - 1) / 2))))
    dist = float(np.linalg.norm(a.translation - b.translation))
    return angle, dist


def main():
    trials = int(sys.argv[1]) if len(sys.argv) > 1 else 10
    budget = int(sys.argv[2]) if len(sys.argv) > 2 else 12
    scene = make_scene(np.random.default_rng(123))
    true_pose = SimilarityTransform.from_parts(
        np.eye(3), np.array([0.0, 0.0, -2.0]))
    camera = CameraModel(fx=150.0, fy=150.0, cx=80.0, cy=60.0,
                         width=160, height=120, pose=true_pose)
    observed = render(scene, camera).rgb

    passed = 0
    for k in range(trials):
        rng = np.random.default_rng(1000 + k)
        init = perturb(true_pose, rng)
        t0 = time.perf_counter()
        result = localize_camera(scene, observed, init, camera, budget=budget)
        dt = time.perf_counter() - t0
        rot_err, trans_err = pose_error(result.pose, true_pose)
        ok = rot_err <= 0.2 and trans_err <= 0.002
        passed += ok
        print(f"trial {k}: rot {rot_err:.4f} deg, trans {1000*trans_err:.3f} mm, "
              f"{dt:.1f} s, converged={result.converged} "
              f"{'PASS' if ok else 'FAIL'}")
    print(f"{passed}/{trials} trials within 0.2 deg / 2 mm")


if __name__ == "__main__":
    main()
