"""Generate a self-contained demo directory for the CLI walkthrough.

Writes an articulated 3-joint arm scene (labeled Gaussians along each link),
a tabletop object, a chain file, a short trajectory, two cameras, a synthesis
job, and a closed-loop episode config. Everything is deterministic.

Usage: python3 scripts/make_demo_assets.py [outdir]   (default: demo/)
"""

import json
import math
import os
import sys

import numpy as np

from kinsplat.alignment import (
    FramePairObservation,
    distal_weights,
    save_observation_file,
)
from kinsplat.kinematics import (
    JointState,
    MdhChain,
    MdhJoint,
    forward_kinematics,
    save_chain_file,
)
from kinsplat.rasterizer import CameraModel, camera_to_dict, save_camera_file
from kinsplat.splats import GaussianScene, save_labels, save_splat_file
from kinsplat.synthesizer import (
    Trajectory,
    TrajectoryFrame,
    save_trajectory_file,
)
from kinsplat.transforms import SimilarityTransform


def random_rotations(rng, n):
    q = rng.normal(size=(n, 4))
    return q / np.linalg.norm(q, axis=1, keepdims=True)


def link_cloud(rng, start, end, n, radius=0.02):
    """Gaussians scattered in a tube between two 3D points."""
    t = rng.uniform(0.0, 1.0, size=(n, 1))
    jitter = rng.normal(scale=radius, size=(n, 3))
    return start[None, :] * (1.0 - t) + end[None, :] * t + jitter


def build_arm(rng, chain):
    """Labeled arm scene in the canonical (zero) pose."""
    fk = forward_kinematics(chain, chain.zero_state())
    anchors = [np.zeros(3)] + [f.translation for f in fk]
    means, labels = [], []
    per_link = 400
    # base pedestal stays static (label 0)
    means.append(rng.normal(scale=0.03, size=(per_link, 3)) + [0.0, 0.0, 0.02])
    labels.append(np.zeros(per_link, dtype=np.int32))
    for k in range(chain.joint_count):
        cloud = link_cloud(rng, anchors[k], anchors[k + 1], per_link)
        means.append(cloud)
        labels.append(np.full(per_link, k + 1, dtype=np.int32))
    means = np.concatenate(means)
    labels = np.concatenate(labels)
    n = len(means)
    palette = np.array([[0.7, 0.7, 0.7], [0.8, 0.3, 0.2],
                        [0.2, 0.6, 0.8], [0.9, 0.7, 0.1]])
    colors = palette[labels] - 0.5
    scene = GaussianScene(
        means=means,
        rotations=random_rotations(rng, n),
        log_scales=rng.uniform(-5.2, -4.2, size=(n, 3)),
        opacity_logits=rng.uniform(1.0, 3.0, size=(n,)),
        sh_coeffs=colors[:, :, None],
        sh_degree=0,
        frame_id="gs",
    )
    return scene, labels


def build_object(rng, center, n=250):
    means = rng.normal(scale=0.025, size=(n, 3)) + np.asarray(center)
    colors = np.tile(np.array([0.2, 0.75, 0.3]) - 0.5, (n, 1))
    return GaussianScene(
        means=means,
        rotations=random_rotations(rng, n),
        log_scales=rng.uniform(-5.2, -4.4, size=(n, 3)),
        opacity_logits=rng.uniform(1.5, 3.0, size=(n,)),
        sh_coeffs=colors[:, :, None],
        sh_degree=0,
        frame_id="gs",
    )


def look_at_camera(position, target, fx, width, height):
    from kinsplat.synthesizer import look_at_pose

    pose = look_at_pose(np.asarray(position, float), np.asarray(target, float))
    return CameraModel(fx=fx, fy=fx, cx=width / 2.0, cy=height / 2.0,
                       width=width, height=height, pose=pose)


def main():
    outdir = sys.argv[1] if len(sys.argv) > 1 else "demo"
    os.makedirs(outdir, exist_ok=True)
    rng = np.random.default_rng(42)

    chain = MdhChain([
        MdhJoint(0.0, 0.0, 0.12, 0.0, theta_min=-math.pi, theta_max=math.pi),
        MdhJoint(math.pi / 2, 0.0, 0.0, 0.0,
                 theta_min=-2.0, theta_max=2.0),
        MdhJoint(0.0, 0.16, 0.0, 0.0, theta_min=-2.5, theta_max=2.5),
    ])
    save_chain_file(chain, os.path.join(outdir, "arm.chain"))

    arm, labels = build_arm(rng, chain)
    save_splat_file(arm, os.path.join(outdir, "arm.ply"))
    save_labels(labels, os.path.join(outdir, "arm.labels"))

    can = build_object(rng, center=[0.22, 0.10, 0.03])
    save_splat_file(can, os.path.join(outdir, "can.ply"))

    cam = look_at_camera([0.45, -0.35, 0.35], [0.1, 0.0, 0.1],
                         fx=300.0, width=320, height=240)
    save_camera_file(cam, os.path.join(outdir, "camera_front.json"))
    cam_side = look_at_camera([-0.05, 0.5, 0.3], [0.1, 0.0, 0.1],
                              fx=300.0, width=320, height=240)
    save_camera_file(cam_side, os.path.join(outdir, "camera_side.json"))

    frames = []
    steps = 8
    can_pose = np.eye(4)
    can_pose[:3, 3] = [0.22, 0.10, 0.03]
    for k in range(steps):
        s = k / (steps - 1)
        angles = [0.6 * math.sin(math.pi * s), 0.4 * s, -0.5 * s]
        frames.append(TrajectoryFrame(
            timestamp=0.1 * k,
            joint_state=np.asarray(angles),
            object_poses={"can": SimilarityTransform(can_pose)},
        ))
    save_trajectory_file(Trajectory(frames),
                         os.path.join(outdir, "wave.traj.jsonl"))

    job = {
        "base_scene": "arm.ply",
        "labels": "arm.labels",
        "chain": "arm.chain",
        "trajectory": "wave.traj.jsonl",
        "cameras": [
            {"id": "front", **camera_to_dict(cam)},
            {"id": "side", **camera_to_dict(cam_side)},
        ],
        "objects": {"can": {"scene": "can.ply",
                            "anchor": [0.22, 0.10, 0.03]}},
        "output_dir": "dataset",
        "background": [1.0, 1.0, 1.0],
    }
    with open(os.path.join(outdir, "job.json"), "w", encoding="utf-8") as fh:
        json.dump(job, fh, indent=2, sort_keys=True)

    episode = {
        "scene": "arm.ply",
        "labels": "arm.labels",
        "chain": "arm.chain",
        "camera": camera_to_dict(cam),
        "initial": [0.0, 0.3, -0.2],
        "step_budget": 50,
        "workspace": {"lower": [-0.4, -0.4, 0.0], "upper": [0.5, 0.5, 0.6]},
        "background": [1.0, 1.0, 1.0],
    }
    with open(os.path.join(outdir, "episode.json"), "w", encoding="utf-8") as fh:
        json.dump(episode, fh, indent=2, sort_keys=True)

    # composition script: drop the can next to the arm, save the merged scene
    compose = [
        {"op": "load", "scene": "arm.ply"},
        {"op": "merge", "scene": "can.ply",
         "transform": [-0.05, -0.18, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]},
        {"op": "save", "scene": "tabletop.ply"},
    ]
    with open(os.path.join(outdir, "compose.json"), "w", encoding="utf-8") as fh:
        json.dump(compose, fh, indent=2)

    # frame-pair observations: simulator poses are the splat-frame FK poses
    # seen through a known sim<-gs transform (small yaw + offset)
    yaw = 0.04
    t_sim_gs = SimilarityTransform.from_parts(
        np.array([[math.cos(yaw), -math.sin(yaw), 0.0],
                  [math.sin(yaw), math.cos(yaw), 0.0],
                  [0.0, 0.0, 1.0]]),
        np.array([0.015, -0.02, 0.001]))
    fk = forward_kinematics(chain, JointState(np.array([0.0, 0.3, -0.2])))
    weights = distal_weights(chain.joint_count)
    observations = [
        FramePairObservation(k, t_gs, t_sim_gs @ t_gs, weight=weights[k])
        for k, t_gs in enumerate(fk)
    ]
    save_observation_file(observations,
                          os.path.join(outdir, "observations.json"))

    print(f"demo assets written to {outdir}/")
    print("try:  kinsplat render --scene", os.path.join(outdir, "arm.ply"),
          "--camera", os.path.join(outdir, "camera_front.json"),
          "--out arm.png")
    print("      kinsplat replay --job", os.path.join(outdir, "job.json"))


if __name__ == "__main__":
    main()
