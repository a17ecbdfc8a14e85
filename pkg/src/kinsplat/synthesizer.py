"""Trajectory replay: drive the arm and objects along a recorded trajectory
and render frame datasets from one or more cameras.

A trajectory is newline-delimited JSON, one record per frame:

    {"timestamp": 0.1, "joints": [...], "objects": {"cube": [16 row-major]}}

Object poses arrive in the simulator frame and are re-expressed in the
splat frame through the job's sim-to-gs transform. An object pose (R, t)
places the object scene's anchor point at t with orientation R relative to
the authored orientation (rotation taken about the anchor).

Every frame is a pure function of its trajectory row, so frames may be
rendered in any order; outputs are byte-stable across runs.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import __version__ as _engine_version
from .alignment import express_object
from .editing import drop_labeled, merge_scenes, transform_object, transform_scene
from .images import save_depth, save_image
from .kinematics import JointState, bind_labels, drive_scene, load_chain_file
from .rasterizer import CameraModel, camera_from_dict, camera_to_dict, render
from .splats import GaussianScene, load_labels, load_splat_file
from .transforms import SimilarityTransform


class JobError(ValueError):
    pass


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------

@dataclass
class TrajectoryFrame:
    timestamp: float
    joint_state: np.ndarray
    object_poses: dict[str, SimilarityTransform] = field(default_factory=dict)


@dataclass
class Trajectory:
    frames: list[TrajectoryFrame]

    def __post_init__(self):
        if not self.frames:
            raise JobError("trajectory has no frames")
        j = len(self.frames[0].joint_state)
        for k, fr in enumerate(self.frames):
            if len(fr.joint_state) != j:
                raise JobError(
                    f"frame {k}: joint vector length {len(fr.joint_state)} != {j}")
            if k and fr.timestamp <= self.frames[k - 1].timestamp:
                raise JobError(
                    f"frame {k}: timestamp {fr.timestamp} not strictly increasing")

    @property
    def joint_count(self) -> int:
        return len(self.frames[0].joint_state)

    def object_ids(self) -> set[str]:
        ids = set()
        for fr in self.frames:
            ids.update(fr.object_poses)
        return ids


def load_trajectory_file(path) -> Trajectory:
    frames = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                poses = {
                    str(name): SimilarityTransform(
                        np.asarray(mat, dtype=np.float64).reshape(4, 4))
                    for name, mat in rec.get("objects", {}).items()
                }
                frames.append(TrajectoryFrame(
                    timestamp=float(rec["timestamp"]),
                    joint_state=np.asarray(rec["joints"], dtype=np.float64),
                    object_poses=poses,
                ))
            except (KeyError, ValueError, TypeError) as exc:
                raise JobError(f"{path}: line {lineno}: {exc}") from exc
    return Trajectory(frames)


def save_trajectory_file(trajectory: Trajectory, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for fr in trajectory.frames:
            rec = {
                "timestamp": fr.timestamp,
                "joints": fr.joint_state.tolist(),
                "objects": {
                    name: t.matrix.reshape(-1).tolist()
                    for name, t in sorted(fr.object_poses.items())
                },
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# jobs
# ---------------------------------------------------------------------------

@dataclass
class ObjectSource:
    """A swappable object: its splat file and the anchor point (in the
    authored scene) that object poses position."""

    scene_path: str
    anchor: np.ndarray


@dataclass
class SceneSwap:
    scene_path: str
    transform: SimilarityTransform


@dataclass
class SynthesisJob:
    base_scene_path: str
    chain_path: str
    trajectory_path: str
    cameras: list[tuple[str, CameraModel]]
    output_dir: str
    labels_path: Optional[str] = None
    canonical_state: Optional[np.ndarray] = None
    t_sim_gs: SimilarityTransform = field(default_factory=SimilarityTransform.identity)
    object_scenes: dict[str, ObjectSource] = field(default_factory=dict)
    scene_swap: Optional[SceneSwap] = None
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not self.cameras:
            raise JobError("job needs at least one camera")
        ids = [cid for cid, _ in self.cameras]
        if len(set(ids)) != len(ids):
            raise JobError("camera ids must be unique")

    def to_dict(self) -> dict:
        return {
            "base_scene": self.base_scene_path,
            "chain": self.chain_path,
            "labels": self.labels_path,
            "canonical_state": None if self.canonical_state is None
            else list(self.canonical_state),
            "trajectory": self.trajectory_path,
            "t_sim_gs": self.t_sim_gs.matrix.reshape(-1).tolist(),
            "cameras": [
                {"id": cid, **camera_to_dict(cam)} for cid, cam in self.cameras
            ],
            "objects": {
                name: {"scene": src.scene_path, "anchor": list(src.anchor)}
                for name, src in sorted(self.object_scenes.items())
            },
            "scene_swap": None if self.scene_swap is None else {
                "scene": self.scene_swap.scene_path,
                "transform": self.scene_swap.transform.matrix.reshape(-1).tolist(),
            },
            "background": list(self.background),
            "output_dir": self.output_dir,
        }


def job_from_dict(rec: dict, base_dir: str = ".") -> SynthesisJob:
    def resolve(p):
        return p if os.path.isabs(p) else os.path.join(base_dir, p)

    try:
        cameras = [(str(c["id"]), camera_from_dict(c)) for c in rec["cameras"]]
        objects = {
            str(name): ObjectSource(
                scene_path=resolve(o["scene"]),
                anchor=np.asarray(o["anchor"], dtype=np.float64).reshape(3))
            for name, o in rec.get("objects", {}).items()
        }
        swap = None
        if rec.get("scene_swap") is not None:
            swap = SceneSwap(
                scene_path=resolve(rec["scene_swap"]["scene"]),
                transform=SimilarityTransform(np.asarray(
                    rec["scene_swap"]["transform"], dtype=np.float64).reshape(4, 4)))
        t_sim_gs = SimilarityTransform.identity()
        if rec.get("t_sim_gs") is not None:
            t_sim_gs = SimilarityTransform(
                np.asarray(rec["t_sim_gs"], dtype=np.float64).reshape(4, 4))
        canonical = rec.get("canonical_state")
        return SynthesisJob(
            base_scene_path=resolve(rec["base_scene"]),
            chain_path=resolve(rec["chain"]),
            labels_path=resolve(rec["labels"]) if rec.get("labels") else None,
            canonical_state=None if canonical is None
            else np.asarray(canonical, dtype=np.float64),
            trajectory_path=resolve(rec["trajectory"]),
            t_sim_gs=t_sim_gs,
            cameras=cameras,
            object_scenes=objects,
            scene_swap=swap,
            background=tuple(rec.get("background", (0.0, 0.0, 0.0))),
            output_dir=resolve(rec["output_dir"]),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise JobError(f"invalid job config: {exc}") from exc


def load_job_file(path) -> SynthesisJob:
    with open(path, "r", encoding="utf-8") as fh:
        rec = json.load(fh)
    return job_from_dict(rec, base_dir=os.path.dirname(os.path.abspath(path)))


def job_hash(job: SynthesisJob) -> str:
    blob = json.dumps(job.to_dict(), sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------

@dataclass
class DatasetManifest:
    job_hash: str
    engine_version: str
    records: list[dict]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            header = {"type": "header", "job_hash": self.job_hash,
                      "engine_version": self.engine_version}
            fh.write(json.dumps(header, sort_keys=True) + "\n")
            for rec in self.records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        with open(path, "r", encoding="utf-8") as fh:
            lines = [json.loads(line) for line in fh if line.strip()]
        if not lines or lines[0].get("type") != "header":
            raise JobError(f"{path}: missing manifest header")
        return cls(job_hash=lines[0]["job_hash"],
                   engine_version=lines[0]["engine_version"],
                   records=lines[1:])


# ---------------------------------------------------------------------------
# replay
# ---------------------------------------------------------------------------

def _validate_job(job: SynthesisJob) -> None:
    paths = [job.base_scene_path, job.chain_path, job.trajectory_path]
    if job.labels_path:
        paths.append(job.labels_path)
    paths.extend(src.scene_path for src in job.object_scenes.values())
    if job.scene_swap:
        paths.append(job.scene_swap.scene_path)
    missing = [p for p in paths if not os.path.isfile(p)]
    if missing:
        raise JobError(f"missing input files: {missing}")


def _place_object(obj_scene: GaussianScene, anchor: np.ndarray,
                  pose_gs: SimilarityTransform) -> GaussianScene:
    if not pose_gs.is_rigid(1e-6):
        raise JobError("object poses must be rigid")
    return transform_object(obj_scene, anchor, pose_gs.rotation,
                            pose_gs.translation - anchor)


def replay(job: SynthesisJob) -> DatasetManifest:
    """Render the job's trajectory from every camera.

    Per frame: drive the labeled base scene to the frame's joint state,
    optionally swap the static background, place each object named by the
    frame, render, and write `frame_{k:05d}_{camera}.png` plus a float32
    depth raster. Joint-limit violations are recorded on the frame's
    records, never skipped. Also writes `manifest.jsonl` and
    `job_config_resolved.json` into the output directory.
    """
    _validate_job(job)
    base = load_splat_file(job.base_scene_path)
    chain = load_chain_file(job.chain_path)
    trajectory = load_trajectory_file(job.trajectory_path)
    if trajectory.joint_count != chain.joint_count:
        raise JobError(
            f"trajectory drives {trajectory.joint_count} joints, chain has "
            f"{chain.joint_count}")
    if job.labels_path:
        base = bind_labels(base, load_labels(job.labels_path), chain.joint_count)
    unknown = trajectory.object_ids() - set(job.object_scenes)
    if unknown:
        raise JobError(f"trajectory references unknown objects: {sorted(unknown)}")

    objects = {
        name: load_splat_file(src.scene_path)
        for name, src in job.object_scenes.items()
    }
    swap_scene = None
    if job.scene_swap is not None:
        swap_scene = transform_scene(
            load_splat_file(job.scene_swap.scene_path), job.scene_swap.transform)

    canonical = chain.zero_state() if job.canonical_state is None \
        else JointState(job.canonical_state)

    os.makedirs(job.output_dir, exist_ok=True)
    records = []
    for k, frame in enumerate(trajectory.frames):
        state = JointState(frame.joint_state)
        violations = chain.limit_violations(state)
        if job.labels_path:
            working = drive_scene(base, chain, canonical, state)
        else:
            working = base
        if swap_scene is not None:
            working = merge_scenes(swap_scene, drop_labeled(working, 0),
                                   pad_degree=True)
        for name in sorted(frame.object_poses):
            pose_gs = express_object(frame.object_poses[name], job.t_sim_gs)
            placed = _place_object(objects[name], job.object_scenes[name].anchor,
                                   pose_gs)
            working = merge_scenes(working, placed, pad_degree=True)
        for cam_id, cam in job.cameras:
            out = render(working, cam, background=job.background)
            stem = f"frame_{k:05d}_{cam_id}"
            image_path = os.path.join(job.output_dir, stem + ".png")
            depth_path = os.path.join(job.output_dir, stem + "_depth.npy")
            save_image(out.rgb, image_path)
            save_depth(out.depth, depth_path)
            records.append({
                "frame": k,
                "timestamp": frame.timestamp,
                "camera": cam_id,
                "image": stem + ".png",
                "depth": stem + "_depth.npy",
                "joint_state": frame.joint_state.tolist(),
                "object_poses": {
                    name: t.matrix.reshape(-1).tolist()
                    for name, t in sorted(frame.object_poses.items())
                },
                "limit_violations": violations,
            })

    manifest = DatasetManifest(job_hash=job_hash(job),
                               engine_version=_engine_version, records=records)
    manifest.save(os.path.join(job.output_dir, "manifest.jsonl"))
    with open(os.path.join(job.output_dir, "job_config_resolved.json"), "w",
              encoding="utf-8") as fh:
        json.dump(job.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


# ---------------------------------------------------------------------------
# novel-view orbits
# ---------------------------------------------------------------------------

@dataclass
class Orbit:
    center: np.ndarray
    radius: float
    elevation: float        # radians above the horizontal plane
    count: int

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        if self.radius <= 0:
            raise JobError("orbit radius must be positive")
        if self.count < 1:
            raise JobError("orbit count must be >= 1")


def look_at_pose(position: np.ndarray, target: np.ndarray) -> SimilarityTransform:
    """World-from-camera pose with +z toward target, world +z as image up
    (falling back to world +y when looking straight up or down)."""
    position = np.asarray(position, dtype=np.float64).reshape(3)
    target = np.asarray(target, dtype=np.float64).reshape(3)
    forward = target - position
    dist = np.linalg.norm(forward)
    if dist < 1e-12:
        raise JobError("camera position coincides with its target")
    z = forward / dist
    up = np.array([0.0, 0.0, 1.0])
    if abs(z @ up) > 1.0 - 1e-9:
        up = np.array([0.0, 1.0, 0.0])
    x = np.cross(z, up)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    rot = np.column_stack([x, y, z])
    return SimilarityTransform.from_parts(rot, position)


def orbit_cameras(orbit: Orbit, template: CameraModel) -> list[CameraModel]:
    """Evenly spaced azimuths on a circle of given radius/elevation around
    the center, every camera looking at the center; intrinsics copied from
    the template."""
    cams = []
    for k in range(orbit.count):
        az = 2.0 * math.pi * k / orbit.count
        offset = np.array([
            math.cos(az) * math.cos(orbit.elevation),
            math.sin(az) * math.cos(orbit.elevation),
            math.sin(orbit.elevation),
        ])
        position = orbit.center + orbit.radius * offset
        pose = look_at_pose(position, orbit.center)
        cams.append(CameraModel(fx=template.fx, fy=template.fy,
                                cx=template.cx, cy=template.cy,
                                width=template.width, height=template.height,
                                pose=pose))
    return cams


def novel_view_sweep(job: SynthesisJob, orbit: Orbit) -> list[CameraModel]:
    """Append orbit cameras to the job (ids `orbit_00`, `orbit_01`, ...),
    using the job's first camera as the intrinsics template."""
    template = job.cameras[0][1]
    cams = orbit_cameras(orbit, template)
    existing = {cid for cid, _ in job.cameras}
    for k, cam in enumerate(cams):
        cid = f"orbit_{k:02d}"
        if cid in existing:
            raise JobError(f"camera id {cid} already present")
        job.cameras.append((cid, cam))
    return cams
