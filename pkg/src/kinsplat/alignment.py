"""Frame alignment between simulator and Gaussian-scene coordinates.

Three mechanisms, used together when registering a simulated arm against
its splat reconstruction:

* averaging per-joint transform candidates T_i_sim (T_i_gs)^-1 into one
  rigid sim-from-gs transform, with per-joint residual reporting;
* integer-shift IoU search between binary layout masks (bird's-eye or any
  other shared viewpoint);
* photometric camera localization by derivative-free descent on the rigid
  tangent space, coarse to fine over an image pyramid.

Rotation averaging is a weighted chordal quaternion mean (sign-aligned to
the first candidate, then normalized). A normalized weighted sum of rigid
4x4 matrices is generally not rigid, so the matrix form of the average is
not used; the quaternion mean keeps the same intent and is exactly
left-equivariant under a common rigid pre-composition.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .rasterizer import CameraModel, render
from .splats import GaussianScene
from .transforms import (
    SimilarityTransform,
    matrix_to_quat,
    quat_angle,
    rotation_about_axis,
)


class AlignmentError(ValueError):
    pass


@dataclass
class FramePairObservation:
    """One joint seen in both frames: FK pose in the splat frame and the
    simulator-reported pose, with a non-negative averaging weight."""

    joint_index: int
    t_gs: SimilarityTransform
    t_sim: SimilarityTransform
    weight: float = 1.0

    def __post_init__(self):
        if self.weight < 0:
            raise AlignmentError("weights must be non-negative")
        if not self.t_gs.is_rigid(1e-6) or not self.t_sim.is_rigid(1e-6):
            raise AlignmentError("frame observations must be rigid transforms")


@dataclass
class JointResidual:
    joint_index: int
    rotation_rad: float
    translation_m: float


@dataclass
class AlignmentEstimate:
    """Averaged sim-from-gs transform plus the per-joint disagreement."""

    transform: SimilarityTransform
    residuals: list[JointResidual]
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "transform": self.transform.matrix.reshape(-1).tolist(),
            "residuals": [
                {
                    "joint_index": r.joint_index,
                    "rotation_deg": math.degrees(r.rotation_rad),
                    "translation_m": r.translation_m,
                }
                for r in self.residuals
            ],
            "warnings": list(self.warnings),
        }


def estimate_frame_transform(
    observations: Sequence[FramePairObservation],
    rotation_warn_rad: float = math.radians(5.0),
    translation_warn_m: float = 0.05,
) -> AlignmentEstimate:
    """Average the per-joint candidates T_i_sim (T_i_gs)^-1.

    Rotations: weighted quaternion mean, sign-aligned to the first candidate.
    Translations: weighted arithmetic mean. Joints whose candidate disagrees
    with the mean beyond the thresholds produce a warning, not an error.
    """
    if not observations:
        raise AlignmentError("no observations")
    weights = np.array([o.weight for o in observations], dtype=np.float64)
    total = weights.sum()
    if total <= 0:
        raise AlignmentError("total weight must be positive")
    weights = weights / total

    quats = np.empty((len(observations), 4))
    trans = np.empty((len(observations), 3))
    for k, o in enumerate(observations):
        cand = o.t_sim @ o.t_gs.inverse()
        quats[k] = matrix_to_quat(cand.rotation)
        trans[k] = cand.translation

    signs = np.where(quats @ quats[0] < 0.0, -1.0, 1.0)
    mean_q = (weights[:, None] * signs[:, None] * quats).sum(axis=0)
    norm = np.linalg.norm(mean_q)
    if norm < 1e-8:
        raise AlignmentError("rotation candidates cancel; mean quaternion is degenerate")
    mean_q = mean_q / norm
    mean_t = weights @ trans

    result = SimilarityTransform.from_quat(mean_q, mean_t)
    residuals = []
    warnings = []
    for k, o in enumerate(observations):
        ang = quat_angle(quats[k], mean_q)
        dist = float(np.linalg.norm(trans[k] - mean_t))
        residuals.append(JointResidual(o.joint_index, ang, dist))
        if ang > rotation_warn_rad or dist > translation_warn_m:
            warnings.append(
                f"joint {o.joint_index}: candidate deviates from mean by "
                f"{math.degrees(ang):.2f} deg / {dist * 1e3:.1f} mm"
            )
    return AlignmentEstimate(transform=result, residuals=residuals, warnings=warnings)


def express_object(t_obj_sim: SimilarityTransform,
                   t_sim_gs: SimilarityTransform) -> SimilarityTransform:
    """Re-express an object pose given in the sim frame in the gs frame:
    T_obj_gs = T_sim_gs T_obj_sim."""
    return t_sim_gs @ t_obj_sim


def distal_weights(joint_count: int) -> np.ndarray:
    """Linearly increasing weights favoring joints near the end effector,
    normalized to sum 1."""
    if joint_count < 1:
        raise AlignmentError("joint_count must be >= 1")
    w = np.arange(1, joint_count + 1, dtype=np.float64)
    return w / w.sum()


# ---------------------------------------------------------------------------
# observation / report files
# ---------------------------------------------------------------------------

def load_observation_file(path) -> list[FramePairObservation]:
    """JSON list of {i, T_gs: 16 row-major, T_sim: 16 row-major, w}."""
    with open(path, "r", encoding="utf-8") as fh:
        records = json.load(fh)
    if not isinstance(records, list):
        raise AlignmentError("observation file must hold a JSON list")
    out = []
    for k, rec in enumerate(records):
        try:
            out.append(FramePairObservation(
                joint_index=int(rec["i"]),
                t_gs=SimilarityTransform(
                    np.asarray(rec["T_gs"], dtype=np.float64).reshape(4, 4)),
                t_sim=SimilarityTransform(
                    np.asarray(rec["T_sim"], dtype=np.float64).reshape(4, 4)),
                weight=float(rec.get("w", 1.0)),
            ))
        except (KeyError, ValueError, TypeError) as exc:
            raise AlignmentError(f"observation record {k}: {exc}") from exc
    return out


def save_observation_file(observations: Sequence[FramePairObservation], path) -> None:
    records = [
        {
            "i": o.joint_index,
            "T_gs": o.t_gs.matrix.reshape(-1).tolist(),
            "T_sim": o.t_sim.matrix.reshape(-1).tolist(),
            "w": o.weight,
        }
        for o in observations
    ]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(records, fh, indent=2)
        fh.write("\n")


def save_alignment_report(estimate: AlignmentEstimate, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(estimate.to_dict(), fh, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------------------
# layout alignment
# ---------------------------------------------------------------------------

@dataclass
class LayoutConfig:
    """Bird's-eye layout comparison settings. The overhead camera sits
    bev_height meters above the base joint looking straight down."""

    bev_height: float = 1.6
    alpha_threshold: float = 0.5
    max_shift: int = 16

    def __post_init__(self):
        if self.bev_height <= 0:
            raise AlignmentError("bev_height must be positive")
        if not 0.0 < self.alpha_threshold < 1.0:
            raise AlignmentError("alpha_threshold must lie in (0, 1)")
        if self.max_shift < 0:
            raise AlignmentError("max_shift must be non-negative")


@dataclass
class LayoutShift:
    dx: int
    dy: int
    iou: float


def bev_camera(base_point: np.ndarray, cfg: LayoutConfig,
               fx: float, fy: float, width: int, height: int) -> CameraModel:
    """Downward-facing pinhole camera cfg.bev_height above base_point."""
    base_point = np.asarray(base_point, dtype=np.float64).reshape(3)
    rot = np.array([
        [1.0, 0.0, 0.0],
        [0.0, -1.0, 0.0],
        [0.0, 0.0, -1.0],
    ])
    center = base_point + np.array([0.0, 0.0, cfg.bev_height])
    pose = SimilarityTransform.from_parts(rot, center)
    return CameraModel(fx=fx, fy=fy, cx=width / 2.0, cy=height / 2.0,
                       width=width, height=height, pose=pose)


def _shift_overlap(moving: np.ndarray, fixed: np.ndarray, dx: int, dy: int
                   ) -> tuple[int, int]:
    """Intersection size and visible moving-pixel count when moving is
    shifted by (dx, dy) with zero fill (moving[y, x] lands on (y+dy, x+dx))."""
    h, w = moving.shape
    fy0, fy1 = max(0, dy), h + min(0, dy)
    fx0, fx1 = max(0, dx), w + min(0, dx)
    if fy0 >= fy1 or fx0 >= fx1:
        return 0, 0
    sub_m = moving[fy0 - dy:fy1 - dy, fx0 - dx:fx1 - dx]
    sub_f = fixed[fy0:fy1, fx0:fx1]
    return int(np.logical_and(sub_m, sub_f).sum()), int(sub_m.sum())


def layout_shift(gs_mask: np.ndarray, sim_mask: np.ndarray,
                 cfg: LayoutConfig) -> LayoutShift:
    """Integer shift of gs_mask maximizing IoU against sim_mask over
    |dx|, |dy| <= cfg.max_shift; ties go to the smallest shift norm, then
    lexicographic (dx, dy)."""
    gs_mask = np.asarray(gs_mask, dtype=bool)
    sim_mask = np.asarray(sim_mask, dtype=bool)
    if gs_mask.shape != sim_mask.shape:
        raise AlignmentError("masks must share dimensions")
    if gs_mask.ndim != 2:
        raise AlignmentError("masks must be 2-D")
    n_sim = int(sim_mask.sum())
    if gs_mask.sum() == 0 or n_sim == 0:
        raise AlignmentError("empty mask")

    best = None
    m = cfg.max_shift
    for dx in range(-m, m + 1):
        for dy in range(-m, m + 1):
            inter, visible = _shift_overlap(gs_mask, sim_mask, dx, dy)
            union = visible + n_sim - inter
            iou = inter / union if union > 0 else 0.0
            key = (-iou, dx * dx + dy * dy, dx, dy)
            if best is None or key < best[0]:
                best = (key, LayoutShift(dx=dx, dy=dy, iou=iou))
    return best[1]


# ---------------------------------------------------------------------------
# photometric camera localization
# ---------------------------------------------------------------------------

@dataclass
class LocalizationResult:
    pose: SimilarityTransform
    residual: float
    converged: bool
    iterations: int
    # accepted (best-so-far) residuals, one non-increasing list per pyramid level
    history: list[list[float]] = field(default_factory=list)


def block_mean(image: np.ndarray, factor: int) -> np.ndarray:
    """Downsample by averaging factor x factor blocks (dims must divide)."""
    if factor == 1:
        return image
    h, w = image.shape[:2]
    if h % factor or w % factor:
        raise AlignmentError(f"image {w}x{h} not divisible by {factor}")
    shape = (h // factor, factor, w // factor, factor) + image.shape[2:]
    return image.reshape(shape).mean(axis=(1, 3))


def _residual(scene: GaussianScene, cam: CameraModel, observed: np.ndarray) -> float:
    value = float(np.mean(np.abs(render(scene, cam).rgb - observed)))
    if not math.isfinite(value):
        raise AlignmentError("non-finite photometric residual")
    return value


def _pose_from_tangent(base: SimilarityTransform, p: np.ndarray
                       ) -> SimilarityTransform:
    """Camera-local tangent step: p[:3] a rotation vector applied on the
    right of the base rotation, p[3:] a translation along the camera axes."""
    angle = float(np.linalg.norm(p[:3]))
    rot = base.rotation
    if angle > 0.0:
        rot = rot @ rotation_about_axis(p[:3], angle)
    return SimilarityTransform.from_parts(rot, base.translation + base.rotation @ p[3:])


def localize_camera(
    scene: GaussianScene,
    observed: np.ndarray,
    init_pose: SimilarityTransform,
    camera: CameraModel,
    budget: int = 12,
    pyramid_factors: Sequence[int] = (4, 2, 1),
    rot_step: float = math.radians(0.5),
    trans_step: float = 5e-3,
) -> LocalizationResult:
    """Minimize the mean-L1 photometric residual over the camera pose.

    Derivative-free direction-set (Powell) descent on the 6-dim rigid
    tangent: three camera-local rotation parameters and three camera-local
    translations, re-anchored at each pyramid level. The initial probe
    directions are the coordinate axes scaled to rot_step / trans_step;
    Powell then reshapes the set, which is what lets it track the strongly
    coupled rotation/translation valley of the photometric surface. Runs
    coarse to fine across block-mean downsampled pyramid levels, at most
    `budget` direction-set cycles per level. Deterministic; no randomness
    anywhere. If the optimum somehow ends worse than the start at full
    resolution, the initial pose is returned flagged non-converged, so the
    returned residual never exceeds the initial one.

    `camera` supplies intrinsics and image size; its pose field is ignored in
    favor of init_pose. `observed` must match the camera resolution.
    """
    from scipy.optimize import minimize

    observed = np.asarray(observed, dtype=np.float64)
    if observed.shape != (camera.height, camera.width, 3):
        raise AlignmentError(
            f"observed image shape {observed.shape} does not match camera "
            f"{camera.height}x{camera.width}")
    if budget < 1:
        raise AlignmentError("budget must be >= 1")

    init_residual = _residual(
        scene,
        CameraModel(camera.fx, camera.fy, camera.cx, camera.cy,
                    camera.width, camera.height, init_pose),
        observed)

    pose = init_pose
    history: list[list[float]] = []
    iterations = 0
    converged = True
    direc = np.diag([rot_step] * 3 + [trans_step] * 3)
    for factor in pyramid_factors:
        if camera.width % factor or camera.height % factor:
            continue
        obs_level = block_mean(observed, factor)
        cam_args = dict(
            fx=camera.fx / factor, fy=camera.fy / factor,
            cx=camera.cx / factor, cy=camera.cy / factor,
            width=camera.width // factor, height=camera.height // factor)
        base = pose
        level_history = [_residual(scene, CameraModel(**cam_args, pose=base),
                                   obs_level)]

        def objective(p: np.ndarray) -> float:
            value = _residual(
                scene, CameraModel(**cam_args, pose=_pose_from_tangent(base, p)),
                obs_level)
            if value < level_history[-1]:
                level_history.append(value)
            return value

        result = minimize(objective, np.zeros(6), method="Powell",
                          options={"maxiter": budget, "xtol": 1e-5,
                                   "ftol": 1e-8, "direc": direc.copy()})
        pose = _pose_from_tangent(base, result.x)
        iterations += int(result.nit)
        converged = bool(result.success)
        history.append(level_history)

    final = _residual(
        scene,
        CameraModel(camera.fx, camera.fy, camera.cx, camera.cy,
                    camera.width, camera.height, pose),
        observed)
    if final > init_residual:
        return LocalizationResult(pose=init_pose, residual=init_residual,
                                  converged=False, iterations=iterations,
                                  history=history)
    return LocalizationResult(pose=pose, residual=final, converged=converged,
                              iterations=iterations, history=history)
