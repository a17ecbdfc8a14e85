"""Scene and object editing: similarity transforms over Gaussian point sets and
scene merging.

A similarity T with linear block r*R_norm acts on a scene as
    mean      -> (r R_norm) mean + t
    log_scale -> log_scale + ln(r)
    rotation  -> quat(R_norm) * rotation
so covariances transform as Sigma -> r^2 R_norm Sigma R_norm^T. Opacity and SH
coefficients are untouched (SH coefficients are not re-aimed under rotation;
exact for degree 0, an accepted approximation above that).
"""

from __future__ import annotations

import json
import os
from typing import Mapping, Optional, Sequence

import numpy as np

from .splats import GaussianScene, load_splat_file, save_splat_file, sh_coeff_count
from .transforms import (
    SimilarityTransform,
    TransformError,
    matrix_to_quat,
    quat_multiply,
    quat_normalize,
)


def transform_scene(scene: GaussianScene, transform: SimilarityTransform
                    ) -> GaussianScene:
    """Apply a similarity transform to every Gaussian; returns a new scene."""
    r, r_norm = transform.decompose_ratio()
    lin, t = transform.matrix[:3, :3], transform.translation
    q = matrix_to_quat(r_norm)
    return scene.replace(
        means=scene.means @ lin.T + t,
        log_scales=scene.log_scales + np.log(r),
        rotations=quat_normalize(quat_multiply(q, scene.rotations)),
    )


def transform_object(scene: GaussianScene, anchor: np.ndarray, rotation: np.ndarray,
                     translation: np.ndarray) -> GaussianScene:
    """Rigidly rotate a scene about an anchor point, then translate:
    mean -> R (mean - anchor) + anchor + t. Scales unchanged."""
    rotation = np.asarray(rotation, dtype=np.float64)
    if rotation.shape != (3, 3) or \
            np.max(np.abs(rotation.T @ rotation - np.eye(3))) > 1e-6 or \
            np.linalg.det(rotation) < 0.0:
        raise TransformError("object rotation must be a proper rotation matrix")
    anchor = np.asarray(anchor, dtype=np.float64).reshape(3)
    translation = np.asarray(translation, dtype=np.float64).reshape(3)
    q = matrix_to_quat(rotation)
    return scene.replace(
        means=(scene.means - anchor) @ rotation.T + anchor + translation,
        rotations=quat_normalize(quat_multiply(q, scene.rotations)),
    )


def _pad_sh(scene: GaussianScene, degree: int) -> GaussianScene:
    k = sh_coeff_count(degree)
    padded = np.zeros((len(scene), 3, k))
    padded[:, :, : scene.sh_coeffs.shape[2]] = scene.sh_coeffs
    return scene.replace(sh_coeffs=padded, sh_degree=degree)


def merge_scenes(base: GaussianScene, addition: GaussianScene,
                 transform: Optional[SimilarityTransform] = None,
                 pad_degree: bool = False,
                 relabel: Optional[Mapping[int, int]] = None) -> GaussianScene:
    """Transform `addition` and append it to `base`.

    Joint labels of the addition reset to 0 unless a relabel map is given.
    Mismatched SH degrees error out unless pad_degree lifts the lower one.
    """
    if addition.sh_degree != base.sh_degree:
        if not pad_degree:
            raise ValueError(
                f"sh_degree mismatch ({base.sh_degree} vs {addition.sh_degree}); "
                "pass pad_degree=True to zero-pad"
            )
        degree = max(base.sh_degree, addition.sh_degree)
        base = _pad_sh(base, degree) if base.sh_degree < degree else base
        addition = _pad_sh(addition, degree) if addition.sh_degree < degree else addition

    if transform is not None:
        addition = transform_scene(addition, transform)

    add_labels = np.zeros(len(addition), dtype=np.int32)
    if relabel is not None and addition.joint_labels is not None:
        for src, dst in relabel.items():
            add_labels[addition.joint_labels == src] = dst
    base_labels = base.joint_labels
    if base_labels is None:
        base_labels = np.zeros(len(base), dtype=np.int32)

    return GaussianScene(
        means=np.concatenate([base.means, addition.means]),
        rotations=np.concatenate([base.rotations, addition.rotations]),
        log_scales=np.concatenate([base.log_scales, addition.log_scales]),
        opacity_logits=np.concatenate([base.opacity_logits, addition.opacity_logits]),
        sh_coeffs=np.concatenate([base.sh_coeffs, addition.sh_coeffs]),
        sh_degree=base.sh_degree,
        frame_id=base.frame_id,
        normals=np.concatenate([base.normals, addition.normals]),
        joint_labels=np.concatenate([base_labels, add_labels]),
    )


# ---------------------------------------------------------------------------
# declarative composition scripts: an ordered list of steps, e.g.
#   [{"op": "load", "scene": "arm.splat"},
#    {"op": "merge", "scene": "can.splat", "transform": "place_can.txt"},
#    {"op": "transform", "transform": [16 numbers row-major]},
#    {"op": "save", "scene": "composed.splat"}]
# ---------------------------------------------------------------------------

def _resolve_transform(value, base_dir: str) -> SimilarityTransform:
    from .transforms import load_transform_file

    if isinstance(value, str):
        return load_transform_file(os.path.join(base_dir, value))
    arr = np.asarray(value, dtype=np.float64).reshape(-1)
    if arr.size == 16:
        return SimilarityTransform(arr.reshape(4, 4))
    if arr.size == 8:
        return SimilarityTransform.from_quat(arr[3:7], arr[0:3], arr[7])
    raise TransformError(f"inline transform needs 16 or 8 numbers, got {arr.size}")


def run_composition(steps: Sequence[Mapping], initial: Optional[GaussianScene] = None,
                    base_dir: str = ".") -> Optional[GaussianScene]:
    """Execute composition steps; returns the final working scene.

    Relative paths resolve against base_dir. An empty step list is a no-op.
    """
    current = initial
    for idx, step in enumerate(steps):
        op = step.get("op")
        if op == "load":
            current = load_splat_file(os.path.join(base_dir, step["scene"]))
        elif op == "transform":
            if current is None:
                raise ValueError(f"step {idx}: transform before any scene is loaded")
            current = transform_scene(current, _resolve_transform(step["transform"], base_dir))
        elif op == "merge":
            if current is None:
                raise ValueError(f"step {idx}: merge before any scene is loaded")
            addition = load_splat_file(os.path.join(base_dir, step["scene"]))
            transform = None
            if "transform" in step:
                transform = _resolve_transform(step["transform"], base_dir)
            current = merge_scenes(current, addition, transform,
                                   pad_degree=bool(step.get("pad_degree", False)))
        elif op == "save":
            if current is None:
                raise ValueError(f"step {idx}: save before any scene is loaded")
            save_splat_file(current, os.path.join(base_dir, step["scene"]))
        else:
            raise ValueError(f"step {idx}: unknown op {op!r}")
    return current


def load_composition_script(path) -> list[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        steps = json.load(fh)
    if not isinstance(steps, list):
        raise ValueError(f"{path}: composition script must be a JSON list of steps")
    return steps


def drop_labeled(scene: GaussianScene, label: int) -> GaussianScene:
    """Remove every Gaussian carrying the given joint label."""
    if scene.joint_labels is None:
        raise ValueError("scene has no labels bound")
    keep = scene.joint_labels != label
    if not np.any(keep):
        raise ValueError(f"dropping label {label} would empty the scene")
    return GaussianScene(
        means=scene.means[keep],
        rotations=scene.rotations[keep],
        log_scales=scene.log_scales[keep],
        opacity_logits=scene.opacity_logits[keep],
        sh_coeffs=scene.sh_coeffs[keep],
        sh_degree=scene.sh_degree,
        frame_id=scene.frame_id,
        normals=scene.normals[keep],
        joint_labels=scene.joint_labels[keep],
    )
