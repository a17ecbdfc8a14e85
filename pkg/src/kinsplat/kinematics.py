"""MDH kinematic chain: per-link transforms, forward kinematics, and rigid
kinematic drive of labeled Gaussian points.

Convention (proximal / modified DH, one row per joint base-to-tip): each link
carries (beta, a, d, theta_offset) and the link matrix rotates about x by beta
implicitly through its structure:

    [[cos t, -sin t cos b,  sin t sin b, a cos t],
     [sin t,  cos t cos b, -cos t sin b, a sin t],
     [0,      sin b,        cos b,       d      ],
     [0,      0,            0,           1      ]]

with t = theta_offset + angle. Cumulative products T1, T1 T2, ... map each
joint frame into the base frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .splats import GaussianScene
from .transforms import SimilarityTransform, matrix_to_quat, quat_multiply, quat_normalize


@dataclass
class MdhJoint:
    beta: float            # twist about x, radians
    a: float               # link length, meters
    d: float               # link offset, meters
    theta_offset: float    # constant joint-angle part, radians
    theta_min: Optional[float] = None
    theta_max: Optional[float] = None

    def __post_init__(self):
        vals = (self.beta, self.a, self.d, self.theta_offset)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite MDH parameters {vals}")
        if abs(self.beta) > math.pi + 1e-12:
            raise ValueError(f"|beta| must be <= pi, got {self.beta}")

    @property
    def has_limits(self) -> bool:
        return self.theta_min is not None and self.theta_max is not None


@dataclass
class MdhChain:
    joints: list[MdhJoint]

    def __post_init__(self):
        if len(self.joints) < 1:
            raise ValueError("chain needs at least one joint")

    @property
    def joint_count(self) -> int:
        return len(self.joints)

    def zero_state(self) -> "JointState":
        return JointState(np.zeros(self.joint_count))

    def limit_violations(self, state: "JointState") -> list[int]:
        """Indices (0-based) of joints whose angle falls outside configured limits."""
        bad = []
        for i, (joint, angle) in enumerate(zip(self.joints, state.angles)):
            if joint.has_limits:
                t = joint.theta_offset + angle
                if t < joint.theta_min - 1e-12 or t > joint.theta_max + 1e-12:
                    bad.append(i)
        return bad


@dataclass
class JointState:
    angles: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.angles = np.asarray(self.angles, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(self.angles)):
            raise ValueError("joint angles must be finite")

    def __len__(self) -> int:
        return len(self.angles)


def link_transform(joint: MdhJoint, angle: float) -> SimilarityTransform:
    """Single-link MDH matrix at theta = theta_offset + angle."""
    t = joint.theta_offset + float(angle)
    ct, st = math.cos(t), math.sin(t)
    cb, sb = math.cos(joint.beta), math.sin(joint.beta)
    m = np.array(
        [
            [ct, -st * cb, st * sb, joint.a * ct],
            [st, ct * cb, -ct * sb, joint.a * st],
            [0.0, sb, cb, joint.d],
            [0.0, 0.0, 0.0, 1.0],
        ]
    )
    return SimilarityTransform(m)


def forward_kinematics(chain: MdhChain, state: JointState) -> list[SimilarityTransform]:
    """Cumulative base-frame transforms [T1, T1 T2, ..., prod Ti]."""
    if len(state) != chain.joint_count:
        raise ValueError(
            f"state has {len(state)} angles, chain has {chain.joint_count} joints"
        )
    out: list[SimilarityTransform] = []
    acc = np.eye(4)
    for joint, angle in zip(chain.joints, state.angles):
        acc = acc @ link_transform(joint, angle).matrix
        out.append(SimilarityTransform(acc))
    return out


# ---------------------------------------------------------------------------
# label binding and kinematic drive
# ---------------------------------------------------------------------------

def bind_labels(scene: GaussianScene, labels: Sequence[int], joint_count: int
                ) -> GaussianScene:
    """Attach per-Gaussian joint labels (0 = static, 1..J = joint index)."""
    labels = np.asarray(labels, dtype=np.int32).reshape(-1)
    if len(labels) != len(scene):
        raise ValueError(f"{len(labels)} labels for {len(scene)} Gaussians")
    if labels.min(initial=0) < 0 or labels.max(initial=0) > joint_count:
        raise ValueError(
            f"labels must lie in 0..{joint_count}, got range "
            f"[{labels.min()}, {labels.max()}]"
        )
    return scene.replace(joint_labels=labels)


def label_histogram(scene: GaussianScene) -> dict[int, int]:
    if scene.joint_labels is None:
        raise ValueError("scene has no labels bound; call bind_labels first")
    values, counts = np.unique(scene.joint_labels, return_counts=True)
    return {int(v): int(c) for v, c in zip(values, counts)}


def drive_scene(scene: GaussianScene, chain: MdhChain, canonical: JointState,
                target: JointState) -> GaussianScene:
    """Rigidly move each labeled Gaussian by FK_k(target) FK_k(canonical)^-1.

    Label-0 (static) points are untouched; opacity, scales and SH coefficients
    are preserved everywhere. Returns a new scene.
    """
    if scene.joint_labels is None:
        raise ValueError("scene has no labels bound; call bind_labels first")
    j = chain.joint_count
    if int(scene.joint_labels.max(initial=0)) > j:
        raise ValueError("scene labels exceed chain joint count")

    fk_canon = forward_kinematics(chain, canonical)
    fk_target = forward_kinematics(chain, target)

    means = scene.means.copy()
    rotations = scene.rotations.copy()
    for k in range(1, j + 1):
        mask = scene.joint_labels == k
        if not np.any(mask):
            continue
        motion = fk_target[k - 1] @ fk_canon[k - 1].inverse()
        r, t = motion.matrix[:3, :3], motion.matrix[:3, 3]
        means[mask] = means[mask] @ r.T + t
        q_motion = matrix_to_quat(r)
        rotations[mask] = quat_normalize(quat_multiply(q_motion, rotations[mask]))
    return scene.replace(means=means, rotations=rotations)


def guess_labels(scene: GaussianScene, chain: MdhChain, canonical: JointState,
                 max_distance: Optional[float] = None) -> np.ndarray:
    """Heuristic label generator: nearest link segment in the canonical pose.

    Link k spans the origins of joint frames k-1 and k (frame 0 = base).
    Points farther than max_distance from every segment become label 0.
    This is a convenience for synthetic assets, not a segmentation method.
    """
    fk = forward_kinematics(chain, canonical)
    anchors = [np.zeros(3)] + [t.translation for t in fk]
    dists = np.empty((len(scene), chain.joint_count))
    for k in range(chain.joint_count):
        dists[:, k] = _point_segment_distance(scene.means, anchors[k], anchors[k + 1])
    labels = np.argmin(dists, axis=1).astype(np.int32) + 1
    if max_distance is not None:
        labels[dists.min(axis=1) > max_distance] = 0
    return labels


def _point_segment_distance(points: np.ndarray, a: np.ndarray, b: np.ndarray
                            ) -> np.ndarray:
    ab = b - a
    denom = float(ab @ ab)
    if denom < 1e-18:
        return np.linalg.norm(points - a, axis=1)
    t = np.clip((points - a) @ ab / denom, 0.0, 1.0)
    closest = a + t[:, None] * ab
    return np.linalg.norm(points - closest, axis=1)


# ---------------------------------------------------------------------------
# chain file: one row per joint `beta a d theta_offset [theta_min theta_max]`
# ---------------------------------------------------------------------------

def load_chain_file(path) -> MdhChain:
    joints = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = [float(tok) for tok in line.split()]
            if len(parts) == 4:
                joints.append(MdhJoint(*parts))
            elif len(parts) == 6:
                joints.append(MdhJoint(parts[0], parts[1], parts[2], parts[3],
                                       theta_min=parts[4], theta_max=parts[5]))
            else:
                raise ValueError(
                    f"{path}: line {lineno}: expected 4 or 6 numbers, got {len(parts)}"
                )
    return MdhChain(joints)


def save_chain_file(chain: MdhChain, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# beta a d theta_offset [theta_min theta_max]\n")
        for j in chain.joints:
            row = f"{j.beta:.17g} {j.a:.17g} {j.d:.17g} {j.theta_offset:.17g}"
            if j.has_limits:
                row += f" {j.theta_min:.17g} {j.theta_max:.17g}"
            fh.write(row + "\n")
