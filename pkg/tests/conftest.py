import hypothesis
import numpy as np
import pytest

from kinsplat.kinematics import MdhChain, MdhJoint
from kinsplat.rasterizer import CameraModel
from kinsplat.splats import GaussianScene
from kinsplat.transforms import SimilarityTransform

# numba JIT warmup on the first render makes per-example deadlines meaningless
hypothesis.settings.register_profile(
    "default", deadline=None, max_examples=50)
hypothesis.settings.load_profile("default")


def random_scene(rng, n, sh_degree=0, spread=0.6, with_labels=False,
                 joint_count=3):
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    k = (sh_degree + 1) ** 2
    labels = rng.integers(0, joint_count + 1, size=n).astype(np.int32) \
        if with_labels else None
    return GaussianScene(
        means=rng.uniform(-spread, spread, size=(n, 3)),
        rotations=q,
        log_scales=rng.uniform(-5.2, -3.6, size=(n, 3)),
        opacity_logits=rng.uniform(-1.0, 2.5, size=(n,)),
        sh_coeffs=rng.uniform(-0.5, 0.5, size=(n, 3, k)),
        sh_degree=sh_degree,
        joint_labels=labels,
    )


def random_rigid(rng, max_angle=np.pi, max_shift=1.0):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    return SimilarityTransform.from_quat(
        q, rng.uniform(-max_shift, max_shift, size=3))


def random_similarity(rng, scale_range=(0.5, 2.0)):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    return SimilarityTransform.from_quat(
        q, rng.uniform(-1.0, 1.0, size=3),
        scale=float(rng.uniform(*scale_range)))


def frontal_camera(width=128, height=96, fx=120.0, distance=2.0):
    pose = SimilarityTransform.from_parts(
        np.eye(3), np.array([0.0, 0.0, -distance]))
    return CameraModel(fx=fx, fy=fx, cx=width / 2.0, cy=height / 2.0,
                       width=width, height=height, pose=pose)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture
def small_chain():
    return MdhChain([
        MdhJoint(0.0, 0.0, 0.12, 0.0, theta_min=-np.pi, theta_max=np.pi),
        MdhJoint(np.pi / 2, 0.0, 0.0, 0.0, theta_min=-2.0, theta_max=2.0),
        MdhJoint(0.0, 0.16, 0.0, 0.0, theta_min=-2.5, theta_max=2.5),
    ])
