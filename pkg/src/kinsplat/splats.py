"""Gaussian scene container plus bit-exact ingestion/serialization of binary splat files.

The file format is the de-facto 3DGS point-cloud layout: binary little endian,
per vertex `x y z nx ny nz f_dc_0..2 f_rest_* opacity scale_0..2 rot_0..3`,
all float32, rot stored (w, x, y, z). f_rest is channel-major: the first
(K-1) values are the red channel's higher-order coefficients, then green, then
blue, with K = (degree+1)^2.

In memory everything is float64; saving casts back to float32, so
save(load(f)) == f byte for byte on any loadable file.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .transforms import quat_to_matrix

SUPPORTED_DEGREES = (0, 1, 2, 3)

# SH basis constants shared by the splat ecosystem
SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)


class SplatFormatError(ValueError):
    """Malformed header, unsupported property layout, or truncated body."""


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p / (1.0 - p))


def sh_coeff_count(degree: int) -> int:
    """Per-channel coefficient count for an SH degree."""
    return (degree + 1) ** 2


@dataclass
class Gaussian:
    """A single 3D Gaussian: mean, unit quaternion (w,x,y,z), log-scales,
    opacity logit and per-channel SH coefficients of shape (3, (D+1)^2)."""

    mean: np.ndarray
    rotation: np.ndarray
    log_scale: np.ndarray
    opacity_logit: float
    sh_coeffs: np.ndarray
    joint_label: Optional[int] = None
    normal: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(3)
        self.rotation = _normalize_rotations(
            np.asarray(self.rotation, dtype=np.float64).reshape(1, 4)
        )[0]
        self.log_scale = np.asarray(self.log_scale, dtype=np.float64).reshape(3)
        self.opacity_logit = float(self.opacity_logit)
        self.sh_coeffs = np.asarray(self.sh_coeffs, dtype=np.float64)
        if self.sh_coeffs.ndim != 2 or self.sh_coeffs.shape[0] != 3:
            raise ValueError(f"sh_coeffs must be (3, K), got {self.sh_coeffs.shape}")
        k = self.sh_coeffs.shape[1]
        if k not in {sh_coeff_count(d) for d in SUPPORTED_DEGREES}:
            raise ValueError(f"sh_coeffs per-channel count {k} matches no degree 0-3")
        self.normal = np.asarray(self.normal, dtype=np.float64).reshape(3)

    @property
    def opacity(self) -> float:
        return float(sigmoid(self.opacity_logit))

    @property
    def sh_degree(self) -> int:
        return int(round(math.sqrt(self.sh_coeffs.shape[1]))) - 1


def _normalize_rotations(q: np.ndarray) -> np.ndarray:
    """Normalize quaternion rows, leaving rows already unit within 1e-6 untouched
    (keeps reload of a saved file bit-stable). Zero rows become identity."""
    q = np.array(q, dtype=np.float64)
    norms = np.linalg.norm(q, axis=1)
    zero = norms < 1e-12
    if np.any(zero):
        q[zero] = (1.0, 0.0, 0.0, 0.0)
        norms[zero] = 1.0
    off = np.abs(norms - 1.0) > 1e-6
    q[off] /= norms[off, None]
    return q


@dataclass
class GaussianScene:
    """Ordered collection of Gaussians stored as flat arrays.

    means (N,3), rotations (N,4) unit wxyz, log_scales (N,3),
    opacity_logits (N,), sh_coeffs (N,3,K), normals (N,3) kept only for
    round-tripping, joint_labels optional (N,) ints with 0 = static background.
    """

    means: np.ndarray
    rotations: np.ndarray
    log_scales: np.ndarray
    opacity_logits: np.ndarray
    sh_coeffs: np.ndarray
    sh_degree: int
    frame_id: str = "gs"
    normals: Optional[np.ndarray] = None
    joint_labels: Optional[np.ndarray] = None

    def __post_init__(self):
        n = len(self.means)
        self.means = np.asarray(self.means, dtype=np.float64).reshape(n, 3)
        self.rotations = _normalize_rotations(
            np.asarray(self.rotations, dtype=np.float64).reshape(n, 4)
        )
        self.log_scales = np.asarray(self.log_scales, dtype=np.float64).reshape(n, 3)
        self.opacity_logits = np.asarray(self.opacity_logits, dtype=np.float64).reshape(n)
        k = sh_coeff_count(self.sh_degree)
        self.sh_coeffs = np.asarray(self.sh_coeffs, dtype=np.float64).reshape(n, 3, k)
        if self.sh_degree not in SUPPORTED_DEGREES:
            raise ValueError(f"unsupported sh_degree {self.sh_degree}")
        if self.normals is None:
            self.normals = np.zeros((n, 3))
        else:
            self.normals = np.asarray(self.normals, dtype=np.float64).reshape(n, 3)
        if self.joint_labels is not None:
            self.joint_labels = np.asarray(self.joint_labels, dtype=np.int32).reshape(n)

    def __len__(self) -> int:
        return len(self.means)

    def __getitem__(self, i: int) -> Gaussian:
        return Gaussian(
            mean=self.means[i],
            rotation=self.rotations[i],
            log_scale=self.log_scales[i],
            opacity_logit=self.opacity_logits[i],
            sh_coeffs=self.sh_coeffs[i],
            joint_label=None if self.joint_labels is None else int(self.joint_labels[i]),
            normal=self.normals[i],
        )

    @property
    def opacities(self) -> np.ndarray:
        return sigmoid(self.opacity_logits)

    @classmethod
    def empty(cls, sh_degree: int = 0, frame_id: str = "gs") -> "GaussianScene":
        """Zero-Gaussian scene (renders to nothing; cannot be saved)."""
        k = sh_coeff_count(sh_degree)
        return cls(
            means=np.zeros((0, 3)),
            rotations=np.zeros((0, 4)),
            log_scales=np.zeros((0, 3)),
            opacity_logits=np.zeros(0),
            sh_coeffs=np.zeros((0, 3, k)),
            sh_degree=sh_degree,
            frame_id=frame_id,
        )

    @classmethod
    def from_gaussians(cls, gaussians: Sequence[Gaussian], frame_id: str = "gs"
                       ) -> "GaussianScene":
        if not gaussians:
            raise ValueError("empty scene")
        degree = gaussians[0].sh_degree
        if any(g.sh_degree != degree for g in gaussians):
            raise ValueError("all Gaussians in a scene must share sh_degree")
        labels = None
        if all(g.joint_label is not None for g in gaussians):
            labels = np.array([g.joint_label for g in gaussians], dtype=np.int32)
        return cls(
            means=np.array([g.mean for g in gaussians]),
            rotations=np.array([g.rotation for g in gaussians]),
            log_scales=np.array([g.log_scale for g in gaussians]),
            opacity_logits=np.array([g.opacity_logit for g in gaussians]),
            sh_coeffs=np.array([g.sh_coeffs for g in gaussians]),
            sh_degree=degree,
            frame_id=frame_id,
            normals=np.array([g.normal for g in gaussians]),
            joint_labels=labels,
        )

    def replace(self, **kwargs) -> "GaussianScene":
        """Copy with some arrays swapped out."""
        base = dict(
            means=self.means,
            rotations=self.rotations,
            log_scales=self.log_scales,
            opacity_logits=self.opacity_logits,
            sh_coeffs=self.sh_coeffs,
            sh_degree=self.sh_degree,
            frame_id=self.frame_id,
            normals=self.normals,
            joint_labels=self.joint_labels,
        )
        base.update(kwargs)
        return GaussianScene(**base)


# ---------------------------------------------------------------------------
# covariance and SH color
# ---------------------------------------------------------------------------

def covariance_of(g: Gaussian) -> np.ndarray:
    """Sigma = R diag(exp(2 s)) R^T for one Gaussian."""
    r = quat_to_matrix(g.rotation)
    return r @ np.diag(np.exp(2.0 * g.log_scale)) @ r.T


def scene_covariances(scene: GaussianScene) -> np.ndarray:
    """(N, 3, 3) covariances for a whole scene."""
    r = quat_to_matrix(scene.rotations)
    s2 = np.exp(2.0 * scene.log_scales)
    return (r * s2[:, None, :]) @ r.transpose(0, 2, 1)


def eval_sh_basis(degree: int, dirs: np.ndarray) -> np.ndarray:
    """SH basis values for unit directions (N, 3) -> (N, (degree+1)^2)."""
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    n = len(dirs)
    out = np.empty((n, sh_coeff_count(degree)))
    out[:, 0] = SH_C0
    if degree >= 1:
        x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
        out[:, 1] = -SH_C1 * y
        out[:, 2] = SH_C1 * z
        out[:, 3] = -SH_C1 * x
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        xy, yz, xz = x * y, y * z, x * z
        out[:, 4] = SH_C2[0] * xy
        out[:, 5] = SH_C2[1] * yz
        out[:, 6] = SH_C2[2] * (2.0 * zz - xx - yy)
        out[:, 7] = SH_C2[3] * xz
        out[:, 8] = SH_C2[4] * (xx - yy)
    if degree >= 3:
        out[:, 9] = SH_C3[0] * y * (3.0 * xx - yy)
        out[:, 10] = SH_C3[1] * xy * z
        out[:, 11] = SH_C3[2] * y * (4.0 * zz - xx - yy)
        out[:, 12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy)
        out[:, 13] = SH_C3[4] * x * (4.0 * zz - xx - yy)
        out[:, 14] = SH_C3[5] * z * (xx - yy)
        out[:, 15] = SH_C3[6] * x * (xx - 3.0 * yy)
    return out


def eval_sh_color(g: Gaussian, view_dir: np.ndarray) -> np.ndarray:
    """Raw RGB at a unit viewing direction: sum_k c_k Y_k(d) + 0.5 per channel.

    Unclamped; the renderer clamps to [0, 1]."""
    basis = eval_sh_basis(g.sh_degree, np.asarray(view_dir, dtype=np.float64).reshape(1, 3))
    return g.sh_coeffs @ basis[0] + 0.5


def scene_sh_colors(scene: GaussianScene, dirs: np.ndarray) -> np.ndarray:
    """Raw RGB (N, 3) with a per-Gaussian unit direction each (N, 3)."""
    basis = eval_sh_basis(scene.sh_degree, dirs)
    return np.einsum("nck,nk->nc", scene.sh_coeffs, basis) + 0.5


# ---------------------------------------------------------------------------
# splat file IO
# ---------------------------------------------------------------------------

_FIXED_HEAD = ("x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2")
_FIXED_TAIL = ("opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3")


def _property_names(degree: int) -> tuple[str, ...]:
    rest = tuple(f"f_rest_{i}" for i in range(3 * (sh_coeff_count(degree) - 1)))
    return _FIXED_HEAD + rest + _FIXED_TAIL


def load_splat_file(path) -> GaussianScene:
    """Parse a binary-little-endian splat point cloud into a scene.

    Quaternions are normalized on load (rows already unit within 1e-6 are kept
    bit-identical); sh_degree is inferred from the f_rest property count.
    """
    with open(path, "rb") as fh:
        raw = fh.read()

    try:
        header_end = raw.index(b"end_header\n") + len(b"end_header\n")
    except ValueError:
        raise SplatFormatError(f"{path}: no end_header line found") from None
    header_lines = raw[:header_end].decode("ascii", errors="replace").splitlines()

    if not header_lines or header_lines[0].strip() != "ply":
        raise SplatFormatError(f"{path}: line 1: expected 'ply', got {header_lines[0]!r}")

    vertex_count = None
    props: list[str] = []
    for lineno, line in enumerate(header_lines[1:], start=2):
        parts = line.split()
        if not parts or parts[0] == "comment":
            continue
        if parts[0] == "format":
            if parts[1:] != ["binary_little_endian", "1.0"]:
                raise SplatFormatError(
                    f"{path}: line {lineno}: unsupported format {line.strip()!r}"
                )
        elif parts[0] == "element":
            if parts[1] != "vertex" or len(parts) != 3:
                raise SplatFormatError(
                    f"{path}: line {lineno}: only 'element vertex <n>' is supported"
                )
            try:
                vertex_count = int(parts[2])
            except ValueError:
                raise SplatFormatError(
                    f"{path}: line {lineno}: bad vertex count {parts[2]!r}"
                ) from None
        elif parts[0] == "property":
            if len(parts) != 3 or parts[1] != "float":
                raise SplatFormatError(
                    f"{path}: line {lineno}: expected 'property float <name>', got {line.strip()!r}"
                )
            props.append(parts[2])
        elif parts[0] == "end_header":
            break
        else:
            raise SplatFormatError(f"{path}: line {lineno}: unexpected {line.strip()!r}")

    if vertex_count is None:
        raise SplatFormatError(f"{path}: header missing 'element vertex'")

    n_rest = len(props) - len(_FIXED_HEAD) - len(_FIXED_TAIL)
    degree = None
    for d in SUPPORTED_DEGREES:
        if n_rest == 3 * (sh_coeff_count(d) - 1):
            degree = d
            break
    if degree is None or tuple(props) != _property_names(degree):
        raise SplatFormatError(
            f"{path}: property layout ({len(props)} properties) matches no SH degree 0-3"
        )

    stride = 4 * len(props)
    body = raw[header_end:]
    expected = stride * vertex_count
    if len(body) != expected:
        raise SplatFormatError(
            f"{path}: body truncated or oversized: expected {expected} bytes after "
            f"header (offset {header_end}), got {len(body)}"
        )

    data = np.frombuffer(body, dtype="<f4").reshape(vertex_count, len(props)).astype(np.float64)
    k = sh_coeff_count(degree)
    sh = np.zeros((vertex_count, 3, k))
    sh[:, :, 0] = data[:, 6:9]
    if k > 1:
        sh[:, :, 1:] = data[:, 9:9 + 3 * (k - 1)].reshape(vertex_count, 3, k - 1)
    off = 9 + 3 * (k - 1)
    return GaussianScene(
        means=data[:, 0:3],
        rotations=data[:, off + 4:off + 8],
        log_scales=data[:, off + 1:off + 4],
        opacity_logits=data[:, off],
        sh_coeffs=sh,
        sh_degree=degree,
        normals=data[:, 3:6],
    )


def save_splat_file(scene: GaussianScene, path) -> None:
    """Serialize a scene back to the binary splat layout (float32)."""
    n = len(scene)
    if n == 0:
        raise ValueError("empty scene")
    props = _property_names(scene.sh_degree)
    k = sh_coeff_count(scene.sh_degree)
    data = np.empty((n, len(props)), dtype="<f4")
    data[:, 0:3] = scene.means
    data[:, 3:6] = scene.normals
    data[:, 6:9] = scene.sh_coeffs[:, :, 0]
    if k > 1:
        data[:, 9:9 + 3 * (k - 1)] = scene.sh_coeffs[:, :, 1:].reshape(n, 3 * (k - 1))
    off = 9 + 3 * (k - 1)
    data[:, off] = scene.opacity_logits
    data[:, off + 1:off + 4] = scene.log_scales
    data[:, off + 4:off + 8] = scene.rotations

    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property float {name}" for name in props]
    header.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(data.tobytes())


# ---------------------------------------------------------------------------
# joint-label sidecar: one integer per line, same order as the splat file
# ---------------------------------------------------------------------------

def load_labels(path) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as fh:
        labels = [int(line) for line in fh if line.strip()]
    return np.asarray(labels, dtype=np.int32)


def save_labels(labels: np.ndarray, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for v in np.asarray(labels, dtype=np.int32):
            fh.write(f"{int(v)}\n")
