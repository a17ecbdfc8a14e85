"""Similarity transforms (uniform scale * rotation + translation) and quaternion helpers.

Quaternions are (w, x, y, z), scalar first. All matrices are float64.
The 4x4 form keeps a literal (0, 0, 0, 1) bottom row so compositions stay exact.
"""

from __future__ import annotations

import math

import numpy as np


class TransformError(ValueError):
    """Raised for matrices that are not valid positive-uniform-scale rigid motions."""


# ---------------------------------------------------------------------------
# quaternion helpers (w, x, y, z)
# ---------------------------------------------------------------------------

def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n < 1e-12):
        raise ValueError("cannot normalize zero-norm quaternion")
    return q / n


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a*b; broadcasts over leading dimensions."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Unit quaternion(s) (..., 4) -> rotation matrix (..., 3, 3)."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    m = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    m[..., 0, 0] = 1.0 - 2.0 * (yy + zz)
    m[..., 0, 1] = 2.0 * (xy - wz)
    m[..., 0, 2] = 2.0 * (xz + wy)
    m[..., 1, 0] = 2.0 * (xy + wz)
    m[..., 1, 1] = 1.0 - 2.0 * (xx + zz)
    m[..., 1, 2] = 2.0 * (yz - wx)
    m[..., 2, 0] = 2.0 * (xz - wy)
    m[..., 2, 1] = 2.0 * (yz + wx)
    m[..., 2, 2] = 1.0 - 2.0 * (xx + yy)
    return m


def matrix_to_quat(m: np.ndarray) -> np.ndarray:
    """Rotation matrix (3, 3) -> unit quaternion (w, x, y, z), w >= 0."""
    m = np.asarray(m, dtype=np.float64)
    t = m[0, 0] + m[1, 1] + m[2, 2]
    if t > 0.0:
        s = math.sqrt(t + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        )
    elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = np.array(
            [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
        )
    elif m[1, 1] >= m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        q = np.array(
            [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
        )
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        q = np.array(
            [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
        )
    if q[0] < 0.0:
        q = -q
    return q / np.linalg.norm(q)


def quat_angle(a: np.ndarray, b: np.ndarray) -> float:
    """Rotation angle (radians) between two unit quaternions."""
    d = abs(float(np.dot(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))))
    return 2.0 * math.acos(min(1.0, d))


def rotation_about_axis(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix about a (not necessarily unit) 3-vector axis."""
    axis = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(axis)
    if n < 1e-12:
        raise ValueError("rotation axis must be nonzero")
    x, y, z = axis / n
    c, s = math.cos(angle), math.sin(angle)
    cc = 1.0 - c
    return np.array(
        [
            [c + x * x * cc, x * y * cc - z * s, x * z * cc + y * s],
            [y * x * cc + z * s, c + y * y * cc, y * z * cc - x * s],
            [z * x * cc - y * s, z * y * cc + x * s, c + z * z * cc],
        ]
    )


# ---------------------------------------------------------------------------
# similarity transforms
# ---------------------------------------------------------------------------

# relative disagreement allowed across diag(L L^T) before the scale counts as non-uniform
UNIFORM_SCALE_RTOL = 1e-6


class SimilarityTransform:
    """4x4 homogeneous transform whose linear block is r * R with r > 0 and R in SO(3).

    The ratio r and the normalized rotation are recovered on demand:
    r = sqrt((L L^T)[0,0]) and R_norm = L / r.
    """

    __slots__ = ("matrix", "_decomposed")

    def __init__(self, matrix: np.ndarray):
        m = np.array(matrix, dtype=np.float64)
        if m.shape != (4, 4):
            raise TransformError(f"expected 4x4 matrix, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise TransformError("transform contains non-finite entries")
        if not np.allclose(m[3], [0.0, 0.0, 0.0, 1.0], atol=1e-9):
            raise TransformError(f"bottom row must be (0,0,0,1), got {m[3]}")
        m[3] = (0.0, 0.0, 0.0, 1.0)
        self.matrix = m
        self._decomposed = None

    # -- constructors -------------------------------------------------------

    @classmethod
    def identity(cls) -> "SimilarityTransform":
        return cls(np.eye(4))

    @classmethod
    def from_parts(cls, rotation: np.ndarray, translation: np.ndarray,
                   scale: float = 1.0) -> "SimilarityTransform":
        m = np.eye(4)
        m[:3, :3] = float(scale) * np.asarray(rotation, dtype=np.float64)
        m[:3, 3] = np.asarray(translation, dtype=np.float64)
        return cls(m)

    @classmethod
    def from_quat(cls, q: np.ndarray, translation: np.ndarray,
                  scale: float = 1.0) -> "SimilarityTransform":
        return cls.from_parts(quat_to_matrix(quat_normalize(q)), translation, scale)

    # -- decomposition (ratio isolation + normalization) ---------------------

    def decompose_ratio(self) -> tuple[float, np.ndarray]:
        """Split the linear block into (r, R_norm) with r = sqrt((L L^T)[0,0]).

        Raises TransformError when the block is not a positive uniform scaling of
        a proper rotation.
        """
        if self._decomposed is None:
            lin = self.matrix[:3, :3]
            gram_diag = np.einsum("ij,ij->i", lin, lin)  # diag of L L^T
            r2 = gram_diag[0]
            if r2 <= 1e-24:
                raise TransformError("degenerate linear block (zero first row)")
            if np.max(np.abs(gram_diag - r2)) > UNIFORM_SCALE_RTOL * max(r2, 1e-24):
                raise TransformError(
                    f"non-uniform scale: diag(LL^T) = {gram_diag}, expected uniform"
                )
            r = math.sqrt(r2)
            r_norm = lin / r
            err = np.max(np.abs(r_norm.T @ r_norm - np.eye(3)))
            if err > 1e-6:
                raise TransformError(f"normalized block not orthonormal (err {err:.2e})")
            if np.linalg.det(r_norm) < 0.0:
                raise TransformError("reflection (det < 0) is not a valid transform")
            self._decomposed = (r, r_norm)
        return self._decomposed

    @property
    def ratio(self) -> float:
        return self.decompose_ratio()[0]

    @property
    def rotation(self) -> np.ndarray:
        """Orthonormal rotation block (scale removed)."""
        return self.decompose_ratio()[1]

    @property
    def linear(self) -> np.ndarray:
        return self.matrix[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.matrix[:3, 3]

    def is_rigid(self, tol: float = 1e-9) -> bool:
        try:
            return abs(self.ratio - 1.0) <= tol
        except TransformError:
            return False

    # -- algebra -------------------------------------------------------------

    def inverse(self) -> "SimilarityTransform":
        r, rot = self.decompose_ratio()
        lin_inv = rot.T / r
        m = np.eye(4)
        m[:3, :3] = lin_inv
        m[:3, 3] = -lin_inv @ self.translation
        return SimilarityTransform(m)

    def __matmul__(self, other: "SimilarityTransform") -> "SimilarityTransform":
        if not isinstance(other, SimilarityTransform):
            return NotImplemented
        return SimilarityTransform(self.matrix @ other.matrix)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Apply to points of shape (3,) or (N, 3)."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.matrix[:3, :3].T + self.matrix[:3, 3]

    def __repr__(self) -> str:
        return f"SimilarityTransform({self.matrix.tolist()})"


# ---------------------------------------------------------------------------
# transform files: 16-number row-major matrix or compact `tx ty tz qw qx qy qz r`
# ---------------------------------------------------------------------------

def load_transform_file(path) -> SimilarityTransform:
    tokens: list[float] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                tokens.extend(float(tok) for tok in line.split())
    if len(tokens) == 16:
        return SimilarityTransform(np.array(tokens).reshape(4, 4))
    if len(tokens) == 8:
        tx, ty, tz, qw, qx, qy, qz, r = tokens
        return SimilarityTransform.from_quat((qw, qx, qy, qz), (tx, ty, tz), r)
    raise TransformError(
        f"{path}: expected 16 (matrix) or 8 (tx ty tz qw qx qy qz r) numbers, got {len(tokens)}"
    )


def save_transform_file(transform: SimilarityTransform, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in transform.matrix:
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")
