"""Tile-based software rasterization of Gaussian scenes into RGB + depth.

Projection follows the EWA scheme: camera-frame mean via the rigid
world-from-camera pose, 2D covariance J W Sigma W^T J^T (+ a 0.3 px^2
low-pass dilation), pinhole pixel coords u = fx x/z + cx. Pixel (row i,
col j) samples the continuous image plane at (u, v) = (j, i).

Compositing is front-to-back alpha blending over depth-sorted fragments
(stable index tie-break), a pixel dropping out once its transmittance
falls below 1e-4. Two traversals of the same math are provided: `render`
(16x16 tiles, fragment-major within each tile, numba) and
`render_reference` (global-sort fragment-major numpy); the latter is the
verification path and composites each pixel in the identical order with
the identical skip rules, so the two agree to rounding error.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numba import config as _numba_config
from numba import njit, prange

# the sandboxed TBB build is too old; prefer layers that exist everywhere
_numba_config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

from .splats import GaussianScene, eval_sh_basis, scene_covariances
from .transforms import SimilarityTransform

TILE = 16
DILATION = 0.3          # px^2 added to cov2d diagonal
NEAR_PLANE = 0.01       # meters
ALPHA_CUTOFF = 1.0 / 255.0
ALPHA_CAP = 0.99
TRANSMITTANCE_FLOOR = 1e-4
FOOTPRINT_SIGMAS = 3.0


@dataclass
class CameraModel:
    """Pinhole camera: intrinsics in pixels plus a rigid world-from-camera pose."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    pose: SimilarityTransform

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")
        if not self.pose.is_rigid(1e-6):
            raise ValueError("camera pose must be rigid (unit scale)")

    @property
    def center(self) -> np.ndarray:
        """Camera position in world coordinates."""
        return self.pose.translation

    def world_to_camera(self) -> tuple[np.ndarray, np.ndarray]:
        r = self.pose.rotation
        t = self.pose.translation
        return r.T, -r.T @ t

    def scaled(self, factor: int) -> "CameraModel":
        """Downsampled camera for pyramid matching (dims must divide evenly)."""
        if self.width % factor or self.height % factor:
            raise ValueError(f"{self.width}x{self.height} not divisible by {factor}")
        return CameraModel(self.fx / factor, self.fy / factor,
                           self.cx / factor, self.cy / factor,
                           self.width // factor, self.height // factor, self.pose)


@dataclass
class SplatFragment:
    """One projected Gaussian: 2D mean/covariance in pixels, camera depth,
    activated opacity, and the RGB evaluated for this view."""

    mean2d: np.ndarray
    cov2d: np.ndarray
    depth: float
    opacity: float
    color: np.ndarray


@dataclass
class RenderOutput:
    rgb: np.ndarray     # (H, W, 3) in [0, 1]
    depth: np.ndarray   # (H, W) alpha-weighted expected depth, 0 where alpha == 0
    alpha: np.ndarray   # (H, W) accumulated opacity


def _project_scene(scene: GaussianScene, cam: CameraModel):
    """Project every Gaussian; per-fragment arrays for the survivors, already
    sorted front to back (camera depth, original index breaking ties).

    Culling: camera depth <= near plane, or the 3-sigma footprint box missing
    the image entirely.
    """
    w_rot, w_t = cam.world_to_camera()
    p_cam = scene.means @ w_rot.T + w_t
    in_front = p_cam[:, 2] > NEAR_PLANE
    if not np.any(in_front):
        return None

    idx = np.nonzero(in_front)[0]
    p = p_cam[idx]
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    u = cam.fx * x / z + cam.cx
    v = cam.fy * y / z + cam.cy

    # J W Sigma W^T J^T with J the projection Jacobian at the camera-frame mean
    cov3d = scene_covariances(scene)[idx]
    jw = np.zeros((len(idx), 2, 3))
    jw[:, 0, 0] = cam.fx / z
    jw[:, 0, 2] = -cam.fx * x / (z * z)
    jw[:, 1, 1] = cam.fy / z
    jw[:, 1, 2] = -cam.fy * y / (z * z)
    jw = jw @ w_rot
    cov2d = (jw @ cov3d) @ jw.transpose(0, 2, 1)
    a = cov2d[:, 0, 0] + DILATION
    b = cov2d[:, 0, 1]
    c = cov2d[:, 1, 1] + DILATION

    # 3-sigma radius from the larger eigenvalue of [[a, b], [b, c]]
    mid = 0.5 * (a + c)
    lam_max = mid + np.sqrt(np.maximum(0.25 * (a - c) ** 2 + b * b, 0.0))
    radius = FOOTPRINT_SIGMAS * np.sqrt(lam_max)

    lo_x, hi_x = np.floor(u - radius), np.floor(u + radius)
    lo_y, hi_y = np.floor(v - radius), np.floor(v + radius)
    visible = (lo_x <= cam.width - 1) & (hi_x >= 0) \
        & (lo_y <= cam.height - 1) & (hi_y >= 0)
    if not np.any(visible):
        return None

    keep = np.nonzero(visible)[0]
    # front-to-back before anything else touches the arrays
    order = np.lexsort((idx[keep], z[keep]))
    keep = keep[order]
    idx = idx[keep]
    a, b, c = a[keep], b[keep], c[keep]
    det = a * c - b * b
    conic = np.stack([c / det, b / det, a / det], axis=1)

    dirs = scene.means[idx] - cam.center
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    basis = eval_sh_basis(scene.sh_degree, dirs)
    colors = np.clip(
        (scene.sh_coeffs[idx] @ basis[:, :, None])[:, :, 0] + 0.5, 0.0, 1.0)

    return {
        "index": idx,
        "u": np.ascontiguousarray(u[keep]),
        "v": np.ascontiguousarray(v[keep]),
        "conic": conic,
        "cov2d_abc": (a, b, c),
        "depth": np.ascontiguousarray(z[keep]),
        "opacity": scene.opacities[idx],
        "color": np.ascontiguousarray(colors),
        "box": (
            np.maximum(lo_x[keep], 0.0).astype(np.int64),
            np.minimum(hi_x[keep], cam.width - 1).astype(np.int64),
            np.maximum(lo_y[keep], 0.0).astype(np.int64),
            np.minimum(hi_y[keep], cam.height - 1).astype(np.int64),
        ),
    }


def project_gaussian(g, cam: CameraModel) -> Optional[SplatFragment]:
    """Project a single Gaussian; None when culled."""
    scene = GaussianScene.from_gaussians([g])
    frags = _project_scene(scene, cam)
    if frags is None:
        return None
    a, b, c = frags["cov2d_abc"]
    return SplatFragment(
        mean2d=np.array([frags["u"][0], frags["v"][0]]),
        cov2d=np.array([[a[0], b[0]], [b[0], c[0]]]),
        depth=float(frags["depth"][0]),
        opacity=float(frags["opacity"][0]),
        color=frags["color"][0],
    )


def alpha_of(frag: SplatFragment, pixel: np.ndarray) -> float:
    """alpha = opacity * exp(-0.5 d^T cov2d^-1 d), capped at 0.99; values
    below 1/255 count as zero."""
    d = np.asarray(pixel, dtype=np.float64) - frag.mean2d
    alpha = frag.opacity * math.exp(-0.5 * float(d @ np.linalg.solve(frag.cov2d, d)))
    alpha = min(alpha, ALPHA_CAP)
    return alpha if alpha >= ALPHA_CUTOFF else 0.0


# ---------------------------------------------------------------------------
# tile pass
# ---------------------------------------------------------------------------

@njit(cache=True)
def _count_tiles(tx0, tx1, ty0, ty1, n_tiles_x, counts):
    for i in range(len(tx0)):
        for ty in range(ty0[i], ty1[i] + 1):
            base = ty * n_tiles_x
            for tx in range(tx0[i], tx1[i] + 1):
                counts[base + tx] += 1


@njit(cache=True)
def _fill_tiles(tx0, tx1, ty0, ty1, n_tiles_x, cursor, tile_frags):
    # fragments come depth-sorted, so each tile's slice stays depth-sorted
    for i in range(len(tx0)):
        for ty in range(ty0[i], ty1[i] + 1):
            base = ty * n_tiles_x
            for tx in range(tx0[i], tx1[i] + 1):
                tile_frags[cursor[base + tx]] = i
                cursor[base + tx] += 1


@njit(parallel=True, cache=True)
def _composite_tiles(tile_frags, tile_start, tile_end, n_tiles_x, n_tiles_y,
                     width, height, u, v, ca, cb, cc, bx0, bx1, by0, by1,
                     opacity, color, depth, background,
                     out_rgb, out_depth, out_alpha):
    for t in prange(n_tiles_x * n_tiles_y):
        px0 = (t % n_tiles_x) * TILE
        py0 = (t // n_tiles_x) * TILE
        tw = min(TILE, width - px0)
        th = min(TILE, height - py0)
        n_pix = tw * th
        trans = np.ones(n_pix)
        buf = np.zeros((n_pix, 5))  # r, g, b, weighted depth, accumulated alpha
        n_saturated = 0
        for s in range(tile_start[t], tile_end[t]):
            if n_saturated == n_pix:
                break
            f = tile_frags[s]
            ax0 = max(px0, bx0[f])
            ax1 = min(px0 + tw - 1, bx1[f])
            ay0 = max(py0, by0[f])
            ay1 = min(py0 + th - 1, by1[f])
            uf = u[f]
            vf = v[f]
            a_ = ca[f]
            b_ = cb[f]
            c_ = cc[f]
            op = opacity[f]
            cr = color[f, 0]
            cg = color[f, 1]
            cb_ = color[f, 2]
            df = depth[f]
            for py in range(ay0, ay1 + 1):
                dy = vf - py
                row = (py - py0) * tw - px0
                for px in range(ax0, ax1 + 1):
                    li = row + px
                    tr = trans[li]
                    if tr < TRANSMITTANCE_FLOOR:
                        continue
                    dx = uf - px
                    power = -0.5 * (a_ * dx * dx + c_ * dy * dy) - b_ * dx * dy
                    if power > 0.0:
                        continue
                    alpha = op * math.exp(power)
                    if alpha > ALPHA_CAP:
                        alpha = ALPHA_CAP
                    if alpha < ALPHA_CUTOFF:
                        continue
                    w = alpha * tr
                    buf[li, 0] += cr * w
                    buf[li, 1] += cg * w
                    buf[li, 2] += cb_ * w
                    buf[li, 3] += df * w
                    buf[li, 4] += w
                    tr *= 1.0 - alpha
                    trans[li] = tr
                    if tr < TRANSMITTANCE_FLOOR:
                        n_saturated += 1
        for j in range(th):
            for i in range(tw):
                li = j * tw + i
                tr = trans[li]
                acc = buf[li, 4]
                out_rgb[py0 + j, px0 + i, 0] = buf[li, 0] + background[0] * tr
                out_rgb[py0 + j, px0 + i, 1] = buf[li, 1] + background[1] * tr
                out_rgb[py0 + j, px0 + i, 2] = buf[li, 2] + background[2] * tr
                out_depth[py0 + j, px0 + i] = buf[li, 3] / acc if acc > 0.0 else 0.0
                out_alpha[py0 + j, px0 + i] = acc


def _background_image(cam: CameraModel, background) -> RenderOutput:
    bg = np.asarray(background, dtype=np.float64).reshape(3)
    rgb = np.tile(bg, (cam.height, cam.width, 1))
    return RenderOutput(rgb=rgb,
                        depth=np.zeros((cam.height, cam.width)),
                        alpha=np.zeros((cam.height, cam.width)))


def render(scene: GaussianScene, cam: CameraModel,
           background=(0.0, 0.0, 0.0)) -> RenderOutput:
    """Front-to-back composite of the whole scene."""
    if len(scene) == 0:
        raise ValueError("empty scene")
    frags = _project_scene(scene, cam)
    if frags is None:
        return _background_image(cam, background)

    x0, x1, y0, y1 = frags["box"]
    tx0, tx1 = x0 // TILE, x1 // TILE
    ty0, ty1 = y0 // TILE, y1 // TILE
    n_tiles_x = (cam.width + TILE - 1) // TILE
    n_tiles_y = (cam.height + TILE - 1) // TILE
    n_tiles = n_tiles_x * n_tiles_y

    counts = np.zeros(n_tiles, dtype=np.int64)
    _count_tiles(tx0, tx1, ty0, ty1, n_tiles_x, counts)
    tile_start = np.zeros(n_tiles, dtype=np.int64)
    np.cumsum(counts[:-1], out=tile_start[1:])
    tile_end = tile_start + counts
    tile_frags = np.empty(int(counts.sum()), dtype=np.int64)
    _fill_tiles(tx0, tx1, ty0, ty1, n_tiles_x, tile_start.copy(), tile_frags)

    out_rgb = np.empty((cam.height, cam.width, 3))
    out_depth = np.empty((cam.height, cam.width))
    out_alpha = np.empty((cam.height, cam.width))
    bg = np.asarray(background, dtype=np.float64).reshape(3)
    _composite_tiles(
        tile_frags, tile_start, tile_end, n_tiles_x, n_tiles_y,
        cam.width, cam.height,
        frags["u"], frags["v"],
        frags["conic"][:, 0].copy(), frags["conic"][:, 1].copy(),
        frags["conic"][:, 2].copy(),
        x0, x1, y0, y1,
        frags["opacity"], frags["color"], frags["depth"],
        bg, out_rgb, out_depth, out_alpha,
    )
    return RenderOutput(rgb=out_rgb, depth=out_depth, alpha=out_alpha)


def render_reference(scene: GaussianScene, cam: CameraModel,
                     background=(0.0, 0.0, 0.0)) -> RenderOutput:
    """Naive global-sort per-pixel compositor; the verification path for
    `render` (same fragment math, no tiling)."""
    if len(scene) == 0:
        raise ValueError("empty scene")
    frags = _project_scene(scene, cam)
    if frags is None:
        return _background_image(cam, background)

    h, w = cam.height, cam.width
    x0, x1, y0, y1 = frags["box"]
    trans = np.ones((h, w))
    rgb = np.zeros((h, w, 3))
    dep = np.zeros((h, w))
    acc = np.zeros((h, w))
    cols = np.arange(w, dtype=np.float64)
    rows = np.arange(h, dtype=np.float64)
    for f in range(len(frags["u"])):
        xs = slice(x0[f], x1[f] + 1)
        ys = slice(y0[f], y1[f] + 1)
        dx = frags["u"][f] - cols[xs]
        dy = frags["v"][f] - rows[ys]
        ca, cb, cc = frags["conic"][f]
        power = -0.5 * (ca * dx[None, :] * dx[None, :] + cc * dy[:, None] * dy[:, None]) \
            - cb * dx[None, :] * dy[:, None]
        alpha = np.minimum(frags["opacity"][f] * np.exp(power), ALPHA_CAP)
        tbox = trans[ys, xs]
        used = (power <= 0.0) & (alpha >= ALPHA_CUTOFF) & (tbox >= TRANSMITTANCE_FLOOR)
        wgt = np.where(used, alpha * tbox, 0.0)
        rgb[ys, xs] += wgt[:, :, None] * frags["color"][f]
        dep[ys, xs] += wgt * frags["depth"][f]
        acc[ys, xs] += wgt
        trans[ys, xs] = tbox * np.where(used, 1.0 - alpha, 1.0)
    bg = np.asarray(background, dtype=np.float64).reshape(3)
    rgb += trans[:, :, None] * bg
    dep = np.where(acc > 0.0, dep / np.where(acc > 0.0, acc, 1.0), 0.0)
    return RenderOutput(rgb=rgb, depth=dep, alpha=acc)


def render_mask(scene: GaussianScene, cam: CameraModel,
                alpha_threshold: float = 0.5) -> np.ndarray:
    """Binary coverage mask: accumulated alpha > threshold."""
    if not 0.0 < alpha_threshold < 1.0:
        raise ValueError("alpha_threshold must lie in (0, 1)")
    if len(scene) == 0:
        return np.zeros((cam.height, cam.width), dtype=bool)
    return render(scene, cam).alpha > alpha_threshold


# ---------------------------------------------------------------------------
# camera files: JSON {fx, fy, cx, cy, width, height, pose: 16 row-major}
# ---------------------------------------------------------------------------

def camera_from_dict(rec: dict) -> CameraModel:
    pose = SimilarityTransform(np.asarray(rec["pose"], dtype=np.float64).reshape(4, 4))
    return CameraModel(fx=float(rec["fx"]), fy=float(rec["fy"]),
                       cx=float(rec["cx"]), cy=float(rec["cy"]),
                       width=int(rec["width"]), height=int(rec["height"]), pose=pose)


def camera_to_dict(cam: CameraModel) -> dict:
    return {
        "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
        "width": cam.width, "height": cam.height,
        "pose": cam.pose.matrix.reshape(-1).tolist(),
    }


def load_camera_file(path) -> CameraModel:
    with open(path, "r", encoding="utf-8") as fh:
        return camera_from_dict(json.load(fh))


def save_camera_file(cam: CameraModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(camera_to_dict(cam), fh, indent=2)
        fh.write("\n")
