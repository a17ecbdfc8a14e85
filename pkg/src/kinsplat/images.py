"""PNG / depth raster helpers shared by the dataset and evaluation paths.

Images travel as float64 arrays in [0, 1], (H, W, 3). Files are 8-bit RGB
PNG: quantization is round-to-nearest, encoding parameters are pinned so
identical arrays give identical bytes. Depth rasters are float32 .npy.
"""

from __future__ import annotations

import io

import numpy as np
from PIL import Image


def to_uint8(rgb: np.ndarray) -> np.ndarray:
    rgb = np.asarray(rgb, dtype=np.float64)
    return np.clip(np.rint(rgb * 255.0), 0.0, 255.0).astype(np.uint8)


def from_uint8(arr: np.ndarray) -> np.ndarray:
    return np.asarray(arr, dtype=np.float64) / 255.0


def encode_png(rgb: np.ndarray) -> bytes:
    """Lossless 8-bit PNG bytes for a [0, 1] float image."""
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got {rgb.shape}")
    buf = io.BytesIO()
    Image.fromarray(to_uint8(rgb), mode="RGB").save(
        buf, format="PNG", compress_level=6)
    return buf.getvalue()


def decode_png(data: bytes) -> np.ndarray:
    with Image.open(io.BytesIO(data)) as im:
        return from_uint8(np.asarray(im.convert("RGB")))


def save_image(rgb: np.ndarray, path) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_png(rgb))


def load_image(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_png(fh.read())


def save_depth(depth: np.ndarray, path) -> None:
    np.save(path, np.asarray(depth, dtype=np.float32))


def load_depth(path) -> np.ndarray:
    return np.load(path).astype(np.float64)
