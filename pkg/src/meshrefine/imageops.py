"""Float images as numpy arrays: blur, finite differences, l1 and PNG codecs.

Images are ``(H, W)`` for single-channel data (masks, depth, coverage) and
``(H, W, 3)`` for normals. Normal images hold vectors in ``[-1, 1]`` with the
zero vector as background.
"""

from __future__ import annotations

import os

import numpy as np
import png
from scipy.ndimage import convolve1d

from .errors import ConfigError, DataError

DEFAULT_BLUR_KERNEL = 7
DEFAULT_BLUR_SIGMA = 1.4


def gaussian_kernel(kernel_size: int, sigma: float) -> np.ndarray:
    if kernel_size < 1 or kernel_size % 2 == 0:
        raise ConfigError(f"blur kernel size must be odd and >= 1, got {kernel_size}")
    if sigma <= 0:
        raise ConfigError(f"blur sigma must be positive, got {sigma}")
    r = kernel_size // 2
    x = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(image, kernel_size: int = DEFAULT_BLUR_KERNEL, sigma: float = DEFAULT_BLUR_SIGMA):
    """Separable Gaussian blur of every channel with clamped borders."""
    k = gaussian_kernel(kernel_size, sigma)
    img = np.asarray(image, dtype=np.float64)
    if kernel_size == 1:
        return img.copy()
    out = convolve1d(img, k, axis=0, mode="nearest")
    return convolve1d(out, k, axis=1, mode="nearest")


def image_gradient(image):
    """Forward differences along columns (gx) and rows (gy); last column/row is 0."""
    img = np.asarray(image, dtype=np.float64)
    if img.shape[0] < 2 or img.shape[1] < 2:
        raise DataError(f"image too small for gradients: {img.shape[:2]}")
    gx = np.zeros_like(img)
    gy = np.zeros_like(img)
    gx[:, :-1] = img[:, 1:] - img[:, :-1]
    gy[:-1] = img[1:] - img[:-1]
    return gx, gy


def image_gradient_adjoint(gx, gy):
    """Transpose of :func:`image_gradient` applied to ``(gx, gy)``."""
    out = np.zeros_like(gx)
    out[:, :-1] -= gx[:, :-1]
    out[:, 1:] += gx[:, :-1]
    out[:-1] -= gy[:-1]
    out[1:] += gy[:-1]
    return out


def _check_shapes(a, b):
    if a.shape != b.shape:
        raise DataError(f"image shape mismatch: {a.shape} vs {b.shape}")


def l1_diff(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_shapes(a, b)
    return float(np.abs(a - b).sum())


# -- PNG ---------------------------------------------------------------------

def _write_png(path, rows, width, height, greyscale, bitdepth):
    tmp = f"{path}.tmp"
    writer = png.Writer(width, height, greyscale=greyscale, bitdepth=bitdepth, compression=6)
    with open(tmp, "wb") as fh:
        writer.write(fh, rows)
    os.replace(tmp, path)


def _read_png(path):
    if not os.path.exists(path):
        raise DataError(f"no such image: {path}")
    try:
        w, h, rows, info = png.Reader(filename=str(path)).read()
        data = np.vstack([np.asarray(r, dtype=np.uint32) for r in rows])
    except png.Error as exc:
        raise DataError(f"{path}: {exc}") from None
    return data.reshape(h, w, info["planes"]), info


def encode_normals(normals) -> np.ndarray:
    n = np.asarray(normals, dtype=np.float64)
    return np.clip(np.rint((n + 1.0) * 0.5 * 65535.0), 0, 65535).astype(np.uint16)


def decode_normals(codes) -> np.ndarray:
    return np.asarray(codes, dtype=np.float64) / 65535.0 * 2.0 - 1.0


def encode_normal_png(normals, path) -> None:
    """Write ``(H, W, 3)`` vectors as 16-bit RGB with ``c = (n + 1) / 2``."""
    normals = np.asarray(normals)
    if normals.ndim != 3 or normals.shape[2] != 3:
        raise DataError(f"normal image must be (H, W, 3), got {normals.shape}")
    h, w, _ = normals.shape
    _write_png(path, encode_normals(normals).reshape(h, w * 3), w, h, False, 16)


def encode_rgb01_png(rgb01, path) -> None:
    """Write channels already in ``[0, 1]`` (e.g. blurred encoded normals) as 16-bit RGB."""
    c = np.clip(np.rint(np.asarray(rgb01) * 65535.0), 0, 65535).astype(np.uint16)
    h, w, _ = c.shape
    _write_png(path, c.reshape(h, w * 3), w, h, False, 16)


def decode_normal_png(path) -> np.ndarray:
    data, info = _read_png(path)
    if info["bitdepth"] != 16 or info["planes"] != 3:
        raise DataError(f"{path}: expected 16-bit RGB normals, got "
                        f"{info['bitdepth']}-bit with {info['planes']} channels")
    return decode_normals(data)


def encode_mask_png(mask, path) -> None:
    m = np.asarray(mask, dtype=np.float64)
    if m.ndim == 3 and m.shape[2] == 1:
        m = m[..., 0]
    if m.ndim != 2:
        raise DataError(f"mask must be single-channel, got {m.shape}")
    codes = np.clip(np.rint(m * 255.0), 0, 255).astype(np.uint8)
    _write_png(path, codes, m.shape[1], m.shape[0], True, 8)


def decode_mask_png(path) -> np.ndarray:
    data, info = _read_png(path)
    if info["planes"] != 1 or info["bitdepth"] != 8:
        raise DataError(f"{path}: expected 8-bit grayscale mask, got "
                        f"{info['bitdepth']}-bit with {info['planes']} channels")
    return data[..., 0].astype(np.float64) / 255.0


def encode_depth(depth, covered) -> np.ndarray:
    """Map foreground depth linearly to ``[1, 65535]`` (near is bright); background 0."""
    depth = np.asarray(depth, dtype=np.float64)
    out = np.zeros(depth.shape, dtype=np.uint16)
    if not np.any(covered):
        return out
    d = depth[covered]
    lo, hi = d.min(), d.max()
    span = hi - lo if hi > lo else 1.0
    out[covered] = np.rint(1.0 + (hi - d) / span * 65534.0).astype(np.uint16)
    return out


def encode_depth_png(depth, covered, path) -> None:
    codes = encode_depth(depth, covered)
    _write_png(path, codes, codes.shape[1], codes.shape[0], True, 16)


def decode_depth_png(path) -> np.ndarray:
    """Return the 16-bit codes scaled to ``[0, 1]``."""
    data, info = _read_png(path)
    if info["planes"] != 1 or info["bitdepth"] != 16:
        raise DataError(f"{path}: expected 16-bit grayscale depth")
    return data[..., 0].astype(np.float64) / 65535.0
