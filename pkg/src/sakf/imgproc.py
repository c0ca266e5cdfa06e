"""Grayscale images, bilinear resizing, 2-D DCT and Gaussian blur.

Images are plain ``numpy`` float64 arrays of shape ``(height, width)`` with
values in ``[0, 255]``.
"""
from __future__ import annotations

import functools
import math
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import InvalidInputError, InvalidParameterError

LUMA_WEIGHTS = (0.299, 0.587, 0.114)
SUPPORTED_FORMATS = ("PNG", "JPEG")


def check_gray(img) -> np.ndarray:
    """Validate a grayscale image and return it as a float64 array."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InvalidInputError(f"expected a non-empty 2-D image, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("image contains non-finite samples")
    if arr.min() < 0 or arr.max() > 255:
        raise InvalidInputError("image samples must lie in [0, 255]")
    return arr


def to_grayscale(rgb) -> np.ndarray:
    """Rec. 601 luma of an 8-bit RGB raster, rounded half up."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise InvalidInputError(f"expected an (H, W, 3) raster, got shape {rgb.shape}")
    if rgb.shape[0] == 0 or rgb.shape[1] == 0:
        raise InvalidInputError("raster has zero width or height")
    rgb = rgb.astype(np.float64)
    luma = rgb[..., 0] * LUMA_WEIGHTS[0] + rgb[..., 1] * LUMA_WEIGHTS[1] + rgb[..., 2] * LUMA_WEIGHTS[2]
    return np.clip(np.floor(luma + 0.5), 0, 255)


def load_image(path) -> np.ndarray:
    """Read a PNG or JPEG file into a grayscale image."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            if im.format not in SUPPORTED_FORMATS:
                raise InvalidInputError(
                    f"{path}: unsupported image format {im.format!r} (expected PNG or JPEG)")
            if im.mode in ("L", "I;16", "I", "F"):
                arr = np.asarray(im.convert("L"), dtype=np.float64)
                return check_gray(arr)
            rgb = np.asarray(im.convert("RGB"))
    except FileNotFoundError:
        raise InvalidInputError(f"{path}: no such file") from None
    except (UnidentifiedImageError, OSError) as exc:
        raise InvalidInputError(f"{path}: cannot decode image ({exc})") from None
    return to_grayscale(rgb)


def _bilinear(arr: np.ndarray, new_height: int, new_width: int) -> np.ndarray:
    # corner-aligned: output corners sample input corners exactly
    h, w = arr.shape

    def axis(n_in, n_out):
        if n_out == 1 or n_in == 1:
            pos = np.zeros(n_out)
        else:
            pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
        lo = np.minimum(np.floor(pos).astype(np.intp), n_in - 1)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, pos - lo

    y0, y1, fy = axis(h, new_height)
    x0, x1, fx = axis(w, new_width)
    top = arr[y0][:, x0] * (1 - fx) + arr[y0][:, x1] * fx
    bottom = arr[y1][:, x0] * (1 - fx) + arr[y1][:, x1] * fx
    return top * (1 - fy)[:, None] + bottom * fy[:, None]


def resize_matrix(arr, new_width: int, new_height: int) -> np.ndarray:
    """Bilinear resize of an arbitrary real matrix (no clamping)."""
    if new_width < 1 or new_height < 1:
        raise InvalidParameterError("target dimensions must be >= 1")
    arr = np.asarray(arr, dtype=np.float64)
    if arr.shape == (new_height, new_width):
        return arr.copy()
    return _bilinear(arr, new_height, new_width)


def resize_bilinear(img, new_width: int, new_height: int) -> np.ndarray:
    out = resize_matrix(check_gray(img), new_width, new_height)
    return np.clip(out, 0.0, 255.0)


@functools.lru_cache(maxsize=64)
def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II basis; row k holds the k-th cosine."""
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    mat = np.cos(np.pi * (2 * i + 1) * k / (2 * n)) * math.sqrt(2.0 / n)
    mat[0, :] = math.sqrt(1.0 / n)
    mat.setflags(write=False)
    return mat


def dct2(img) -> np.ndarray:
    x = np.asarray(img, dtype=np.float64)
    if x.ndim != 2 or x.size == 0:
        raise InvalidInputError("dct2 needs a non-empty 2-D array")
    h, w = x.shape
    return dct_matrix(h) @ x @ dct_matrix(w).T


def idct2(coef) -> np.ndarray:
    c = np.asarray(coef, dtype=np.float64)
    if c.ndim != 2 or c.size == 0:
        raise InvalidInputError("idct2 needs a non-empty 2-D array")
    h, w = c.shape
    return dct_matrix(h).T @ c @ dct_matrix(w)


def gaussian_kernel(sigma: float) -> np.ndarray:
    """L1-normalized 1-D Gaussian of radius ceil(3 sigma)."""
    if not sigma > 0:
        raise InvalidParameterError(f"sigma must be > 0, got {sigma}")
    radius = math.ceil(3 * sigma)
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (t / sigma) ** 2)
    return k / k.sum()


def _convolve_axis(arr: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    radius = len(kernel) // 2
    pad = [(0, 0), (0, 0)]
    pad[axis] = (radius, radius)
    padded = np.pad(arr, pad, mode="edge")
    windows = np.lib.stride_tricks.sliding_window_view(padded, len(kernel), axis=axis)
    return windows @ kernel


def gaussian_blur(img, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with edge replication at the borders."""
    kernel = gaussian_kernel(sigma)
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise InvalidInputError("gaussian_blur needs a non-empty 2-D array")
    return _convolve_axis(_convolve_axis(arr, kernel, 1), kernel, 0)
