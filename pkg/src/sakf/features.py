"""Dense keypoint grids and upright 128-d SIFT descriptors."""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import InvalidInputError, InvalidParameterError

N_CELLS = 4
N_ORIENT = 8
DIM = N_CELLS * N_CELLS * N_ORIENT
CLIP = 0.2


class Keypoint(NamedTuple):
    """Patch center in 1-based pixel coordinates plus patch side length."""

    x: int
    y: int
    size: int

    def patch_origin(self) -> tuple[int, int]:
        """0-based (column, row) of the patch's top-left pixel."""
        half = math.ceil(self.size / 2)
        return self.x - half, self.y - half


@dataclass
class Descriptors:
    """A batch of descriptors with the keypoints they describe.

    ``values`` has shape (n, 128); ``keypoints`` has shape (n, 3) holding
    (x, y, size) per row, same convention as :class:`Keypoint`.
    """

    values: np.ndarray
    keypoints: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1, DIM)
        self.keypoints = np.asarray(self.keypoints, dtype=np.int64).reshape(-1, 3)
        if len(self.values) != len(self.keypoints):
            raise InvalidInputError("descriptor/keypoint count mismatch")

    def __len__(self):
        return len(self.values)

    def __getitem__(self, idx) -> Descriptors:
        if isinstance(idx, (int, np.integer)):
            idx = [idx]
        return Descriptors(self.values[idx], self.keypoints[idx])

    @classmethod
    def empty(cls) -> Descriptors:
        return cls(np.zeros((0, DIM)), np.zeros((0, 3), dtype=np.int64))

    @classmethod
    def concat(cls, parts) -> Descriptors:
        parts = list(parts)
        if not parts:
            return cls.empty()
        return cls(np.concatenate([p.values for p in parts]),
                   np.concatenate([p.keypoints for p in parts]))

    def nonzero(self) -> Descriptors:
        return self[np.flatnonzero(np.any(self.values != 0, axis=1))]


def dense_grid(width: int, height: int, step: int, size: int) -> list[Keypoint]:
    """Row-major grid of keypoints whose patches fit inside the image."""
    if step < 1 or size < 1:
        raise InvalidParameterError("step and size must be >= 1")
    half = math.ceil(size / 2)
    reach = size - half  # pixels right of / below the center
    xs = range(half, width - reach + 1, step)
    ys = range(half, height - reach + 1, step)
    return [Keypoint(x, y, size) for y in ys for x in xs]


@functools.lru_cache(maxsize=16)
def _spatial_weights(size: int) -> np.ndarray:
    """(size*size, 16) weights: Gaussian window times bilinear cell share."""
    coord = (np.arange(size) + 0.5) * N_CELLS / size - 0.5  # in cell units
    lo = np.floor(coord).astype(int)
    frac = coord - lo
    share = np.zeros((size, N_CELLS))
    for p in range(size):
        for c, wgt in ((lo[p], 1 - frac[p]), (lo[p] + 1, frac[p])):
            if 0 <= c < N_CELLS:
                share[p, c] += wgt
    center = (size - 1) / 2
    sigma = size / 2
    g = np.exp(-((np.arange(size) - center) ** 2) / (2 * sigma ** 2))
    rows = share * g[:, None]  # (size, 4)
    w = np.einsum("ya,xb->yxab", rows, rows).reshape(size * size, N_CELLS * N_CELLS)
    w.setflags(write=False)
    return w


def _patch_gradients(patches: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    padded = np.pad(patches, ((0, 0), (1, 1), (1, 1)), mode="edge")
    gx = (padded[:, 1:-1, 2:] - padded[:, 1:-1, :-2]) / 2
    gy = (padded[:, 2:, 1:-1] - padded[:, :-2, 1:-1]) / 2
    return gx, gy


def _orientation_histograms(patches: np.ndarray) -> np.ndarray:
    """Raw (n, 16, 8) weighted histograms for a stack of square patches."""
    n, size, _ = patches.shape
    gx, gy = _patch_gradients(patches)
    mag = np.hypot(gx, gy).reshape(n, -1)
    theta = np.mod(np.arctan2(gy, gx), 2 * np.pi).reshape(n, -1)
    pos = theta * (N_ORIENT / (2 * np.pi))
    b0 = np.floor(pos).astype(np.intp) % N_ORIENT
    f = pos - np.floor(pos)
    b1 = (b0 + 1) % N_ORIENT
    orient = np.zeros((n, size * size, N_ORIENT))
    rows = np.arange(n)[:, None]
    cols = np.arange(size * size)[None, :]
    np.add.at(orient, (rows, cols, b0), mag * (1 - f))
    np.add.at(orient, (rows, cols, b1), mag * f)
    return np.einsum("npo,pc->nco", orient, _spatial_weights(size))


def normalize_descriptor(raw: np.ndarray) -> np.ndarray:
    """L2-normalize, clip at 0.2, renormalize, then clip again.

    The last clip keeps every component <= 0.2; the norm is then at most 1
    and equals 1 unless renormalization pushed a component past the clip.
    """
    raw = np.asarray(raw, dtype=np.float64)
    norm = np.linalg.norm(raw)
    if norm == 0:
        return np.zeros_like(raw)
    v = np.minimum(raw / norm, CLIP)
    v /= np.linalg.norm(v)
    return np.minimum(v, CLIP)


def _patches(img: np.ndarray, keypoints) -> np.ndarray:
    h, w = img.shape
    out = []
    for x, y, size in keypoints:
        c0, r0 = Keypoint(int(x), int(y), int(size)).patch_origin()
        if c0 < 0 or r0 < 0 or c0 + size > w or r0 + size > h:
            raise InvalidInputError(f"patch of keypoint ({x}, {y}, size {size}) leaves the {w}x{h} image")
        out.append(img[r0:r0 + size, c0:c0 + size])
    return np.asarray(out, dtype=np.float64)


def describe(img, keypoints) -> np.ndarray:
    """(n, 128) descriptors for keypoints sharing one patch size."""
    img = np.asarray(img, dtype=np.float64)
    keypoints = list(keypoints)
    if not keypoints:
        return np.zeros((0, DIM))
    if len({int(k[2]) for k in keypoints}) != 1:
        raise InvalidInputError("keypoints in one batch must share a patch size")
    raw = _orientation_histograms(_patches(img, keypoints)).reshape(len(keypoints), DIM)
    return np.array([normalize_descriptor(r) for r in raw])


def sift_descriptor(img, kp: Keypoint) -> np.ndarray:
    return describe(img, [kp])[0]


def extract_dense_sift(img, step: int = 7, size: int = 7) -> Descriptors:
    img = np.asarray(img, dtype=np.float64)
    grid = dense_grid(img.shape[1], img.shape[0], step, size)
    if not grid:
        return Descriptors.empty()
    return Descriptors(describe(img, grid), np.array(grid, dtype=np.int64))
