"""Image-signature saliency and Otsu binarization of the resulting map."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import imgproc
from .errors import InvalidInputError, InvalidParameterError

OTSU_BINS = 256
MIN_WORKING_HEIGHT = 8
# DCT coefficients below this fraction of the largest one count as zero
SIGN_RTOL = 1e-10


@dataclass(frozen=True)
class SaliencyConfig:
    sigma: float = 12.0
    working_width: int = 64

    def __post_init__(self):
        if not self.sigma > 0:
            raise InvalidParameterError(f"sigma must be > 0, got {self.sigma}")
        if self.working_width < 8:
            raise InvalidParameterError(f"working_width must be >= 8, got {self.working_width}")


def working_shape(width: int, height: int, working_width: int) -> tuple[int, int]:
    """(width, height) of the downsampled grid, aspect preserved."""
    wh = max(MIN_WORKING_HEIGHT, int(round(height * working_width / width)))
    return working_width, wh


def signature_map(x: np.ndarray, sigma: float) -> np.ndarray:
    """Blurred squared sign-map reconstruction, min-max normalized.

    Works on the grid it is given; no resizing.
    """
    coef = imgproc.dct2(x)
    sign = np.sign(coef)
    sign[np.abs(coef) <= SIGN_RTOL * np.abs(coef).max()] = 0
    recon = imgproc.idct2(sign)
    return _minmax(imgproc.gaussian_blur(recon * recon, sigma))


def _minmax(s: np.ndarray) -> np.ndarray:
    lo, hi = s.min(), s.max()
    if hi - lo <= 1e-12 * max(abs(hi), 1.0):
        return np.zeros_like(s)
    return (s - lo) / (hi - lo)


def image_signature(img, cfg: SaliencyConfig | None = None) -> np.ndarray:
    """Saliency map in [0, 1] with the same shape as ``img``."""
    cfg = cfg or SaliencyConfig()
    img = imgproc.check_gray(img)
    h, w = img.shape
    ww, wh = working_shape(w, h, cfg.working_width)
    small = imgproc.resize_bilinear(img, ww, wh)
    s = signature_map(small, cfg.sigma)
    # renormalize so the upsampled map still spans exactly [0, 1]
    return np.clip(_minmax(imgproc.resize_matrix(s, w, h)), 0.0, 1.0)


def _histogram(values: np.ndarray) -> np.ndarray:
    idx = np.minimum((values * OTSU_BINS).astype(np.intp), OTSU_BINS - 1)
    return np.bincount(idx.ravel(), minlength=OTSU_BINS)


def otsu_from_histogram(hist) -> int:
    """Index ``j`` of the best split: classes are bins ``< j`` and ``>= j``.

    Returns 0 when no split separates two non-empty classes. Ties go to the
    smallest ``j``.
    """
    hist = np.asarray(hist, dtype=np.int64)
    n = len(hist)
    total = int(hist.sum())
    if total == 0:
        raise InvalidInputError("empty histogram")
    levels = np.arange(n, dtype=np.int64)
    # between-class variance ~ (M*w0 - S0*N)^2 / (w0*w1), compared in exact integers
    w0 = np.cumsum(hist)[:-1]
    m0 = np.cumsum(hist * levels)[:-1]
    w1 = total - w0
    m_total = int((hist * levels).sum())
    best_j, best_num, best_den = 0, 0, 1
    for j in range(1, n):
        a, b = int(w0[j - 1]), int(w1[j - 1])
        if a == 0 or b == 0:
            continue
        diff = m_total * a - int(m0[j - 1]) * total
        num, den = diff * diff, a * b
        # compare num/den > best_num/best_den without rounding
        if num * best_den > best_num * den:
            best_j, best_num, best_den = j, num, den
    return best_j


def otsu_threshold(smap) -> float:
    """Otsu threshold of a map with values in [0, 1], on 256 equal bins.

    The returned value sits one ulp below the bin edge ``j / 256`` so that
    ``binarize`` puts samples in bins ``>= j`` in the foreground and samples
    in lower bins in the background.
    """
    smap = np.asarray(smap, dtype=np.float64)
    if smap.size == 0:
        raise InvalidInputError("cannot threshold an empty map")
    j = otsu_from_histogram(_histogram(np.clip(smap, 0.0, 1.0)))
    if j == 0:
        return 0.0
    return _edge_below(j)


def _edge_below(j: int) -> float:
    return float(np.nextafter(j / OTSU_BINS, -np.inf))


def binarize(smap, t: float) -> np.ndarray:
    if not 0.0 <= t < 1.0:
        raise InvalidParameterError(f"threshold must lie in [0, 1), got {t}")
    return (np.asarray(smap) > t).astype(np.uint8)


def saliency_mask(img, cfg: SaliencyConfig | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(saliency_map, binary_mask)`` for an image."""
    smap = image_signature(img, cfg)
    return smap, binarize(smap, otsu_threshold(smap))
