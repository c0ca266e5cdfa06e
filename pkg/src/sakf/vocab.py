"""K-means visual dictionaries and hard nearest-word assignment."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, InvalidParameterError

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-4
DEFAULT_MAX_ITERS = 100
_CHUNK = 4096


@dataclass
class VisualDictionary:
    words: np.ndarray
    requested_k: int | None = None

    def __post_init__(self):
        self.words = np.asarray(self.words, dtype=np.float64)
        if self.words.ndim != 2 or len(self.words) < 1:
            raise InvalidInputError("a dictionary needs at least one word")
        if not np.all(np.isfinite(self.words)):
            raise InvalidInputError("dictionary words must be finite")
        if self.requested_k is None:
            self.requested_k = len(self.words)

    @property
    def k(self) -> int:
        return len(self.words)

    def __eq__(self, other):
        if not isinstance(other, VisualDictionary):
            return NotImplemented
        return self.requested_k == other.requested_k and np.array_equal(self.words, other.words)

    def as_float32(self) -> VisualDictionary:
        """Copy with words rounded to single precision (the stored form)."""
        return VisualDictionary(self.words.astype(np.float32).astype(np.float64), self.requested_k)


def _exact_sqdist(x: np.ndarray, words: np.ndarray) -> np.ndarray:
    diff = words - x
    return np.einsum("ij,ij->i", diff, diff)


def nearest_words(x, words) -> tuple[np.ndarray, np.ndarray]:
    """Index and Euclidean distance of the nearest word for each row of ``x``.

    Distances are first bounded through the ||a||^2 - 2ab + ||b||^2
    expansion; any row whose runner-up is within rounding error of the best
    is rescanned with direct differences, so the result matches a naive
    linear scan exactly, lowest index winning ties.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    words = np.asarray(words, dtype=np.float64)
    n = len(x)
    idx = np.empty(n, dtype=np.intp)
    dist = np.empty(n)
    if n == 0:
        return idx, dist
    ww = np.einsum("ij,ij->i", words, words)
    for start in range(0, n, _CHUNK):
        xs = x[start:start + _CHUNK]
        xx = np.einsum("ij,ij->i", xs, xs)
        approx = xx[:, None] - 2.0 * (xs @ words.T) + ww[None, :]
        best = approx.min(axis=1)
        slack = 1e-9 * (xx + ww.max()) + 1e-12
        ambiguous = (approx <= (best + slack)[:, None]).sum(axis=1) > 1
        chunk_idx = approx.argmin(axis=1)
        for r in np.flatnonzero(ambiguous):
            cand = np.flatnonzero(approx[r] <= best[r] + slack[r])
            d = _exact_sqdist(xs[r], words[cand])
            chunk_idx[r] = cand[np.argmin(d)]
        diff = xs - words[chunk_idx]
        idx[start:start + len(xs)] = chunk_idx
        dist[start:start + len(xs)] = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    return idx, dist


def assign(d, dictionary: VisualDictionary) -> int:
    return int(nearest_words(d, dictionary.words)[0][0])


def min_distance(d, dictionary: VisualDictionary) -> float:
    return float(nearest_words(d, dictionary.words)[1][0])


def inertia(x, centers) -> float:
    return float(np.sum(nearest_words(x, centers)[1] ** 2))


def _kmeanspp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    chosen = [int(rng.integers(n))]
    d2 = _exact_sqdist(x[chosen[0]], x)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            break
        r = rng.random() * total
        j = int(np.searchsorted(np.cumsum(d2), r, side="right"))
        j = min(j, n - 1)
        chosen.append(j)
        d2 = np.minimum(d2, _exact_sqdist(x[j], x))
    return x[chosen].copy()


def _cluster_means(x: np.ndarray, labels: np.ndarray, k: int):
    # fixed summation order: ascending descriptor index within each cluster
    order = np.argsort(labels, kind="stable")
    sorted_labels = labels[order]
    counts = np.bincount(labels, minlength=k)
    sums = np.zeros((k, x.shape[1]))
    present = np.flatnonzero(counts)
    starts = np.searchsorted(sorted_labels, present)
    sums[present] = np.add.reduceat(x[order], starts, axis=0)
    return sums, counts


def update_centers(x, labels, dist, centers) -> np.ndarray:
    """Cluster means; empty clusters take the points farthest from their centers."""
    k = len(centers)
    sums, counts = _cluster_means(x, labels, k)
    new = centers.copy()
    full = counts > 0
    new[full] = sums[full] / counts[full, None]
    empty = np.flatnonzero(~full)
    if len(empty):
        far = np.argsort(-dist, kind="stable")
        new[empty] = x[far[:len(empty)]]
    return new


@dataclass
class KMeansResult:
    dictionary: VisualDictionary
    labels: np.ndarray
    n_iter: int
    inertia_history: list[float] = field(default_factory=list)

    @property
    def inertia(self) -> float:
        return self.inertia_history[-1]


def kmeans_fit(descriptors, k: int, seed: int = 0, max_iters: int = DEFAULT_MAX_ITERS,
               tol: float = DEFAULT_TOL) -> KMeansResult:
    """Lloyd's algorithm from a k-means++ start.

    ``inertia_history[0]`` is the inertia of the initial centers; one entry
    follows per assignment step.
    """
    x = np.asarray(descriptors, dtype=np.float64)
    if x.ndim != 2 or len(x) == 0:
        raise InvalidInputError("k-means needs at least one descriptor")
    if k < 1:
        raise InvalidParameterError(f"k must be >= 1, got {k}")
    if max_iters < 1:
        raise InvalidParameterError("max_iters must be >= 1")
    n_distinct = len(np.unique(x, axis=0))
    k_eff = min(k, n_distinct)
    if k_eff < k:
        log.info("k lowered from %d to %d (distinct descriptors)", k, k_eff)

    rng = np.random.default_rng(seed)
    centers = _kmeanspp(x, k_eff, rng)
    labels, dist = nearest_words(x, centers)
    history = [float(np.sum(dist ** 2))]
    n_iter = 0
    for n_iter in range(1, max_iters + 1):
        new = update_centers(x, labels, dist, centers)
        shift = np.sqrt(np.max(np.sum((new - centers) ** 2, axis=1)))
        centers = new
        labels, dist = nearest_words(x, centers)
        history.append(float(np.sum(dist ** 2)))
        if shift < tol:
            break
    return KMeansResult(VisualDictionary(centers, requested_k=k), labels, n_iter, history)


def kmeans(descriptors, k: int, seed: int = 0, max_iters: int = DEFAULT_MAX_ITERS,
           tol: float = DEFAULT_TOL) -> VisualDictionary:
    return kmeans_fit(descriptors, k, seed, max_iters, tol).dictionary
