"""Hard-assignment bag-of-visual-words histograms."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .vocab import VisualDictionary, nearest_words


@dataclass
class BowVector:
    values: np.ndarray
    total_count: int

    @property
    def counts(self) -> np.ndarray:
        return np.rint(self.values * self.total_count).astype(np.int64)


def word_counts(values, dictionary: VisualDictionary) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64).reshape(-1, dictionary.words.shape[1])
    idx, _ = nearest_words(values, dictionary.words)
    return np.bincount(idx, minlength=dictionary.k)


def bovw_encode(values, dictionary: VisualDictionary) -> BowVector:
    """L1-normalized word histogram of a descriptor array (n, 128)."""
    counts = word_counts(values, dictionary)
    total = int(counts.sum())
    if total == 0:
        return BowVector(np.zeros(dictionary.k), 0)
    return BowVector(counts / total, total)
