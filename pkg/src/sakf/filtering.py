"""Semantic attention keypoint filtering.

Dense descriptors are split by the binary saliency mask into foreground and
background sets, a dictionary is clustered from each pooled set, and a
foreground descriptor survives when its nearest foreground word is at least
as close as its nearest background word.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import vocab
from .errors import InvalidInputError, TrainingError
from .features import Descriptors
from .vocab import VisualDictionary


@dataclass
class PartitionedDescriptors:
    foreground: Descriptors
    background: Descriptors

    @property
    def total(self) -> int:
        return len(self.foreground) + len(self.background)


@dataclass
class DualDictionaries:
    fg: VisualDictionary
    bg: VisualDictionary


class Fallback(str, enum.Enum):
    NONE = "none"
    FILTER_EMPTY = "filter_empty"  # nothing kept: encode all of d_F
    NO_FOREGROUND = "no_foreground"  # d_F empty: encode every descriptor


def partition_descriptors(descs: Descriptors, mask) -> PartitionedDescriptors:
    mask = np.asarray(mask)
    h, w = mask.shape
    cols = descs.keypoints[:, 0] - 1
    rows = descs.keypoints[:, 1] - 1
    outside = (cols < 0) | (cols >= w) | (rows < 0) | (rows >= h)
    if np.any(outside):
        raise InvalidInputError(f"keypoint centre outside the {w}x{h} mask; mask/image size mismatch")
    fg = mask[rows, cols] == 1
    return PartitionedDescriptors(descs[np.flatnonzero(fg)], descs[np.flatnonzero(~fg)])


def build_dual_dictionaries(partitions, k_fg: int, k_bg: int, seed: int = 0,
                            max_iters: int = vocab.DEFAULT_MAX_ITERS) -> DualDictionaries:
    partitions = list(partitions)
    fg = Descriptors.concat(p.foreground for p in partitions).nonzero()
    bg = Descriptors.concat(p.background for p in partitions).nonzero()
    if len(fg) == 0:
        raise TrainingError("no non-zero foreground descriptors in the training set; "
                            "saliency masks are empty, review sigma / thresholding")
    if len(bg) == 0:
        raise TrainingError("no non-zero background descriptors in the training set; "
                            "saliency masks cover whole images, review sigma / thresholding")
    return DualDictionaries(
        vocab.kmeans(fg.values, k_fg, seed=seed, max_iters=max_iters),
        vocab.kmeans(bg.values, k_bg, seed=seed, max_iters=max_iters),
    )


def keep_mask(values, dicts: DualDictionaries) -> np.ndarray:
    """Boolean keep flag per descriptor row (ties are kept)."""
    values = np.asarray(values, dtype=np.float64).reshape(-1, dicts.fg.words.shape[1])
    if len(values) == 0:
        return np.zeros(0, dtype=bool)
    _, d_fg = vocab.nearest_words(values, dicts.fg.words)
    _, d_bg = vocab.nearest_words(values, dicts.bg.words)
    return d_fg <= d_bg


def sakf_filter(d_f: Descriptors, dicts: DualDictionaries) -> tuple[Descriptors, Fallback]:
    """Kept foreground descriptors plus the fallback that fired, if any.

    An empty ``d_f`` comes back empty with ``Fallback.NO_FOREGROUND``; the
    caller substitutes the full descriptor set.
    """
    if len(d_f) == 0:
        return d_f, Fallback.NO_FOREGROUND
    kept = d_f[np.flatnonzero(keep_mask(d_f.values, dicts))]
    if len(kept) == 0:
        return d_f, Fallback.FILTER_EMPTY
    return kept, Fallback.NONE
