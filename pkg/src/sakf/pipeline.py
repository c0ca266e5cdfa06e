"""Training, prediction and the repeated stratified-split evaluation protocol."""
from __future__ import annotations

import logging
import math
import os
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import imgproc, saliency, vocab
from .classify import LinearSVMModel, predict, train_svm
from .encode import BowVector, bovw_encode
from .errors import DatasetError, InvalidInputError, InvalidParameterError, SakfError
from .features import Descriptors, extract_dense_sift
from .filtering import (DualDictionaries, Fallback, PartitionedDescriptors,
                        build_dual_dictionaries, partition_descriptors, sakf_filter)
from .vocab import VisualDictionary

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")
ENCODE_DICTS = ("fg", "combined")


@dataclass(frozen=True)
class PipelineConfig:
    step: int = 7
    patch_size: int = 7
    k_fg: int = 2048
    k_bg: int = 2048
    sigma: float = 12.0
    working_width: int = 64
    svm_c: float = 1.0
    seed: int = 0
    train_ratio: float = 0.75
    runs: int = 5
    encode_dict: str = "fg"
    kmeans_max_iters: int = vocab.DEFAULT_MAX_ITERS
    kmeans_tol: float = vocab.DEFAULT_TOL

    def __post_init__(self):
        for name in ("step", "patch_size", "k_fg", "k_bg", "working_width", "runs", "kmeans_max_iters"):
            if getattr(self, name) < 1:
                raise InvalidParameterError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("sigma", "svm_c", "kmeans_tol"):
            if not getattr(self, name) > 0:
                raise InvalidParameterError(f"{name} must be > 0, got {getattr(self, name)}")
        if self.working_width < 8:
            raise InvalidParameterError(f"working_width must be >= 8, got {self.working_width}")
        if not 0 < self.train_ratio < 1:
            raise InvalidParameterError(f"train_ratio must lie in (0, 1), got {self.train_ratio}")
        if self.seed < 0:
            raise InvalidParameterError("seed must be non-negative")
        if self.encode_dict not in ENCODE_DICTS:
            raise InvalidParameterError(f"encode_dict must be one of {ENCODE_DICTS}")

    @property
    def saliency(self) -> saliency.SaliencyConfig:
        return saliency.SaliencyConfig(self.sigma, self.working_width)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> PipelineConfig:
        return cls(**d)


@dataclass
class Dataset:
    items: list[tuple[Path, str]]
    classes: list[str]

    def __post_init__(self):
        unknown = {lab for _, lab in self.items} - set(self.classes)
        if unknown:
            raise DatasetError(f"labels not in class table: {sorted(unknown)}")

    def __len__(self):
        return len(self.items)

    def label_index(self, label: str) -> int:
        return self.classes.index(label)


def load_dataset(root) -> Dataset:
    """One subdirectory per class; labels are directory names in sorted order."""
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"{root}: not a directory")
    classes = sorted(p.name for p in root.iterdir() if p.is_dir() and not p.name.startswith("."))
    items = []
    for c in classes:
        files = sorted(p for p in (root / c).iterdir()
                       if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
        items.extend((p, c) for p in files)
    classes = [c for c in classes if any(lab == c for _, lab in items)]
    if len(classes) < 2:
        raise DatasetError(f"{root}: need at least two class directories containing PNG/JPEG images")
    return Dataset(items, classes)


def train_count(n: int, ratio: float) -> int:
    # round first so that e.g. 0.7 * 10 does not ceil to 8
    return math.ceil(round(ratio * n, 9))


def stratified_split(ds: Dataset, ratio: float, seed: int) -> tuple[Dataset, Dataset]:
    if not 0 < ratio < 1:
        raise InvalidParameterError(f"ratio must lie in (0, 1), got {ratio}")
    rng = np.random.default_rng(seed)
    train, test = [], []
    for c in ds.classes:
        members = [it for it in ds.items if it[1] == c]
        if len(members) < 2:
            raise DatasetError(f"class {c!r} has {len(members)} item(s); at least 2 are required")
        order = rng.permutation(len(members))
        n_train = train_count(len(members), ratio)
        train.extend(members[i] for i in order[:n_train])
        test.extend(members[i] for i in order[n_train:])
    return Dataset(train, list(ds.classes)), Dataset(test, list(ds.classes))


@dataclass
class ImageFeatures:
    shape: tuple[int, int]
    descriptors: Descriptors
    partition: PartitionedDescriptors | None = None


def image_features(img, cfg: PipelineConfig, with_saliency: bool = True) -> ImageFeatures:
    img = imgproc.check_gray(img)
    descs = extract_dense_sift(img, cfg.step, cfg.patch_size)
    part = None
    if with_saliency:
        _, mask = saliency.saliency_mask(img, cfg.saliency)
        part = partition_descriptors(descs, mask)
    return ImageFeatures(img.shape, descs, part)


def _load_item(ds: Dataset, i: int):
    path = ds.items[i][0]
    try:
        return imgproc.load_image(path)
    except SakfError as exc:
        raise InvalidInputError(f"dataset item {i} ({path}): {exc}") from None


def _workers(threads: int) -> int:
    return threads if threads > 0 else (os.cpu_count() or 1)


def extract_dataset(ds: Dataset, cfg: PipelineConfig, with_saliency: bool = True,
                    threads: int = 0) -> list[ImageFeatures]:
    def work(i):
        return image_features(_load_item(ds, i), cfg, with_saliency)

    n = _workers(threads)
    if n == 1:
        return [work(i) for i in range(len(ds))]
    with ThreadPoolExecutor(n) as pool:
        return list(pool.map(work, range(len(ds))))


@dataclass
class Diagnostics:
    keypoints_total: int
    keypoints_fg: int
    keypoints_kept: int
    keypoints_encoded: int
    fallback: Fallback

    def check(self):
        if not self.keypoints_kept <= self.keypoints_fg <= self.keypoints_total:
            raise AssertionError(f"keypoint subset chain violated: {self}")


@dataclass
class TrainedModel:
    config: PipelineConfig
    dictionaries: DualDictionaries
    svm: LinearSVMModel
    fallbacks: dict[str, int] = field(default_factory=dict)

    @property
    def classes(self) -> list[str]:
        return list(self.svm.classes)

    @property
    def encoding_dictionary(self) -> VisualDictionary:
        if self.config.encode_dict == "fg":
            return self.dictionaries.fg
        return VisualDictionary(np.vstack([self.dictionaries.fg.words, self.dictionaries.bg.words]))


def encode_features(feats: ImageFeatures, dicts: DualDictionaries,
                    encoding: VisualDictionary) -> tuple[BowVector, Diagnostics]:
    part = feats.partition
    kept, fb = sakf_filter(part.foreground, dicts)
    if fb is Fallback.NO_FOREGROUND:
        chosen = feats.descriptors
    else:
        chosen = kept
    diag = Diagnostics(len(feats.descriptors), len(part.foreground),
                       len(kept) if fb is Fallback.NONE else 0, len(chosen), fb)
    diag.check()
    return bovw_encode(chosen.values, encoding), diag


def _count_fallbacks(diags) -> dict[str, int]:
    counts = Counter(d.fallback.value for d in diags)
    return {fb.value: counts.get(fb.value, 0) for fb in Fallback}


def train_pipeline(train: Dataset, cfg: PipelineConfig, features: list[ImageFeatures] | None = None,
                   threads: int = 0) -> TrainedModel:
    """Fit dual dictionaries and the SVM; ``features`` may be precomputed."""
    if features is None:
        features = extract_dataset(train, cfg, threads=threads)
    dicts = build_dual_dictionaries([f.partition for f in features], cfg.k_fg, cfg.k_bg,
                                    seed=cfg.seed, max_iters=cfg.kmeans_max_iters)
    # encode with the dictionaries exactly as they will be stored
    dicts = DualDictionaries(dicts.fg.as_float32(), dicts.bg.as_float32())
    model = TrainedModel(cfg, dicts, LinearSVMModel([], np.zeros((0, 1)), cfg.svm_c))
    encoding = model.encoding_dictionary
    encoded = [encode_features(f, dicts, encoding) for f in features]
    labels = [train.label_index(lab) for _, lab in train.items]
    model.svm = train_svm([e[0] for e in encoded], labels, cfg.svm_c, cfg.seed, classes=train.classes)
    model.fallbacks = _count_fallbacks(e[1] for e in encoded)
    return model


@dataclass
class Prediction:
    label: str
    scores: np.ndarray
    diagnostics: Diagnostics

    def to_json_dict(self, classes) -> dict:
        d = self.diagnostics
        return {
            "label": self.label,
            "scores": {c: float(s) for c, s in zip(classes, self.scores)},
            "keypoints_total": d.keypoints_total,
            "keypoints_fg": d.keypoints_fg,
            "keypoints_kept": d.keypoints_kept,
            "fallback": d.fallback.value,
        }


def predict_features(model: TrainedModel, feats: ImageFeatures) -> Prediction:
    vec, diag = encode_features(feats, model.dictionaries, model.encoding_dictionary)
    label, scores = predict(model.svm, vec)
    return Prediction(label, scores, diag)


def predict_image(model: TrainedModel, path) -> Prediction:
    img = imgproc.load_image(path)
    return predict_features(model, image_features(img, model.config))


@dataclass
class BaselineModel:
    config: PipelineConfig
    dictionary: VisualDictionary
    svm: LinearSVMModel


def train_baseline(train: Dataset, cfg: PipelineConfig, features: list[ImageFeatures] | None = None,
                   threads: int = 0) -> BaselineModel:
    """Dense SIFT + single dictionary + SVM, no saliency stages."""
    if features is None:
        features = extract_dataset(train, cfg, with_saliency=False, threads=threads)
    pool = Descriptors.concat(f.descriptors for f in features).nonzero()
    if len(pool) == 0:
        raise InvalidInputError("no non-zero descriptors in the training set")
    dictionary = vocab.kmeans(pool.values, cfg.k_fg, seed=cfg.seed,
                              max_iters=cfg.kmeans_max_iters).as_float32()
    vecs = [bovw_encode(f.descriptors.values, dictionary) for f in features]
    labels = [train.label_index(lab) for _, lab in train.items]
    return BaselineModel(cfg, dictionary,
                         train_svm(vecs, labels, cfg.svm_c, cfg.seed, classes=train.classes))


@dataclass
class RunResult:
    seed: int
    accuracy: float
    n_train: int
    n_test: int
    confusion: np.ndarray  # rows: true class, cols: predicted class
    fallbacks: dict[str, int]
    train_paths: list[Path]
    test_paths: list[Path]


@dataclass
class EvalReport:
    method: str
    config: PipelineConfig
    classes: list[str]
    runs: list[RunResult]
    features: list[tuple[str, np.ndarray]] = field(default_factory=list)
    untested_classes: list[str] = field(default_factory=list)

    @property
    def accuracies(self) -> list[float]:
        return [r.accuracy for r in self.runs]

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def std(self) -> float:
        acc = self.accuracies
        return float(np.std(acc, ddof=1)) if len(acc) > 1 else 0.0

    @property
    def confusion(self) -> np.ndarray:
        return self.runs[-1].confusion

    def fallback_totals(self) -> dict[str, int]:
        tot = Counter()
        for r in self.runs:
            tot.update(r.fallbacks)
        return dict(tot)

    def to_text(self) -> str:
        lines = [f"method: {self.method}",
                 "config: " + " ".join(f"{k}={v}" for k, v in self.config.to_dict().items())]
        for i, r in enumerate(self.runs, 1):
            lines.append(f"run {i} (seed {r.seed}): accuracy {r.accuracy:.2f}% "
                         f"({r.n_train} train / {r.n_test} test)")
        lines.append(f"mean accuracy: {self.mean:.2f}%  std: {self.std:.2f}")
        if self.method == "sakf":
            lines.append("fallbacks: " + " ".join(f"{k}={v}" for k, v in sorted(self.fallback_totals().items())))
        if self.untested_classes:
            lines.append("warning: classes without test items: " + ", ".join(self.untested_classes))
        width = max(len(c) for c in self.classes)
        lines.append("confusion (final run; rows = true, cols = predicted):")
        lines.append(" " * (width + 1) + " ".join(f"{i:>5d}" for i in range(len(self.classes))))
        for i, (c, row) in enumerate(zip(self.classes, self.confusion)):
            lines.append(f"{c:>{width}} " + " ".join(f"{v:>5d}" for v in row) + f"   [{i}]")
        return "\n".join(lines)

    def to_csv(self) -> str:
        rows = ["run,accuracy"]
        rows += [f"{i},{r.accuracy:.6f}" for i, r in enumerate(self.runs, 1)]
        rows.append("")
        rows.append("true\\predicted," + ",".join(self.classes))
        rows += [c + "," + ",".join(str(v) for v in row) for c, row in zip(self.classes, self.confusion)]
        return "\n".join(rows) + "\n"

    def features_csv(self) -> str:
        return "".join(lab + "," + ",".join(repr(float(v)) for v in vec) + "\n"
                       for lab, vec in self.features)


def accuracy(true_idx, pred_idx) -> float:
    true_idx = np.asarray(true_idx)
    return 100.0 * float(np.mean(true_idx == np.asarray(pred_idx))) if len(true_idx) else 0.0


def _evaluate(ds: Dataset, cfg: PipelineConfig, method: str, threads: int,
              keep_features: bool) -> EvalReport:
    with_saliency = method == "sakf"
    cache = extract_dataset(ds, cfg, with_saliency=with_saliency, threads=threads)
    index = {it[0]: i for i, it in enumerate(ds.items)}
    runs = []
    features = []
    untested = set()
    for run in range(1, cfg.runs + 1):
        seed = cfg.seed + run
        run_cfg = replace(cfg, seed=seed)
        try:
            train, test = stratified_split(ds, cfg.train_ratio, seed)
            train_paths = [p for p, _ in train.items]
            test_paths = [p for p, _ in test.items]
            assert not set(train_paths) & set(test_paths), "train/test overlap"
            tr_feats = [cache[index[p]] for p in train_paths]
            te_feats = [cache[index[p]] for p in test_paths]
            fb = {}
            if method == "sakf":
                model = train_pipeline(train, run_cfg, tr_feats)
                preds = [predict_features(model, f) for f in te_feats]
                pred_idx = [ds.label_index(p.label) for p in preds]
                fb = _count_fallbacks(p.diagnostics for p in preds)

                def encode(f, model=model):
                    return encode_features(f, model.dictionaries, model.encoding_dictionary)[0].values
            else:
                model = train_baseline(train, run_cfg, tr_feats)
                pred_idx = [int(np.argmax(model.svm.decision_function(
                    bovw_encode(f.descriptors.values, model.dictionary).values))) for f in te_feats]

                def encode(f, model=model):
                    return bovw_encode(f.descriptors.values, model.dictionary).values
        except SakfError as exc:
            raise type(exc)(f"run {run}: {exc}") from exc
        true_idx = [ds.label_index(lab) for _, lab in test.items]
        conf = np.zeros((len(ds.classes), len(ds.classes)), dtype=np.int64)
        for t, p in zip(true_idx, pred_idx):
            conf[t, p] += 1
        untested.update(c for i, c in enumerate(ds.classes) if conf[i].sum() == 0)
        runs.append(RunResult(seed, accuracy(true_idx, pred_idx), len(train), len(test),
                              conf, fb, train_paths, test_paths))
        log.info("%s run %d: accuracy %.2f%%", method, run, runs[-1].accuracy)
        if keep_features and run == cfg.runs:
            features = [(lab, encode(cache[index[p]])) for p, lab in train.items + test.items]
    return EvalReport(method, cfg, list(ds.classes), runs, features,
                      [c for c in ds.classes if c in untested])


def evaluate(ds: Dataset, cfg: PipelineConfig, threads: int = 0, keep_features: bool = False) -> EvalReport:
    return _evaluate(ds, cfg, "sakf", threads, keep_features)


def evaluate_baseline(ds: Dataset, cfg: PipelineConfig, threads: int = 0,
                      keep_features: bool = False) -> EvalReport:
    return _evaluate(ds, cfg, "baseline", threads, keep_features)
