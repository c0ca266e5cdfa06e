"""One-vs-rest linear SVM trained by dual coordinate descent.

Each binary problem minimizes ``0.5 ||w||^2 + C sum max(0, 1 - y_i w.x_i)``
where ``x_i`` carries an appended constant 1, so the bias is regularized with
the weights. The dual is solved coordinate by coordinate (Hsieh et al.,
ICML 2008) and training stops once the duality gap certifies a relative
suboptimality of at most ``tol``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidInputError, InvalidParameterError

DEFAULT_TOL = 1e-3
DEFAULT_MAX_EPOCHS = 20000


@dataclass
class LinearSVMModel:
    classes: list
    weights: np.ndarray  # (n_classes, n_features + 1); last column is the bias
    C: float

    @property
    def n_features(self) -> int:
        return self.weights.shape[1] - 1

    def decision_function(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        if x.shape[1] != self.n_features:
            raise InvalidInputError(f"expected {self.n_features} features, got {x.shape[1]}")
        scores = x @ self.weights[:, :-1].T + self.weights[:, -1]
        return scores[0] if single else scores

    def __eq__(self, other):
        if not isinstance(other, LinearSVMModel):
            return NotImplemented
        return (list(self.classes) == list(other.classes) and self.C == other.C
                and np.array_equal(self.weights, other.weights))


def _augment(x: np.ndarray) -> np.ndarray:
    return np.hstack([x, np.ones((len(x), 1))])


def primal_objective(w, xa, y, C) -> float:
    return 0.5 * float(w @ w) + C * float(np.maximum(0.0, 1.0 - y * (xa @ w)).sum())


def dual_cd(xa: np.ndarray, y: np.ndarray, C: float, rng: np.random.Generator,
            tol: float = DEFAULT_TOL, max_epochs: int = DEFAULT_MAX_EPOCHS,
            monitor: Callable | None = None) -> np.ndarray:
    """Binary hinge-loss SVM; ``y`` in {-1, +1}. Returns w (bias last).

    ``monitor(epoch, dual, primal, gap)`` is called after every epoch, where
    ``dual`` is the minimized dual objective ``0.5 a'Qa - sum(a)``.
    """
    n, _ = xa.shape
    alpha = np.zeros(n)
    w = np.zeros(xa.shape[1])
    qdiag = np.einsum("ij,ij->i", xa, xa)
    for epoch in range(1, max_epochs + 1):
        for i in rng.permutation(n):
            g = y[i] * (xa[i] @ w) - 1.0
            a_old = alpha[i]
            a_new = min(max(a_old - g / qdiag[i], 0.0), C)
            if a_new != a_old:
                w += (a_new - a_old) * y[i] * xa[i]
                alpha[i] = a_new
        dual = 0.5 * float(w @ w) - float(alpha.sum())
        primal = primal_objective(w, xa, y, C)
        gap = primal + dual
        if monitor is not None:
            monitor(epoch, dual, primal, gap)
        # -dual lower-bounds the optimum, so this bounds relative suboptimality
        if gap <= tol * max(-dual, 1e-12):
            break
    return w


def train_svm(features, labels: Sequence[int], C: float = 1.0, seed: int = 0,
              classes: Sequence | None = None, tol: float = DEFAULT_TOL,
              max_epochs: int = DEFAULT_MAX_EPOCHS, monitor: Callable | None = None) -> LinearSVMModel:
    """Fit one binary SVM per class.

    ``labels`` index into ``classes`` (default ``range(n_classes)``).
    ``monitor`` receives ``(class_index, epoch, dual, primal, gap)``.
    """
    if not C > 0:
        raise InvalidParameterError(f"C must be > 0, got {C}")
    x = np.asarray([getattr(f, "values", f) for f in features], dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or len(x) != len(y) or len(y) < 2:
        raise InvalidInputError("need at least two feature vectors with matching labels")
    present = np.unique(y)
    if len(present) < 2:
        raise InvalidInputError("training data contains a single class")
    if classes is None:
        classes = list(range(int(y.max()) + 1))
    classes = list(classes)
    if y.min() < 0 or y.max() >= len(classes):
        raise InvalidInputError("label index outside the class table")
    xa = _augment(x)
    rng = np.random.default_rng(seed)
    weights = np.zeros((len(classes), xa.shape[1]))
    for c in range(len(classes)):
        yc = np.where(y == c, 1.0, -1.0)
        hook = None if monitor is None else (lambda *a, c=c: monitor(c, *a))
        weights[c] = dual_cd(xa, yc, C, rng, tol, max_epochs, hook)
    return LinearSVMModel(classes, weights, float(C))


def predict(model: LinearSVMModel, x) -> tuple[object, np.ndarray]:
    """(label, per-class scores); ties go to the earlier class."""
    scores = model.decision_function(np.asarray(getattr(x, "values", x), dtype=np.float64))
    return model.classes[int(np.argmax(scores))], scores
