"""Classifiers applied to embeddings, confusion metrics and a PCA export."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp

from .errors import ShapeMismatch, SingleClass


@dataclass(frozen=True)
class LogRegModel:
    weights: np.ndarray  # (n_classes, d)
    bias: np.ndarray  # (n_classes,)
    classes: np.ndarray
    C: float = 1.0
    max_iter: int = 100
    n_iter: int = 0
    grad_norm: float = float("nan")
    objective_trace: tuple[float, ...] = ()


def _objective(theta, X, Y, C):
    n_classes, d = Y.shape[1], X.shape[1]
    W = theta[: n_classes * d].reshape(n_classes, d)
    b = theta[n_classes * d :]
    Z = X @ W.T + b
    lse = logsumexp(Z, axis=1)
    loss = float(np.sum(lse - np.sum(Z * Y, axis=1)) + 0.5 / C * np.sum(W * W))
    R = np.exp(Z - lse[:, None]) - Y
    gW = R.T @ X + W / C
    gb = R.sum(axis=0)
    return loss, np.concatenate([gW.ravel(), gb])


def fit_logistic_regression(X, y, C: float = 1.0, max_iter: int = 100) -> LogRegModel:
    """Multinomial logistic regression, L2 on weights only, L-BFGS from zero.

    Minimises ``sum_i CE_i + ||W||^2 / (2 C)``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ShapeMismatch(f"X {X.shape} and y {y.shape} do not align")
    classes = np.unique(y)
    if len(classes) < 2:
        raise SingleClass(f"need at least two classes, got {classes.tolist()}")
    Y = (y[:, None] == classes[None, :]).astype(np.float64)
    n_classes, d = len(classes), X.shape[1]
    theta0 = np.zeros(n_classes * (d + 1))
    trace = [_objective(theta0, X, Y, C)[0]]
    res = minimize(_objective, theta0, args=(X, Y, C), jac=True, method="L-BFGS-B",
                   callback=lambda th: trace.append(_objective(th, X, Y, C)[0]),
                   options={"maxiter": max_iter})
    _, grad = _objective(res.x, X, Y, C)
    return LogRegModel(
        weights=res.x[: n_classes * d].reshape(n_classes, d),
        bias=res.x[n_classes * d :],
        classes=classes,
        C=C,
        max_iter=max_iter,
        n_iter=int(res.nit),
        grad_norm=float(np.linalg.norm(grad)),
        objective_trace=tuple(trace),
    )


def predict_proba(model: LogRegModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.weights.shape[1]:
        raise ShapeMismatch(f"expected inputs with {model.weights.shape[1]} features, got {X.shape}")
    Z = X @ model.weights.T + model.bias
    return np.exp(Z - logsumexp(Z, axis=1, keepdims=True))


def predict_logistic_regression(model: LogRegModel, X, return_proba: bool = False):
    """Most probable class; ties go to the lowest class id."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.weights.shape[1]:
        raise ShapeMismatch(f"expected inputs with {model.weights.shape[1]} features, got {X.shape}")
    Z = X @ model.weights.T + model.bias
    labels = model.classes[np.argmax(Z, axis=1)]
    if return_proba:
        return labels, predict_proba(model, X)
    return labels


@dataclass(frozen=True)
class NearestNeighborModel:
    points: np.ndarray
    labels: np.ndarray


def fit_1nn(X, y) -> NearestNeighborModel:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ValueError("1-NN store must be a non-empty (n, d) matrix")
    if y.shape[0] != X.shape[0]:
        raise ShapeMismatch("labels do not match stored points")
    return NearestNeighborModel(X.copy(), y.copy())


def predict_1nn(model: NearestNeighborModel, X, chunk: int = 512) -> np.ndarray:
    """Label of the nearest stored point; equal distances go to the lowest stored index."""
    if model.points.shape[0] < 1:
        raise ValueError("1-NN store is empty")
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.points.shape[1]:
        raise ShapeMismatch(f"expected queries with {model.points.shape[1]} features, got {X.shape}")
    out = np.empty(X.shape[0], dtype=model.labels.dtype)
    for i in range(0, X.shape[0], chunk):
        diff = X[i : i + chunk, None, :] - model.points[None, :, :]
        out[i : i + chunk] = model.labels[np.argmin(np.sum(diff * diff, axis=-1), axis=1)]
    return out


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray  # rows: true class, columns: predicted class
    classes: tuple

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts) / self.total) if self.total else float("nan")

    def recall(self) -> dict:
        """Per class TP / (TP + FN); None when the class never occurs."""
        rows = self.counts.sum(axis=1)
        return {c: (float(self.counts[i, i] / rows[i]) if rows[i] else None)
                for i, c in enumerate(self.classes)}

    def precision(self) -> dict:
        """Per class TP / (TP + FP); None when the class is never predicted."""
        cols = self.counts.sum(axis=0)
        return {c: (float(self.counts[i, i] / cols[i]) if cols[i] else None)
                for i, c in enumerate(self.classes)}

    def to_dict(self) -> dict:
        return {
            "classes": [int(c) for c in self.classes],
            "counts": self.counts.tolist(),
            "accuracy": self.accuracy,
            "recall": {str(k): v for k, v in self.recall().items()},
            "precision": {str(k): v for k, v in self.precision().items()},
        }


def confusion(y_true, y_pred, class_list) -> ConfusionMatrix:
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.shape != y_pred.shape:
        raise ShapeMismatch("y_true and y_pred differ in length")
    index = {c: i for i, c in enumerate(class_list)}
    counts = np.zeros((len(class_list), len(class_list)), dtype=np.int64)
    for t, p in zip(y_true.tolist(), y_pred.tolist()):
        if t not in index or p not in index:
            raise ValueError(f"label {t if t not in index else p!r} is not in the class list")
        counts[index[t], index[p]] += 1
    return ConfusionMatrix(counts, tuple(class_list))


def pca_project(X, out_dim: int = 2) -> np.ndarray:
    """Centre X and project it on its leading principal axes.

    Each axis is signed so that its largest-magnitude loading is positive.
    If X has rank below ``out_dim`` only ``rank`` columns are returned.
    """
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    if n < out_dim:
        raise ValueError(f"need at least {out_dim} rows, got {n}")
    Xc = X - X.mean(axis=0)
    _, s, Vt = np.linalg.svd(Xc, full_matrices=False)
    tol = (s[0] if s.size else 0.0) * max(n, d) * np.finfo(np.float64).eps
    rank = int(np.sum(s > tol))
    k = min(out_dim, rank)
    if k < out_dim:
        warnings.warn(f"data rank {rank} is below {out_dim}; returning {k} components", stacklevel=2)
    axes = Vt[:k]
    flip = np.sign(axes[np.arange(k), np.argmax(np.abs(axes), axis=1)])
    return Xc @ (axes * flip[:, None]).T
