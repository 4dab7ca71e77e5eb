"""Layer mappings, the softmax linear top layer, and the two global losses."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Union

import numpy as np

from .gbdt_core import GBDTRegressor

SQUARED_ERROR = "squared_error"
SOFTMAX_CROSS_ENTROPY = "softmax_cross_entropy"


@dataclass(frozen=True)
class Loss:
    kind: str

    def __post_init__(self):
        if self.kind not in (SQUARED_ERROR, SOFTMAX_CROSS_ENTROPY):
            raise ValueError(f"unknown loss kind {self.kind!r}")


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def one_hot(labels, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"class index out of range for {n_classes} classes")
    out = np.zeros(labels.shape + (n_classes,))
    np.put_along_axis(out, labels[..., None], 1.0, axis=-1)
    return out


def _as_rows(loss: Loss, output, target):
    o = np.asarray(output, dtype=np.float64)
    single = o.ndim == 1
    o = np.atleast_2d(o)
    if loss.kind == SQUARED_ERROR:
        y = np.atleast_2d(np.asarray(target, dtype=np.float64))
        if y.shape != o.shape:
            raise ValueError(f"output shape {o.shape} != target shape {y.shape}")
    else:
        y = np.atleast_1d(np.asarray(target))
        if y.ndim != 1 or len(y) != len(o):
            raise ValueError(f"expected {len(o)} class indices, got shape {y.shape}")
        y = one_hot(y, o.shape[1])
    return o, y, single


def loss_value(loss: Loss, output, target):
    """Per-row loss: ``0.5 * ||o - y||^2`` or cross-entropy of ``softmax(o)``.

    A single output vector gives a float; a matrix gives one value per row.
    """
    o, y, single = _as_rows(loss, output, target)
    if loss.kind == SQUARED_ERROR:
        v = 0.5 * np.sum((o - y) ** 2, axis=1)
    else:
        v = -np.sum(y * log_softmax(o), axis=1)
    return float(v[0]) if single else v


def loss_gradient(loss: Loss, output, target) -> np.ndarray:
    """Gradient of the per-row loss with respect to the output."""
    o, y, single = _as_rows(loss, output, target)
    g = o - y if loss.kind == SQUARED_ERROR else softmax(o) - y
    return g[0] if single else g


@dataclass(frozen=True)
class LinearClassifier:
    """Softmax regression ``logits = h @ weights + bias``."""

    weights: np.ndarray
    bias: np.ndarray
    step_size: float = 0.1

    @classmethod
    def zeros(cls, in_dim: int, n_classes: int, step_size: float = 0.1) -> "LinearClassifier":
        return cls(np.zeros((in_dim, n_classes)), np.zeros(n_classes), step_size)

    @property
    def in_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def n_classes(self) -> int:
        return self.weights.shape[1]


def linear_forward(lc: LinearClassifier, h) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != lc.in_dim:
        raise ValueError(f"expected input width {lc.in_dim}, got shape {h.shape}")
    return h @ lc.weights + lc.bias


def predict_classes(logits: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximum: ties go to the lowest class index
    return np.argmax(logits, axis=1)


def _check_labels(lc: LinearClassifier, h, labels):
    h = np.asarray(h, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1 or len(labels) != len(h):
        raise ValueError(f"{len(h)} rows but {labels.shape} labels")
    return h, labels


def mean_cross_entropy(lc: LinearClassifier, h, labels) -> float:
    h, labels = _check_labels(lc, h, labels)
    return float(np.mean(loss_value(Loss(SOFTMAX_CROSS_ENTROPY), linear_forward(lc, h), labels)))


def linear_update(lc: LinearClassifier, h, labels, steps: int) -> LinearClassifier:
    """Full-batch gradient descent on the mean cross-entropy."""
    h, labels = _check_labels(lc, h, labels)
    if steps < 0:
        raise ValueError("steps must be >= 0")
    if steps == 0:
        return lc
    if len(h) == 0:
        raise ValueError("empty training set")
    y = one_hot(labels, lc.n_classes)
    W, b = lc.weights.copy(), lc.bias.copy()
    n = len(h)
    for _ in range(steps):
        g = (softmax(h @ W + b) - y) / n
        W -= lc.step_size * (h.T @ g)
        b -= lc.step_size * g.sum(axis=0)
    return replace(lc, weights=W, bias=b)


def hidden_gradient(lc: LinearClassifier, h, labels, reduction: str = "mean") -> np.ndarray:
    """Gradient of the cross-entropy with respect to the classifier input ``h``.

    ``reduction="mean"`` differentiates the mean loss over rows;
    ``reduction="none"`` gives each row the gradient of its own loss term.
    """
    h, labels = _check_labels(lc, h, labels)
    g = (softmax(linear_forward(lc, h)) - one_hot(labels, lc.n_classes)) @ lc.weights.T
    if reduction == "mean":
        return g / len(h)
    if reduction == "none":
        return g
    raise ValueError(f"unknown reduction {reduction!r}")


Mapping = Union[GBDTRegressor, LinearClassifier]


@dataclass(frozen=True)
class Layer:
    """Forward mapping ``in_dim -> out_dim`` with an optional inverse ``out_dim -> in_dim``."""

    forward: Mapping
    in_dim: int
    out_dim: int
    inverse: GBDTRegressor | None = None

    def __post_init__(self):
        f = self.forward
        if isinstance(f, LinearClassifier):
            if (f.in_dim, f.n_classes) != (self.in_dim, self.out_dim):
                raise ValueError("linear classifier shape does not match layer dims")
            if self.inverse is not None:
                raise ValueError("no inverse for linear top layer")
        elif (f.n_features, f.output_dim) != (self.in_dim, self.out_dim):
            raise ValueError("forward mapping shape does not match layer dims")
        g = self.inverse
        if g is not None and (g.n_features, g.output_dim) != (self.out_dim, self.in_dim):
            raise ValueError("inverse mapping shape does not match layer dims")

    @property
    def is_linear(self) -> bool:
        return isinstance(self.forward, LinearClassifier)

    def apply(self, h: np.ndarray) -> np.ndarray:
        if self.is_linear:
            return linear_forward(self.forward, h)
        return self.forward.predict(h)
