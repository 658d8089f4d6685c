"""Flat parameter vectors, the small classifiers and vector measures."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Sequence, Tuple

import numpy as np

from . import kernels
from .errors import ConfigurationError, DegenerateInputError

log = logging.getLogger(__name__)

SOFTMAX = "softmax-regression"
MLP = "mlp-one-hidden"
MODEL_KINDS = (SOFTMAX, MLP)


@dataclass(frozen=True)
class ModelSpec:
    kind: str = SOFTMAX
    n_features: int = 2
    n_classes: int = 2
    hidden_width: int = 8

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ConfigurationError(f"unknown model kind {self.kind!r}; expected one of {MODEL_KINDS}")
        if self.n_features < 1 or self.n_classes < 1:
            raise ConfigurationError("n_features and n_classes must be positive")
        if self.kind == MLP and self.hidden_width < 1:
            raise ConfigurationError("hidden_width must be positive for the MLP")

    @property
    def dim(self) -> int:
        f, c, h = self.n_features, self.n_classes, self.hidden_width
        if self.kind == SOFTMAX:
            return f * c + c
        return f * h + h + h * c + c


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.labels.ndim != 1:
            raise ConfigurationError("features must be 2-D and labels 1-D")
        if self.features.shape[0] != self.labels.shape[0]:
            raise ConfigurationError("features and labels disagree on sample count")

    def __len__(self) -> int:
        return self.labels.shape[0]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx])


def init_params(spec: ModelSpec, seed: int) -> np.ndarray:
    """Small Gaussian weights, zero biases. Same (spec, seed) gives the same vector."""
    rng = np.random.default_rng(seed)
    f, c, h = spec.n_features, spec.n_classes, spec.hidden_width
    if spec.kind == SOFTMAX:
        W = rng.normal(0.0, 0.01, size=f * c)
        return np.concatenate([W, np.zeros(c)])
    W1 = rng.normal(0.0, 1.0 / np.sqrt(f), size=f * h)
    W2 = rng.normal(0.0, 1.0 / np.sqrt(h), size=h * c)
    return np.concatenate([W1, np.zeros(h), W2, np.zeros(c)])


def _check(params: np.ndarray, spec: ModelSpec, batch: Dataset) -> None:
    if params.shape != (spec.dim,):
        raise ConfigurationError(f"parameter vector has shape {params.shape}, model expects ({spec.dim},)")
    if batch.features.shape[1] != spec.n_features:
        raise ConfigurationError(
            f"batch has {batch.features.shape[1]} features, model expects {spec.n_features}"
        )
    if len(batch) == 0:
        raise ConfigurationError("empty batch")
    if batch.labels.min() < 0 or batch.labels.max() >= spec.n_classes:
        raise ConfigurationError("label outside [0, n_classes)")


def loss_and_grad(params: np.ndarray, spec: ModelSpec, batch: Dataset) -> Tuple[float, np.ndarray]:
    """Mean cross-entropy over ``batch`` and its analytic gradient."""
    params = np.asarray(params, dtype=np.float64)
    _check(params, spec, batch)
    if spec.kind == SOFTMAX:
        loss, grad = kernels.softmax_loss_grad(params, batch.features, batch.labels, spec.n_classes)
    else:
        loss, grad = kernels.mlp_loss_grad(
            params, batch.features, batch.labels, spec.n_classes, spec.hidden_width
        )
    return float(loss), grad


def predict(params: np.ndarray, spec: ModelSpec, X: np.ndarray) -> np.ndarray:
    if spec.kind == SOFTMAX:
        return kernels.softmax_predict(params, X, spec.n_classes)
    return kernels.mlp_predict(params, X, spec.n_classes, spec.hidden_width)


def accuracy(params: np.ndarray, spec: ModelSpec, data: Dataset) -> float:
    if len(data) == 0:
        return float("nan")
    return float(np.mean(predict(params, spec, data.features) == data.labels))


def cosine_similarity(a, b) -> float:
    """a.b / (|a||b|), clipped to [-1, 1].

    Raises :class:`DegenerateInputError` when either vector has zero norm;
    use :func:`safe_cosine` where 0 should be substituted instead.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ConfigurationError(f"dimension mismatch {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DegenerateInputError("cosine similarity of a zero-norm vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def safe_cosine(a, b) -> Tuple[float, bool]:
    """Cosine similarity, or ``(0.0, False)`` when a vector is all zeros."""
    try:
        return cosine_similarity(a, b), True
    except DegenerateInputError:
        log.warning("zero-norm vector in cosine similarity; substituting 0")
        return 0.0, False


def l2_distance(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ConfigurationError(f"dimension mismatch {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))


def axpy_combine(terms: Iterable[Tuple[float, Sequence[float]]]) -> np.ndarray:
    """Weighted sum of parameter vectors."""
    terms = list(terms)
    if not terms:
        raise DegenerateInputError("axpy_combine needs at least one term")
    out = None
    for w, v in terms:
        v = np.asarray(v, dtype=np.float64)
        if out is None:
            out = float(w) * v
        elif v.shape != out.shape:
            raise ConfigurationError(f"dimension mismatch {v.shape} vs {out.shape}")
        else:
            out = out + float(w) * v
    return out
