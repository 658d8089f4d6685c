"""Synthetic Gaussian-mixture data and label-skewed Dirichlet partitioning."""
from __future__ import annotations

import logging
from typing import List, Sequence, Tuple

import numpy as np

from .errors import ConfigurationError
from .params import Dataset

log = logging.getLogger(__name__)


def class_means(n_classes: int, n_features: int, separation: float, rng: np.random.Generator) -> np.ndarray:
    """Random directions scaled to norm ``separation``, one row per class."""
    dirs = rng.normal(size=(n_classes, n_features))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return dirs * separation


def sample_mixture(means: np.ndarray, labels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    return means[labels] + rng.normal(size=(labels.size, means.shape[1]))


def make_synthetic_dataset(
    n_classes: int,
    n_features: int,
    n_samples: int,
    separation: float,
    seed: int,
    test_fraction: float = 0.2,
) -> Tuple[Dataset, Dataset]:
    """Balanced spherical Gaussian mixture; returns ``(train, test)``."""
    if n_classes < 2:
        raise ConfigurationError("need at least two classes")
    rng = np.random.default_rng(seed)
    means = class_means(n_classes, n_features, separation, rng)
    n_test = int(round(n_samples * test_fraction))
    labels = rng.permutation(np.arange(n_samples + n_test) % n_classes)
    X = sample_mixture(means, labels, rng)
    return (
        Dataset(X[:n_samples], labels[:n_samples]),
        Dataset(X[n_samples:], labels[n_samples:]),
    )


def _largest_remainder(p: np.ndarray, n: int) -> np.ndarray:
    raw = p * n
    counts = np.floor(raw).astype(np.int64)
    short = n - int(counts.sum())
    if short > 0:
        order = np.lexsort((np.arange(p.size), -(raw - counts)))
        counts[order[:short]] += 1
    return counts


def dirichlet_partition(
    labels: Sequence[int],
    alpha_dir: float,
    m: int,
    seed: int,
    min_samples: int = 1,
) -> List[np.ndarray]:
    """Split sample indices across ``m`` devices with Dirichlet(alpha) class proportions.

    Each class's indices are shuffled and dealt out by proportions drawn from a
    symmetric Dirichlet, rounded with the largest-remainder rule. Devices left
    with fewer than ``min_samples`` indices take one from the currently largest
    device until satisfied.
    """
    labels = np.asarray(labels)
    if alpha_dir <= 0:
        raise ConfigurationError("alpha_dir must be positive")
    if m < 1:
        raise ConfigurationError("m must be >= 1")
    if labels.size < m * min_samples:
        raise ConfigurationError(f"{labels.size} samples cannot give {m} devices {min_samples} each")
    rng = np.random.default_rng(seed)
    parts: List[list] = [[] for _ in range(m)]
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        counts = _largest_remainder(rng.dirichlet(np.full(m, alpha_dir)), idx.size)
        for dev, chunk in enumerate(np.split(idx, np.cumsum(counts)[:-1])):
            parts[dev].extend(chunk.tolist())
    for dev in range(m):
        while len(parts[dev]) < min_samples:
            donor = max(range(m), key=lambda d: (len(parts[d]), -d))
            parts[dev].append(parts[donor].pop())
            log.info("partition repair: moved one sample from device %d to device %d", donor, dev)
    return [np.array(sorted(p), dtype=np.int64) for p in parts]


def label_histograms(labels: Sequence[int], parts: Sequence[np.ndarray], n_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    return np.stack([np.bincount(labels[p], minlength=n_classes) for p in parts])


def label_skew(labels: Sequence[int], parts: Sequence[np.ndarray], n_classes: int) -> float:
    """Mean total-variation distance between device label distributions and the global one."""
    hist = label_histograms(labels, parts, n_classes).astype(np.float64)
    glob = hist.sum(axis=0) / hist.sum()
    local = hist / np.maximum(hist.sum(axis=1, keepdims=True), 1)
    return float(0.5 * np.abs(local - glob).sum(axis=1).mean())
