"""Debiased local classification.

Few-shot classes of a client are up-weighted in the local cross-entropy by
``1 + lambda``, where ``lambda`` is the mean per-class drift between the
broadcast global classifier and the current local classifier.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_TAU = 0.5


@dataclass(frozen=True)
class FewShotSet:
    classes: frozenset[int]
    threshold_tau: float


@dataclass(frozen=True)
class DebiasState:
    lam: float
    alpha: np.ndarray
    distance_vec: np.ndarray


def classifier_distance(w_global, w_local) -> np.ndarray:
    """Per-class Euclidean distance between two ``[R, C]`` classifier weights.

    Rows are accumulated in order so the result is reproducible to the bit.
    """
    g = np.asarray(w_global, dtype=np.float64)
    l = np.asarray(w_local, dtype=np.float64)
    if g.shape != l.shape or g.ndim != 2:
        raise ValueError(f"classifier shape mismatch: {g.shape} vs {l.shape}")
    acc = np.zeros(g.shape[1])
    for n in range(g.shape[0]):
        diff = g[n] - l[n]
        acc += diff * diff
    return np.sqrt(acc)


def lambda_from_distance(v) -> float:
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("distance vector is empty")
    if np.any(v < 0):
        raise ValueError("distance entries must be non-negative")
    return float(np.sum(v)) / v.size


def few_shot_set(label_counts, tau: float = DEFAULT_TAU) -> FewShotSet:
    """Classes with at least one sample but fewer than ``tau`` of the balanced share."""
    counts = np.asarray(label_counts)
    if not 0 < tau <= 1:
        raise ValueError(f"tau must be in (0, 1], got {tau}")
    if np.any(counts < 0):
        raise ValueError("label counts must be non-negative")
    total = int(counts.sum())
    if total < 1:
        raise ValueError("label counts are all zero")
    threshold = tau * (total / counts.size)
    members = frozenset(int(c) for c in np.flatnonzero((counts >= 1) & (counts < threshold)))
    return FewShotSet(members, tau)


def class_weight_vector(m: FewShotSet, lam: float, num_classes: int) -> np.ndarray:
    if lam < 0:
        raise ValueError(f"lambda must be non-negative, got {lam}")
    alpha = np.ones(num_classes)
    for c in m.classes:
        if not 0 <= c < num_classes:
            raise ValueError(f"few-shot class {c} outside [0, {num_classes})")
        alpha[c] = 1.0 + lam
    return alpha


def debias_state(w_global, w_local, m: FewShotSet) -> DebiasState:
    v = classifier_distance(w_global, w_local)
    lam = lambda_from_distance(v)
    return DebiasState(lam, class_weight_vector(m, lam, v.size), v)
