"""Server-side aggregation: generalization-aware mixing weights for FedRD,
sample-proportional FedAvg weights and the FedProx proximal penalty."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .numerics import ModelParams, check_compatible

DEFAULT_MU = 0.01


@dataclass(frozen=True)
class ClientUpdate:
    client_id: int
    model: ModelParams
    num_samples: int
    d: float
    gap: float
    lambda_last: float = 0.0
    local_loss: float = float("nan")

    def __post_init__(self) -> None:
        if self.num_samples < 1:
            raise ValueError("num_samples must be >= 1")
        if not self.d >= 0:
            raise ValueError(f"d must be non-negative, got {self.d}")


@dataclass(frozen=True)
class AggregationPlan:
    weights: np.ndarray
    betas: np.ndarray
    gammas: np.ndarray


def gap_value(global_loss_on_local: float, local_loss_on_local: float) -> float:
    if not (math.isfinite(global_loss_on_local) and math.isfinite(local_loss_on_local)):
        raise ValueError("GAP needs finite losses")
    return global_loss_on_local - local_loss_on_local


def gamma(gap: float) -> float:
    """Logistic squashing of the performance gap."""
    if not math.isfinite(gap):
        raise ValueError("gap must be finite")
    if gap >= 0:
        return 1.0 / (1.0 + math.exp(-gap))
    e = math.exp(gap)
    return e / (1.0 + e)


def gga_weights(d: Sequence[float], gammas: Sequence[float]) -> AggregationPlan:
    d = np.asarray(d, dtype=np.float64)
    g = np.asarray(gammas, dtype=np.float64)
    n = d.size
    if n == 0:
        raise ValueError("no clients to aggregate")
    if g.shape != d.shape:
        raise ValueError(f"d has {n} entries but gammas has {g.size}")
    if np.any(~np.isfinite(d)) or np.any(d < 0):
        raise ValueError("d entries must be finite and non-negative")
    if np.any(~((g > 0) & (g < 1))):
        raise ValueError("gamma entries must lie in (0, 1)")

    d_sum = float(np.sum(d))
    betas = d / d_sum if d_sum > 0 else np.full(n, 1.0 / n)
    if n == 1:
        # the mixing rule divides by N - 1; a lone client becomes the global model
        return AggregationPlan(np.ones(1), betas, g.copy())
    weights = 0.5 * ((1.0 - betas) / (n - 1) + g / float(np.sum(g)))
    return AggregationPlan(weights, betas, g.copy())


def fedavg_weights(sizes: Sequence[int]) -> np.ndarray:
    k = np.asarray(sizes, dtype=np.float64)
    if k.size == 0:
        raise ValueError("no clients to aggregate")
    if np.any(k <= 0):
        raise ValueError("client sizes must be positive")
    return k / float(np.sum(k))


def aggregate(models: Sequence[ModelParams], weights: Sequence[float]) -> ModelParams:
    """Parameter-wise weighted sum, accumulated in list order."""
    w = np.asarray(weights, dtype=np.float64)
    if not models:
        raise ValueError("no models to aggregate")
    if w.shape != (len(models),):
        raise ValueError(f"{len(models)} models but {w.size} weights")
    if abs(float(np.sum(w)) - 1.0) > 1e-6:
        raise ValueError(f"aggregation weights sum to {float(np.sum(w))}, expected 1")
    base = models[0]
    for m in models[1:]:
        check_compatible(base, m)
    layers = []
    for k in range(len(base.layers)):
        parts = []
        for j in range(2):
            acc = w[0] * models[0].layers[k][j]
            for i in range(1, len(models)):
                acc = acc + w[i] * models[i].layers[k][j]
            parts.append(acc)
        layers.append(tuple(parts))
    return ModelParams(tuple(layers), base.spec)


def prox_penalty(w: ModelParams, w_global: ModelParams, mu: float) -> tuple[float, ModelParams]:
    """``(mu / 2) * ||w - w_global||^2`` over every tensor, and its gradient."""
    if mu < 0:
        raise ValueError(f"mu must be non-negative, got {mu}")
    diff = w.zip_map(w_global, lambda a, b: a - b)
    sq = sum(float(np.dot(t.ravel(), t.ravel())) for t in diff.tensors())
    return 0.5 * mu * sq, diff.map(lambda t: mu * t)
