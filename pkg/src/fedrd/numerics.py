"""Small float64 MLP core: init, forward, weighted cross-entropy with
analytic gradients, plain SGD and the Frobenius distance.

Tensors are numpy float64 arrays. Every public function returns fresh arrays
and never mutates its inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import NumericalError

LOG_CLAMP = 1e-12
_SEED_MASK = (1 << 64) - 1


def check_finite(name: str, *arrays: np.ndarray) -> None:
    # NaN and +-inf survive summation, so one reduction per array is enough
    for a in arrays:
        if not math.isfinite(a.sum()):
            if not np.isfinite(a).all():
                raise NumericalError(f"non-finite values in {name}")
            raise NumericalError(f"values in {name} overflow float64")


@dataclass(frozen=True)
class ModelSpec:
    input_dim: int
    hidden_dims: tuple[int, ...]
    num_classes: int
    domain_layer_index: int = 0
    activation: str = "relu"

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1:
            raise ValueError(f"input_dim must be positive, got {self.input_dim}")
        if not self.hidden_dims:
            raise ValueError("hidden_dims must contain at least one layer")
        if any(h < 1 for h in self.hidden_dims):
            raise ValueError(f"hidden_dims must be positive, got {list(self.hidden_dims)}")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if not 0 <= self.domain_layer_index < len(self.hidden_dims):
            raise ValueError(
                f"domain_layer_index {self.domain_layer_index} outside "
                f"[0, {len(self.hidden_dims)})"
            )
        if self.activation != "relu":
            raise ValueError("only the 'relu' activation is supported")

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        dims = [self.input_dim, *self.hidden_dims, self.num_classes]
        return list(zip(dims[:-1], dims[1:]))


@dataclass(frozen=True)
class ModelParams:
    """Weights stored as ``[fan_in, fan_out]`` plus a bias per layer.

    The same container carries gradients, which share the parameter shapes.
    """

    layers: tuple[tuple[np.ndarray, np.ndarray], ...]
    spec: ModelSpec = field(compare=False)

    def __post_init__(self) -> None:
        layers = tuple((np.asarray(w, dtype=np.float64), np.asarray(b, dtype=np.float64))
                       for w, b in self.layers)
        expected = self.spec.layer_dims
        if len(layers) != len(expected):
            raise ValueError(f"expected {len(expected)} layers, got {len(layers)}")
        for k, ((w, b), (fan_in, fan_out)) in enumerate(zip(layers, expected)):
            if w.shape != (fan_in, fan_out) or b.shape != (fan_out,):
                raise ValueError(
                    f"layer {k}: got weight {w.shape} / bias {b.shape}, "
                    f"expected {(fan_in, fan_out)} / {(fan_out,)}"
                )
        object.__setattr__(self, "layers", layers)

    @property
    def classifier_weight(self) -> np.ndarray:
        return self.layers[-1][0]

    @property
    def domain_weight(self) -> np.ndarray:
        return self.layers[self.spec.domain_layer_index][0]

    def tensors(self) -> list[np.ndarray]:
        return [t for layer in self.layers for t in layer]

    @classmethod
    def _trusted(cls, layers, spec: ModelSpec) -> "ModelParams":
        # skips validation; only for layers derived elementwise from checked params
        obj = object.__new__(cls)
        object.__setattr__(obj, "layers", tuple(layers))
        object.__setattr__(obj, "spec", spec)
        return obj

    def map(self, fn) -> "ModelParams":
        return ModelParams._trusted(((fn(w), fn(b)) for w, b in self.layers), self.spec)

    def zip_map(self, other: "ModelParams", fn) -> "ModelParams":
        check_compatible(self, other)
        return ModelParams._trusted(
            ((fn(w, ow), fn(b, ob)) for (w, b), (ow, ob) in zip(self.layers, other.layers)),
            self.spec,
        )

    def copy(self) -> "ModelParams":
        return self.map(np.copy)

    def bit_equal(self, other: "ModelParams") -> bool:
        return all(
            a.shape == b.shape and a.tobytes() == b.tobytes()
            for a, b in zip(self.tensors(), other.tensors())
        )


def check_compatible(a: ModelParams, b: ModelParams) -> None:
    if a.spec is b.spec:
        return
    if a.spec.layer_dims != b.spec.layer_dims:
        raise ValueError(f"shape mismatch: {a.spec.layer_dims} vs {b.spec.layer_dims}")


def mlp_init(spec: ModelSpec, seed: int) -> ModelParams:
    rng = np.random.default_rng(seed & _SEED_MASK)
    layers = []
    for fan_in, fan_out in spec.layer_dims:
        w = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out))
        layers.append((w, np.zeros(fan_out)))
    return ModelParams(tuple(layers), spec)


def _as_batch(params: ModelParams, batch) -> np.ndarray:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.spec.input_dim:
        raise ValueError(
            f"batch shape {x.shape} does not match input_dim {params.spec.input_dim}"
        )
    return x


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _forward_cache(params: ModelParams, x: np.ndarray):
    activations = [x]
    pre = []
    h = x
    last = len(params.layers) - 1
    # overflow is reported by check_finite below rather than as a warning
    with np.errstate(over="ignore", invalid="ignore"):
        for k, (w, b) in enumerate(params.layers):
            z = h @ w + b
            pre.append(z)
            if k < last:
                h = np.maximum(z, 0.0)
                activations.append(h)
        probs = _softmax(pre[-1])
    check_finite("forward activations", probs)
    return activations, pre, probs


def forward(params: ModelParams, batch) -> np.ndarray:
    """Softmax class probabilities, shape ``[B, C]``."""
    x = _as_batch(params, batch)
    return _forward_cache(params, x)[2]


def loss_and_grads(
    params: ModelParams,
    batch,
    labels,
    class_weights=None,
) -> tuple[float, ModelParams]:
    """Class-weighted cross-entropy summed over the batch, with its gradient.

    Probabilities are clamped at ``LOG_CLAMP`` before the log; a clamped
    sample contributes a constant and hence zero gradient.
    """
    x = _as_batch(params, batch)
    y = np.asarray(labels)
    C = params.spec.num_classes
    if y.shape != (x.shape[0],):
        raise ValueError(f"labels shape {y.shape} does not match batch size {x.shape[0]}")
    if y.size and (not np.issubdtype(y.dtype, np.integer) or y.min() < 0 or y.max() >= C):
        raise ValueError(f"labels must be integers in [0, {C})")
    if class_weights is None:
        alpha = np.ones(C)
    else:
        alpha = np.asarray(class_weights, dtype=np.float64)
        if alpha.shape != (C,):
            raise ValueError(f"class_weights must have shape ({C},), got {alpha.shape}")
        if np.any(alpha < 1.0):
            raise ValueError("class_weights entries must be >= 1")

    activations, pre, probs = _forward_cache(params, x)
    rows = np.arange(x.shape[0])
    p_true = probs[rows, y]
    sample_w = alpha[y]
    loss = float(np.sum(sample_w * -np.log(np.maximum(p_true, LOG_CLAMP))))

    delta = probs.copy()
    delta[rows, y] -= 1.0
    active = (p_true >= LOG_CLAMP).astype(np.float64)
    delta *= (sample_w * active)[:, None]

    grads: list[tuple[np.ndarray, np.ndarray]] = []
    for k in range(len(params.layers) - 1, -1, -1):
        w = params.layers[k][0]
        grads.append((activations[k].T @ delta, delta.sum(axis=0)))
        if k > 0:
            delta = (delta @ w.T) * (pre[k - 1] > 0.0)
    grads.reverse()
    out = ModelParams._trusted(grads, params.spec)
    check_finite("gradients", *out.tensors())
    if not np.isfinite(loss):
        raise NumericalError("non-finite loss")
    return loss, out


def sgd_step(params: ModelParams, grads: ModelParams, lr: float) -> ModelParams:
    if lr < 0:
        raise ValueError(f"learning rate must be non-negative, got {lr}")
    check_compatible(params, grads)
    check_finite("gradients", *grads.tensors())
    if lr == 0:
        return params.copy()
    out = params.zip_map(grads, lambda p, g: p - lr * g)
    check_finite("parameters after SGD step", *out.tensors())
    return out


def frobenius_distance(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    diff = np.abs(a - b).ravel()
    scale = float(diff.max()) if diff.size else 0.0
    if scale == 0.0:
        return 0.0
    # scaled so tiny differences cannot underflow to an exact zero
    diff = diff / scale
    return scale * float(np.sqrt(np.dot(diff, diff)))


def model_from_arrays(spec: ModelSpec, arrays: Sequence[np.ndarray]) -> ModelParams:
    """Rebuild params from the flat ``[w0, b0, w1, b1, ...]`` list."""
    if len(arrays) % 2:
        raise ValueError("expected alternating weight/bias arrays")
    return ModelParams(tuple(zip(arrays[0::2], arrays[1::2])), spec)
