"""One-hidden-layer perceptron with hand-written gradients.

``d -> h (ReLU) -> K`` in float64, trained with momentum SGD and a cosine
learning rate schedule.
"""

import math
from dataclasses import dataclass
from typing import Dict, Sequence, Tuple

import numpy as np

from .exceptions import ArgumentError, DataError
from .storage import Storage, load_checkpoint, save_checkpoint

PARAM_NAMES = ("W1", "b1", "W2", "b2")
# weight decay applies to these only
DECAYED = ("W1", "W2")

Grads = Dict[str, np.ndarray]


class ModelParams:
    """Weights, biases and the matching momentum buffers."""

    def __init__(
        self, tensors: Dict[str, np.ndarray], buffers: Dict[str, np.ndarray] = None
    ) -> None:
        self.tensors = {k: np.array(tensors[k], dtype=np.float64) for k in PARAM_NAMES}
        if buffers is None:
            buffers = {k: np.zeros_like(v) for k, v in self.tensors.items()}
        self.buffers = {k: np.array(buffers[k], dtype=np.float64) for k in PARAM_NAMES}
        for key in PARAM_NAMES:
            if self.buffers[key].shape != self.tensors[key].shape:
                raise ArgumentError(f"buffer shape mismatch for {key}")
        h = self.tensors["W1"].shape[1]
        if self.tensors["W2"].shape[0] != h:
            raise ArgumentError("W1 and W2 do not chain")

    @property
    def layer_sizes(self) -> Tuple[int, int, int]:
        d, h = self.tensors["W1"].shape
        return d, h, self.tensors["W2"].shape[1]

    def copy(self) -> "ModelParams":
        return ModelParams(self.tensors, self.buffers)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.tensors.values())

    def weight_norm(self) -> float:
        return float(np.sqrt(sum(np.sum(self.tensors[k] ** 2) for k in DECAYED)))

    def __getitem__(self, key: str) -> np.ndarray:
        return self.tensors[key]


def init_params(layer_sizes: Sequence[int], rng: np.random.Generator) -> ModelParams:
    """Glorot-uniform weights, zero biases."""
    d, h, K = layer_sizes
    tensors = {}
    for name, (fan_in, fan_out) in (("W1", (d, h)), ("W2", (h, K))):
        a = math.sqrt(6.0 / (fan_in + fan_out))
        tensors[name] = rng.uniform(-a, a, size=(fan_in, fan_out))
    tensors["b1"] = np.zeros(h)
    tensors["b2"] = np.zeros(K)
    return ModelParams(tensors)


@dataclass
class ForwardCache:
    inputs: np.ndarray
    hidden_pre: np.ndarray
    hidden: np.ndarray


def forward(params: ModelParams, batch: np.ndarray) -> Tuple[np.ndarray, ForwardCache]:
    """Logits of a ``(n, d)`` batch and the activations backward needs."""
    batch = np.asarray(batch, dtype=np.float64)
    d = params.layer_sizes[0]
    if batch.ndim != 2 or batch.shape[1] != d:
        raise ArgumentError(f"expected a batch of shape (n, {d}), got {batch.shape}")
    hidden_pre = batch @ params["W1"] + params["b1"]
    hidden = np.maximum(hidden_pre, 0.0)
    logits = hidden @ params["W2"] + params["b2"]
    return logits, ForwardCache(batch, hidden_pre, hidden)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax.

    >>> softmax(np.array([[1.0, 2.0]])).round(4).tolist()
    [[0.2689, 0.7311]]
    >>> softmax(np.array([[1000.0, 0.0]])).tolist()
    [[1.0, 0.0]]
    """
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=1, keepdims=True) if logits.size else logits
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    if not logits.size:
        return logits
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def backward(
    params: ModelParams, cache: ForwardCache, grad_logits: np.ndarray
) -> Grads:
    grad_logits = np.asarray(grad_logits, dtype=np.float64)
    expected = (len(cache.inputs), params.layer_sizes[2])
    if grad_logits.shape != expected:
        raise ArgumentError(
            f"logit gradient has shape {grad_logits.shape}, expected {expected}"
        )
    grads = {
        "W2": cache.hidden.T @ grad_logits,
        "b2": grad_logits.sum(axis=0),
    }
    grad_hidden = (grad_logits @ params["W2"].T) * (cache.hidden_pre > 0)
    grads["W1"] = cache.inputs.T @ grad_hidden
    grads["b1"] = grad_hidden.sum(axis=0)
    return grads


def sgd_step(
    params: ModelParams, grads: Grads, lr: float, momentum: float, weight_decay: float
) -> ModelParams:
    """In-place momentum SGD step, decay on weights only."""
    for key in PARAM_NAMES:
        grad = grads[key]
        if key in DECAYED:
            grad = grad + weight_decay * params.tensors[key]
        buffer = params.buffers[key]
        buffer *= momentum
        buffer += grad
        params.tensors[key] -= lr * buffer
    return params


def cosine_lr(step: int, total_steps: int, lr0: float) -> float:
    """Half-cosine decay from ``lr0`` to 0.

    >>> cosine_lr(0, 100, 0.03), cosine_lr(100, 100, 0.03)
    (0.03, 0.0)
    """
    if not 0 <= step <= total_steps:
        raise ArgumentError(f"step {step} outside [0, {total_steps}]")
    if total_steps == 0:
        return lr0
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


def save_params(
    params: ModelParams, storage: Storage, name: str, seed: int, step: int
) -> None:
    tensors = dict(params.tensors)
    tensors.update({f"momentum.{k}": v for k, v in params.buffers.items()})
    manifest = {"layer_sizes": params.layer_sizes, "seed": seed, "step": step}
    save_checkpoint(storage, name, tensors, manifest)


def load_params(storage: Storage, name: str) -> Tuple[ModelParams, dict]:
    tensors, manifest = load_checkpoint(storage, name)
    try:
        params = ModelParams(
            {k: tensors[k] for k in PARAM_NAMES},
            {k: tensors[f"momentum.{k}"] for k in PARAM_NAMES},
        )
    except KeyError as exc:
        raise DataError(f"{storage.path(name)}: missing tensor {exc}")
    return params, manifest
