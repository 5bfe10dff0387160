"""Minimal dense feedforward network with analytic backpropagation.

Models are plain numpy arrays wrapped in a dataclass, so every training step
is a pure function of its inputs: no framework state, no global RNG, and
identical inputs produce bitwise-identical outputs. Hidden layers use ReLU
(subgradient 0 at the kink), the output layer is linear, and classification
losses operate on raw logits.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ShapeError, UnsupportedArchitectureError

ACTIVATIONS = ("relu",)


@dataclass
class Batch:
    """A block of row-vector inputs with optional integer class labels."""

    inputs: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        if self.inputs.ndim != 2 or self.inputs.shape[0] < 1:
            raise ShapeError(f"batch inputs must be a non-empty 2-D matrix, got shape {self.inputs.shape}")
        if not np.isfinite(self.inputs).all():
            raise ShapeError("batch inputs contain non-finite entries")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.inputs.shape[0],):
                raise ShapeError(
                    f"labels shape {self.labels.shape} does not match {self.inputs.shape[0]} input rows"
                )

    def __len__(self) -> int:
        return self.inputs.shape[0]


@dataclass
class ModelWeights:
    """Ordered dense layers: ``weights[i]`` is [out, in], ``biases[i]`` is [out].

    Adjacent layers must compose and every entry must be finite; both are
    enforced on construction so the invariant holds after each update step.
    """

    weights: List[np.ndarray]
    biases: List[np.ndarray]
    activation: str = "relu"

    def __post_init__(self):
        if not self.weights or len(self.weights) != len(self.biases):
            raise ShapeError("model needs matching, non-empty weight and bias lists")
        if self.activation not in ACTIVATIONS:
            raise ShapeError(f"unknown activation {self.activation!r}")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ShapeError(f"layer {i}: weight shape {w.shape} and bias shape {b.shape} do not match")
            if i > 0 and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ShapeError(
                    f"layer {i} input width {w.shape[1]} != layer {i - 1} output width "
                    f"{self.weights[i - 1].shape[0]}"
                )
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ShapeError(f"layer {i} contains non-finite entries")

    @property
    def dims(self) -> Tuple[int, ...]:
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def n_params(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    def copy(self) -> "ModelWeights":
        return ModelWeights([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.activation)


@dataclass
class ModelGrads:
    """Gradient arrays mirroring a model's weight/bias shapes."""

    weights: List[np.ndarray]
    biases: List[np.ndarray]


@dataclass
class ForwardCache:
    """Activations retained by ``forward`` for the backward pass."""

    inputs: np.ndarray
    pre: List[np.ndarray]  # pre-activation z of each hidden layer
    hidden: List[np.ndarray]  # post-activation output of each hidden layer
    logits: np.ndarray


def init_model(dims: Sequence[int], seed, activation: str = "relu") -> ModelWeights:
    """Build a model with uniform fan-based weight init and zero biases.

    Weights are drawn from U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
    """
    if len(dims) < 2:
        raise ShapeError("a model needs at least an input and an output dimension")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return ModelWeights(weights, biases, activation)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, stabilized by max subtraction."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _as_inputs(batch: Union[Batch, np.ndarray]) -> np.ndarray:
    if isinstance(batch, Batch):
        return batch.inputs
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"inputs must be 2-D, got shape {x.shape}")
    return x


def forward(model: ModelWeights, batch: Union[Batch, np.ndarray]) -> Tuple[np.ndarray, ForwardCache]:
    """Run the network, returning logits and the cache for backprop."""
    x = _as_inputs(batch)
    if x.shape[1] != model.dims[0]:
        raise ShapeError(f"input width {x.shape[1]} does not match model input dim {model.dims[0]}")
    pre, hidden = [], []
    a = x
    for w, b in zip(model.weights[:-1], model.biases[:-1]):
        z = a @ w.T + b
        a = np.maximum(z, 0.0)
        pre.append(z)
        hidden.append(a)
    logits = a @ model.weights[-1].T + model.biases[-1]
    return logits, ForwardCache(inputs=x, pre=pre, hidden=hidden, logits=logits)


def backward_from_output_grad(model: ModelWeights, cache: ForwardCache, dlogits: np.ndarray) -> ModelGrads:
    """Backpropagate a gradient w.r.t. the logits down to every parameter."""
    n_layers = model.n_layers
    grads_w: List[np.ndarray] = [np.empty(0)] * n_layers
    grads_b: List[np.ndarray] = [np.empty(0)] * n_layers
    delta = dlogits
    for layer in reversed(range(n_layers)):
        a_prev = cache.inputs if layer == 0 else cache.hidden[layer - 1]
        grads_w[layer] = delta.T @ a_prev
        grads_b[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ model.weights[layer]) * (cache.pre[layer - 1] > 0.0)
    return ModelGrads(grads_w, grads_b)


def backward_ce(model: ModelWeights, cache: ForwardCache, labels) -> Tuple[float, ModelGrads]:
    """Mean cross-entropy loss over the batch and its parameter gradients."""
    if labels is None:
        raise ShapeError("cross-entropy backward requires labels")
    labels = np.asarray(labels, dtype=np.int64)
    logits = cache.logits
    n, n_classes = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} does not match {n} cached rows")
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ShapeError(f"label indices must lie in [0, {n_classes}), got range "
                         f"[{labels.min()}, {labels.max()}]")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(log_z - shifted[np.arange(n), labels]))
    dlogits = softmax(logits)
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    return loss, backward_from_output_grad(model, cache, dlogits)


def sgd_step(model: ModelWeights, grads: ModelGrads, lr: float) -> ModelWeights:
    """One plain gradient step: w' = w - lr * g, elementwise."""
    return ModelWeights(
        [w - lr * g for w, g in zip(model.weights, grads.weights)],
        [b - lr * g for b, g in zip(model.biases, grads.biases)],
        model.activation,
    )


def grads_add(a: ModelGrads, b: ModelGrads, scale_b: float = 1.0) -> ModelGrads:
    """a + scale_b * b, per parameter array."""
    return ModelGrads(
        [ga + scale_b * gb for ga, gb in zip(a.weights, b.weights)],
        [ga + scale_b * gb for ga, gb in zip(a.biases, b.biases)],
    )


def penultimate_embeddings(model: ModelWeights, batch: Union[Batch, np.ndarray]) -> np.ndarray:
    """Post-activation output of the last hidden layer, one row per input."""
    if model.n_layers < 2:
        raise UnsupportedArchitectureError("model has no hidden layer to take embeddings from")
    x = _as_inputs(batch)
    if x.shape[1] != model.dims[0]:
        raise ShapeError(f"input width {x.shape[1]} does not match model input dim {model.dims[0]}")
    a = x
    for w, b in zip(model.weights[:-1], model.biases[:-1]):
        a = np.maximum(a @ w.T + b, 0.0)
    return a


def evaluate_accuracy(model: ModelWeights, inputs: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of rows whose argmax logit matches the label."""
    logits, _ = forward(model, inputs)
    return float(np.mean(logits.argmax(axis=1) == np.asarray(labels)))


def _param_arrays(model: ModelWeights) -> List[np.ndarray]:
    return list(model.weights) + list(model.biases)


def _model_from_flat(template: ModelWeights, flat: np.ndarray) -> ModelWeights:
    arrays = []
    pos = 0
    for a in _param_arrays(template):
        arrays.append(flat[pos:pos + a.size].reshape(a.shape))
        pos += a.size
    n = template.n_layers
    return ModelWeights(arrays[:n], arrays[n:], template.activation)


def finite_diff_check(
    loss_and_grad_fn: Callable[[ModelWeights], Tuple[float, ModelGrads]],
    model: ModelWeights,
    step: float = 1e-5,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_and_grad_fn`` must be deterministic and return (loss, grads). The
    error per parameter is |analytic - central| / (|central| + 1e-8); the
    maximum over all parameters is returned.
    """
    _, grads = loss_and_grad_fn(model)
    analytic = np.concatenate([g.ravel() for g in grads.weights + grads.biases])
    flat = np.concatenate([a.ravel() for a in _param_arrays(model)])
    numeric = np.empty_like(flat)
    for i in range(flat.size):
        plus = flat.copy()
        plus[i] += step
        minus = flat.copy()
        minus[i] -= step
        loss_plus, _ = loss_and_grad_fn(_model_from_flat(model, plus))
        loss_minus, _ = loss_and_grad_fn(_model_from_flat(model, minus))
        numeric[i] = (loss_plus - loss_minus) / (2.0 * step)
    return float(np.max(np.abs(analytic - numeric) / (np.abs(numeric) + 1e-8)))
