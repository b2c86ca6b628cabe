"""Plain-numpy multilayer perceptron with softmax cross-entropy and SGD.

Parameters live in one flat float64 vector so models can be scaled, added,
and averaged element-wise. Canonical flat order, which golden traces rely on:
for each layer l in order, the weight matrix W_l (fan_in x fan_out, row-major)
followed by the bias vector b_l. Hidden layers use ReLU; the output layer is
linear and its activations are the logits. "Features" of a designated layer
are that layer's post-activation values (pre-softmax for the output layer),
summed over the batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class TrainingDiverged(RuntimeError):
    """Raised when a batch loss stops being finite."""


@dataclass
class Minibatch:
    """A batch of inputs with integer class labels."""

    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2:
            raise ValueError(f"inputs must be 2-d, got shape {self.inputs.shape}")
        if len(self.inputs) != len(self.labels):
            raise ValueError(
                f"{len(self.inputs)} input rows but {len(self.labels)} labels"
            )
        if len(self.labels) < 1:
            raise ValueError("minibatch must hold at least one sample")

    def __len__(self) -> int:
        return len(self.labels)


def _layout(layer_sizes: tuple[int, ...]) -> tuple[list[tuple[int, int, int]], int]:
    """Per-layer (weight_start, bias_start, end) offsets into the flat vector."""
    spans = []
    off = 0
    for fan_in, fan_out in zip(layer_sizes, layer_sizes[1:]):
        w0 = off
        b0 = w0 + fan_in * fan_out
        off = b0 + fan_out
        spans.append((w0, b0, off))
    return spans, off


@dataclass
class MLPParams:
    """Flat-indexable model parameters for a fixed layer geometry."""

    layer_sizes: tuple[int, ...]
    flat: np.ndarray
    _spans: list[tuple[int, int, int]] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        if len(self.layer_sizes) < 2 or any(s < 1 for s in self.layer_sizes):
            raise ValueError(f"bad layer sizes {self.layer_sizes}")
        self._spans, total = _layout(self.layer_sizes)
        self.flat = np.asarray(self.flat, dtype=np.float64)
        if self.flat.shape != (total,):
            raise ValueError(
                f"flat vector has shape {self.flat.shape}, layout needs ({total},)"
            )

    @classmethod
    def zeros(cls, layer_sizes: tuple[int, ...]) -> "MLPParams":
        _, total = _layout(tuple(layer_sizes))
        return cls(tuple(layer_sizes), np.zeros(total))

    @classmethod
    def uniform(cls, layer_sizes: tuple[int, ...], rng: np.random.Generator) -> "MLPParams":
        """Small-uniform init, bounds 1/sqrt(fan_in) per layer, zero biases."""
        sizes = tuple(layer_sizes)
        params = cls.zeros(sizes)
        for l, (fan_in, fan_out) in enumerate(zip(sizes, sizes[1:])):
            bound = 1.0 / np.sqrt(fan_in)
            params.weight(l)[:] = rng.uniform(-bound, bound, (fan_in, fan_out))
        return params

    @property
    def d_w(self) -> int:
        return len(self.flat)

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1

    def weight(self, layer: int) -> np.ndarray:
        w0, b0, _ = self._spans[layer]
        fan_in, fan_out = self.layer_sizes[layer], self.layer_sizes[layer + 1]
        return self.flat[w0:b0].reshape(fan_in, fan_out)

    def bias(self, layer: int) -> np.ndarray:
        _, b0, end = self._spans[layer]
        return self.flat[b0:end]

    def copy(self) -> "MLPParams":
        return MLPParams(self.layer_sizes, self.flat.copy())


def _resolve_feature_layer(params: MLPParams, feature_layer: int) -> int:
    n = params.n_layers
    if not -n <= feature_layer < n:
        raise ValueError(f"feature layer {feature_layer} out of range for {n} layers")
    return feature_layer % n


def _activations(params: MLPParams, x: np.ndarray) -> list[np.ndarray]:
    if x.ndim != 2 or x.shape[1] != params.layer_sizes[0]:
        raise ValueError(
            f"input shape {x.shape} does not match input width {params.layer_sizes[0]}"
        )
    acts = []
    a = x
    for l in range(params.n_layers):
        z = a @ params.weight(l) + params.bias(l)
        a = np.maximum(z, 0.0) if l < params.n_layers - 1 else z
        acts.append(a)
    return acts


def forward(
    params: MLPParams, inputs: np.ndarray, feature_layer: int = -1
) -> tuple[np.ndarray, np.ndarray]:
    """Run the network; return (logits, feature sum).

    The feature sum is the column sum over the batch of the designated layer's
    activations, deliberately un-normalized so dividing by a sample count
    yields the batch mean.
    """
    layer = _resolve_feature_layer(params, feature_layer)
    acts = _activations(params, np.asarray(inputs, dtype=np.float64))
    return acts[-1], acts[layer].sum(axis=0)


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def batch_loss(params: MLPParams, batch: Minibatch) -> float:
    """Mean cross-entropy of the batch under the current parameters."""
    logits = _activations(params, batch.inputs)[-1]
    probs = _softmax(logits)
    picked = probs[np.arange(len(batch)), batch.labels]
    with np.errstate(divide="ignore"):
        return float(np.mean(-np.log(picked)))


def batch_train(
    params: MLPParams, batch: Minibatch, gamma: float, feature_layer: int = -1
) -> tuple[MLPParams, np.ndarray, float]:
    """One SGD step on mean cross-entropy; exactly one forward and one backward.

    Returns (updated params, feature sum at the pre-step weights, batch loss).
    The feature sum comes from the same forward pass the gradient uses, so the
    running feature record costs nothing extra.
    """
    if gamma < 0:
        raise ValueError(f"learning rate must be non-negative, got {gamma}")
    layer = _resolve_feature_layer(params, feature_layer)
    acts = _activations(params, batch.inputs)
    feature_sum = acts[layer].sum(axis=0)

    m = len(batch)
    probs = _softmax(acts[-1])
    picked = probs[np.arange(m), batch.labels]
    with np.errstate(divide="ignore"):
        loss = float(np.mean(-np.log(picked)))
    if not np.isfinite(loss):
        raise TrainingDiverged(f"non-finite batch loss {loss}")

    grad = np.empty_like(params.flat)
    delta = probs.copy()
    delta[np.arange(m), batch.labels] -= 1.0
    delta /= m
    for l in range(params.n_layers - 1, -1, -1):
        a_prev = batch.inputs if l == 0 else acts[l - 1]
        w0, b0, end = params._spans[l]
        grad[w0:b0] = (a_prev.T @ delta).ravel()
        grad[b0:end] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ params.weight(l).T) * (acts[l - 1] > 0.0)

    return MLPParams(params.layer_sizes, params.flat - gamma * grad), feature_sum, loss


def finalize_training(
    per_batch_feature_sums: list[np.ndarray], samples_seen: int, kappa: int
) -> np.ndarray:
    """Historical moment from one completed training: per-sample feature mean.

    Expects exactly kappa per-batch feature sums, each taken at the weights the
    corresponding batch was trained on. The normalizer is the actual number of
    sample presentations, which equals the local dataset size whenever
    kappa * batch_size matches it.
    """
    if len(per_batch_feature_sums) != kappa:
        raise ValueError(
            f"expected {kappa} per-batch feature sums, got {len(per_batch_feature_sums)}"
        )
    if samples_seen < 1:
        raise ValueError("samples_seen must be positive")
    total = np.sum(per_batch_feature_sums, axis=0)
    return total / float(samples_seen)


def aggregate(messages: list[tuple[MLPParams, int]]) -> MLPParams:
    """Sample-count-weighted average of the received models.

    Weights are renormalized over the messages actually received, so they
    always sum to one; averaging over absentees would shrink the model.
    """
    if not messages:
        raise ValueError("cannot aggregate an empty message list")
    sizes = messages[0][0].layer_sizes
    for model, _ in messages:
        if model.layer_sizes != sizes:
            raise ValueError(
                f"mixed layer sizes in aggregation: {model.layer_sizes} vs {sizes}"
            )
    total = float(sum(count for _, count in messages))
    if total <= 0:
        raise ValueError("aggregation sample counts must be positive")
    flat = np.zeros_like(messages[0][0].flat)
    for model, count in messages:
        flat += (count / total) * model.flat
    return MLPParams(sizes, flat)
