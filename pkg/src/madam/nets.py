"""Multilayer perceptrons with leaky-relu and exact reverse-mode gradients.

Layers are plain (weight, bias) pairs; the forward pass applies
``leakyrelu(x @ W.T + b)`` at every layer except the last, which stays
linear so the same trunk serves both regression (squared error) and
classification (softmax cross-entropy). ``backward`` implements
backpropagation by hand and returns per-layer gradients of the mean batch
loss; it never mutates the network.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeError, Tensor

REGRESSION = "regression"
CLASSIFICATION = "classification"


@dataclass(frozen=True)
class LayerParams:
    """One dense layer: weight of shape (out, in) and bias of shape (out,)."""

    weight: Tensor
    bias: Tensor

    def __post_init__(self):
        w = np.asarray(self.weight, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        if w.ndim != 2 or b.ndim != 1 or b.shape[0] != w.shape[0]:
            raise ShapeError(f"layer shapes disagree: weight {w.shape}, bias {b.shape}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValueError("layer parameters contain NaN or Inf")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]


@dataclass(frozen=True)
class Mlp:
    """Stack of dense layers with a shared leaky-relu negative slope."""

    layers: tuple[LayerParams, ...]
    leak: float = 0.1

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ValueError("Mlp needs at least one layer")
        if not 0.0 <= self.leak < 1.0:
            raise ValueError(f"leak must lie in [0, 1), got {self.leak}")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ShapeError(
                    f"adjacent layers do not compose: {prev.out_dim} -> {nxt.in_dim}"
                )
        object.__setattr__(self, "layers", layers)

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def param_list(self) -> list[Tensor]:
        """Flat parameter view, ordered [w0, b0, w1, b1, ...]."""
        out: list[Tensor] = []
        for layer in self.layers:
            out.append(layer.weight)
            out.append(layer.bias)
        return out

    def param_names(self) -> list[str]:
        out = []
        for i in range(self.depth):
            out.append(f"layer{i}.weight")
            out.append(f"layer{i}.bias")
        return out

    def with_params(self, params: list[Tensor]) -> "Mlp":
        """New network with the same structure and the given flat parameters."""
        if len(params) != 2 * self.depth:
            raise ShapeError(f"expected {2 * self.depth} parameter tensors, got {len(params)}")
        layers = []
        for i, layer in enumerate(self.layers):
            w = np.asarray(params[2 * i], dtype=np.float64)
            b = np.asarray(params[2 * i + 1], dtype=np.float64)
            if w.shape != layer.weight.shape or b.shape != layer.bias.shape:
                raise ShapeError(f"parameter {i} shape mismatch")
            layers.append(LayerParams(w, b))
        return Mlp(tuple(layers), self.leak)


@dataclass(frozen=True)
class GradientBundle:
    """Per-layer (weight_grad, bias_grad) pairs plus the loss they came from."""

    per_layer: tuple[tuple[Tensor, Tensor], ...]
    loss_value: float

    def flat(self) -> list[Tensor]:
        """Gradients in the same order as ``Mlp.param_list``."""
        out: list[Tensor] = []
        for wg, bg in self.per_layer:
            out.append(wg)
            out.append(bg)
        return out


@dataclass(frozen=True)
class Dataset:
    """Inputs of shape (N, d_in) with regression or class-index targets."""

    inputs: Tensor
    targets: Tensor
    kind: str

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] < 1:
            raise ShapeError(f"inputs must be (N, d) with N >= 1, got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("inputs contain NaN or Inf")
        if self.kind == CLASSIFICATION:
            y = np.asarray(self.targets)
            if not np.issubdtype(y.dtype, np.integer):
                yf = np.asarray(self.targets, dtype=np.float64)
                if not np.all(yf == np.round(yf)):
                    raise ValueError("classification targets must be integer class indices")
                y = yf.astype(np.int64)
            if y.ndim != 1 or y.shape[0] != x.shape[0]:
                raise ShapeError(f"class targets must be (N,), got {y.shape}")
            if np.any(y < 0):
                raise ValueError("class indices must be nonnegative")
        elif self.kind == REGRESSION:
            y = np.asarray(self.targets, dtype=np.float64)
            if y.ndim != 2 or y.shape[0] != x.shape[0]:
                raise ShapeError(f"regression targets must be (N, d_out), got {y.shape}")
            if not np.all(np.isfinite(y)):
                raise ValueError("targets contain NaN or Inf")
        else:
            raise ValueError(f"unknown task kind: {self.kind!r}")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "targets", y)

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.inputs[idx], self.targets[idx], self.kind)


def _leaky(z: Tensor, leak: float) -> Tensor:
    return np.where(z > 0, z, leak * z)


def _leaky_grad(z: Tensor, leak: float) -> Tensor:
    # derivative at exactly 0 is fixed to the negative-slope branch
    return np.where(z > 0, 1.0, leak)


def forward(net: Mlp, x: Tensor) -> list[Tensor]:
    """Layer outputs [h_1, ..., h_{L-1}, output] for a (batch, d_in) input."""
    acts, _ = _forward_trace(net, x)
    return acts


def _forward_trace(net: Mlp, x: Tensor) -> tuple[list[Tensor], list[Tensor]]:
    """Forward pass keeping pre-activations for the backward sweep."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"input must be (batch, d_in), got {a.shape}")
    if a.shape[1] != net.in_dim:
        raise ShapeError(f"input width {a.shape[1]} != first layer input {net.in_dim}")
    acts: list[Tensor] = []
    pre: list[Tensor] = []
    for k, layer in enumerate(net.layers):
        z = a @ layer.weight.T + layer.bias
        pre.append(z)
        a = _leaky(z, net.leak) if k < net.depth - 1 else z
        acts.append(a)
    return acts, pre


def _softmax(z: Tensor) -> Tensor:
    shifted = z - np.max(z, axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=1, keepdims=True)


def loss(output: Tensor, targets, kind: str) -> float:
    """Mean batch loss: squared error summed over output dims, or softmax
    cross-entropy against integer class indices."""
    output = np.asarray(output, dtype=np.float64)
    if kind == REGRESSION:
        targets = np.asarray(targets, dtype=np.float64)
        if output.shape != targets.shape:
            raise ShapeError(f"output {output.shape} vs targets {targets.shape}")
        return float(np.mean(np.sum(np.square(output - targets), axis=1)))
    if kind == CLASSIFICATION:
        y = np.asarray(targets, dtype=np.int64)
        if y.ndim != 1 or y.shape[0] != output.shape[0]:
            raise ShapeError(f"class targets must be (batch,), got {y.shape}")
        if np.any(y < 0) or np.any(y >= output.shape[1]):
            raise ValueError("class index out of range")
        shifted = output - np.max(output, axis=1, keepdims=True)
        logz = np.log(np.sum(np.exp(shifted), axis=1))
        picked = shifted[np.arange(output.shape[0]), y]
        return float(np.mean(logz - picked))
    raise ValueError(f"unknown task kind: {kind!r}")


def _loss_grad_wrt_output(output: Tensor, targets, kind: str) -> tuple[float, Tensor]:
    n = output.shape[0]
    if kind == REGRESSION:
        value = loss(output, targets, kind)
        grad = 2.0 * (output - np.asarray(targets, dtype=np.float64)) / n
        return value, grad
    if kind == CLASSIFICATION:
        value = loss(output, targets, kind)
        y = np.asarray(targets, dtype=np.int64)
        grad = _softmax(output)
        grad[np.arange(n), y] -= 1.0
        return value, grad / n
    raise ValueError(f"unknown task kind: {kind!r}")


def backward(net: Mlp, batch: Dataset) -> GradientBundle:
    """Exact gradients of the mean batch loss for every weight and bias."""
    acts, pre = _forward_trace(net, batch.inputs)
    value, delta = _loss_grad_wrt_output(acts[-1], batch.targets, batch.kind)
    per_layer: list[tuple[Tensor, Tensor]] = [None] * net.depth  # type: ignore[list-item]
    for k in range(net.depth - 1, -1, -1):
        a_prev = batch.inputs if k == 0 else acts[k - 1]
        per_layer[k] = (delta.T @ a_prev, np.sum(delta, axis=0))
        if k > 0:
            delta = (delta @ net.layers[k].weight) * _leaky_grad(pre[k - 1], net.leak)
    return GradientBundle(tuple(per_layer), value)


def batch_loss(net: Mlp, batch: Dataset) -> float:
    """Mean loss of the network on a batch (forward only)."""
    acts = forward(net, batch.inputs)
    return loss(acts[-1], batch.targets, batch.kind)


def gradient_at_perturbed(net: Mlp, delta: list[Tensor], t: float, batch: Dataset) -> GradientBundle:
    """Gradients evaluated at parameters W + t * delta; ``net`` is untouched.

    ``delta`` is a flat parameter list in ``Mlp.param_list`` order.
    """
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    params = net.param_list()
    if len(delta) != len(params):
        raise ShapeError(f"delta has {len(delta)} tensors, expected {len(params)}")
    moved = [p + t * np.asarray(d, dtype=np.float64) for p, d in zip(params, delta)]
    return backward(net.with_params(moved), batch)


def random_mlp(widths: list[int], rng: np.random.Generator, leak: float = 0.1,
               weight_std: float | None = None, bias_std: float = 0.1) -> Mlp:
    """Random network for the given widths [d_in, h1, ..., d_out].

    Weights are Normal(0, 1/fan_in) unless ``weight_std`` overrides the
    scale; biases are Normal(0, bias_std**2), kept away from zero so that
    multiplicative rules can move them.
    """
    if len(widths) < 2:
        raise ValueError("widths must list at least input and output dims")
    layers = []
    for fan_in, fan_out in zip(widths, widths[1:]):
        std = weight_std if weight_std is not None else 1.0 / np.sqrt(fan_in)
        w = rng.normal(0.0, std, size=(fan_out, fan_in))
        b = rng.normal(0.0, bias_std, size=fan_out)
        layers.append(LayerParams(w, b))
    return Mlp(tuple(layers), leak)


def init_scales(widths: list[int], bias_std: float = 0.1) -> list[float]:
    """Initialization scale per parameter tensor, matching ``random_mlp``."""
    out: list[float] = []
    for fan_in, _ in zip(widths, widths[1:]):
        out.append(1.0 / np.sqrt(fan_in))
        out.append(bias_std)
    return out
