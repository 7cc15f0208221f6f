"""Minimal dense network engine: FC layers with ReLU, exact backprop, Adam.

Everything is float64 and deterministic. Networks here are tiny (tens of
units), so clarity and exact gradients win over raw speed. Batched variants
(`forward_batch` / `backward_batch`) carry the training loop; the
single-vector `forward` / `backward` are thin wrappers over them.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericError, ShapeError

RELU = "relu"
IDENTITY = "identity"


@dataclass
class LayerParams:
    """One fully-connected layer: y = act(W x + b), W is (out, in)."""

    weights: np.ndarray
    biases: np.ndarray
    activation: str = RELU

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ShapeError(f"layer weights must be 2-D, got shape {self.weights.shape}")
        if self.biases.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"bias length {self.biases.shape} does not match weight rows "
                f"{self.weights.shape[0]}"
            )
        if self.activation not in (RELU, IDENTITY):
            raise ConfigError(f"unknown activation {self.activation!r}")

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    def copy(self) -> "LayerParams":
        return LayerParams(self.weights.copy(), self.biases.copy(), self.activation)


@dataclass
class MLPParams:
    """Stack of fully-connected layers; the final layer must be identity so
    embedding coordinates can be signed."""

    layers: list[LayerParams]

    def __post_init__(self):
        if not self.layers:
            raise ConfigError("network needs at least one layer")
        for i in range(1, len(self.layers)):
            if self.layers[i].in_dim != self.layers[i - 1].out_dim:
                raise ShapeError(
                    f"layer {i} expects input dim {self.layers[i].in_dim}, "
                    f"previous layer outputs {self.layers[i - 1].out_dim}"
                )

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    def copy(self) -> "MLPParams":
        return MLPParams([layer.copy() for layer in self.layers])


@dataclass
class LayerGrads:
    """Gradient block shaped like one layer's parameters."""

    weights: np.ndarray
    biases: np.ndarray


@dataclass
class ForwardCache:
    """Intermediates of one forward pass: the input batch plus pre- and
    post-activation values per layer. Rows index batch samples."""

    inputs: np.ndarray
    pre: list[np.ndarray]
    post: list[np.ndarray]


def forward_batch(params: MLPParams, inputs: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Run a (batch, in_dim) matrix through the network.

    Returns the (batch, out_dim) embeddings and the cache backward needs.
    """
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise ShapeError(
            f"layer 0 expects input dim {params.input_dim}, got shape {x.shape}"
        )
    pre: list[np.ndarray] = []
    post: list[np.ndarray] = []
    a = x
    for layer in params.layers:
        z = a @ layer.weights.T + layer.biases
        a = np.maximum(z, 0.0) if layer.activation == RELU else z
        pre.append(z)
        post.append(a)
    return a, ForwardCache(inputs=x, pre=pre, post=post)


def forward(params: MLPParams, input_vec: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Map one input vector to its embedding; cache holds all intermediates."""
    v = np.asarray(input_vec, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError(f"expected a vector, got shape {v.shape}")
    out, cache = forward_batch(params, v[None, :])
    return out[0], cache


def backward_batch(
    params: MLPParams, cache: ForwardCache, output_grads: np.ndarray
) -> tuple[list[LayerGrads], np.ndarray]:
    """Backpropagate per-sample upstream gradients through the cached pass.

    Parameter gradients are summed over the batch; the returned input
    gradient keeps one row per sample. ReLU subgradient at exactly 0 is 0.
    """
    up = np.asarray(output_grads, dtype=np.float64)
    n_layers = len(params.layers)
    if len(cache.pre) != n_layers:
        raise ShapeError("cache does not match network depth")
    if up.shape != cache.pre[-1].shape:
        raise ShapeError(
            f"output grad shape {up.shape} does not match embedding shape "
            f"{cache.pre[-1].shape}"
        )
    grads: list[LayerGrads | None] = [None] * n_layers
    for i in range(n_layers - 1, -1, -1):
        layer = params.layers[i]
        if layer.activation == RELU:
            up = up * (cache.pre[i] > 0.0)
        a_in = cache.post[i - 1] if i > 0 else cache.inputs
        grads[i] = LayerGrads(weights=up.T @ a_in, biases=up.sum(axis=0))
        up = up @ layer.weights
    return grads, up  # type: ignore[return-value]


def backward(
    params: MLPParams, cache: ForwardCache, output_grad: np.ndarray
) -> tuple[list[LayerGrads], np.ndarray]:
    """Single-vector backward; see `backward_batch`."""
    g = np.asarray(output_grad, dtype=np.float64)
    if g.ndim != 1:
        raise ShapeError(f"expected a vector, got shape {g.shape}")
    grads, input_grad = backward_batch(params, cache, g[None, :])
    return grads, input_grad[0]


def zeros_like_params(params: MLPParams) -> list[LayerGrads]:
    return [
        LayerGrads(np.zeros_like(l.weights), np.zeros_like(l.biases))
        for l in params.layers
    ]


@dataclass
class AdamState:
    """Bias-corrected Adam accumulators shaped like the parameters."""

    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[LayerGrads] = field(default_factory=list)
    v: list[LayerGrads] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: MLPParams, learning_rate: float = 1e-4,
                   beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(
            learning_rate=learning_rate,
            beta1=beta1,
            beta2=beta2,
            eps=eps,
            step=0,
            m=zeros_like_params(params),
            v=zeros_like_params(params),
        )


def adam_step(
    params: MLPParams, grads: list[LayerGrads], state: AdamState
) -> tuple[MLPParams, AdamState]:
    """Apply one bias-corrected Adam update; returns fresh params and state."""
    if len(grads) != len(params.layers):
        raise ShapeError("gradient blocks do not match network depth")
    if state.step == 0 and not state.m:
        state = AdamState.for_params(
            params, state.learning_rate, state.beta1, state.beta2, state.eps
        )
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** t
    corr2 = 1.0 - b2 ** t
    new_layers = []
    new_m = []
    new_v = []
    for i, (layer, g, m, v) in enumerate(zip(params.layers, grads, state.m, state.v)):
        for name, arr in (("weights", g.weights), ("biases", g.biases)):
            if not np.all(np.isfinite(arr)):
                raise NumericError(f"non-finite gradient in layer {i} {name}")
        mw = b1 * m.weights + (1.0 - b1) * g.weights
        mb = b1 * m.biases + (1.0 - b1) * g.biases
        vw = b2 * v.weights + (1.0 - b2) * g.weights ** 2
        vb = b2 * v.biases + (1.0 - b2) * g.biases ** 2
        step_w = state.learning_rate * (mw / corr1) / (np.sqrt(vw / corr2) + state.eps)
        step_b = state.learning_rate * (mb / corr1) / (np.sqrt(vb / corr2) + state.eps)
        new_layers.append(
            LayerParams(layer.weights - step_w, layer.biases - step_b, layer.activation)
        )
        new_m.append(LayerGrads(mw, mb))
        new_v.append(LayerGrads(vw, vb))
    new_state = AdamState(
        learning_rate=state.learning_rate,
        beta1=state.beta1,
        beta2=state.beta2,
        eps=state.eps,
        step=t,
        m=new_m,
        v=new_v,
    )
    return MLPParams(new_layers), new_state


def init_params(sizes: list[int], seed: int) -> MLPParams:
    """Build an MLP from a [in, hidden..., out] size list.

    Weights are scaled-uniform with bound sqrt(6 / (fan_in + fan_out)),
    biases zero. Hidden layers use ReLU, the final layer is identity.
    Deterministic per seed.
    """
    if len(sizes) < 2:
        raise ConfigError("architecture needs an input and at least one layer size")
    if any(s <= 0 for s in sizes):
        raise ConfigError(f"layer sizes must be positive, got {sizes}")
    rng = np.random.default_rng(seed)
    layers = []
    for i in range(1, len(sizes)):
        fan_in, fan_out = sizes[i - 1], sizes[i]
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        activation = IDENTITY if i == len(sizes) - 1 else RELU
        layers.append(LayerParams(weights, np.zeros(fan_out), activation))
    return MLPParams(layers)
