"""Multilayer networks of N-dimensional vector neurons.

Neuron ``i`` of layer ``l`` receives ``z_i = sum_j w_ij * a_j + b_i`` where
``*`` is the network's bilinear product.  Arrays keep the vector axis last:
activations are ``(width, N)`` per sample, or ``(batch, width, N)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .bilinear import BilinearProduct, DimensionMismatchError


class NumericOverflowError(FloatingPointError):
    def __init__(self, layer: int, what: str = "pre-activation"):
        super().__init__(f"non-finite {what} in layer {layer}")
        self.layer = layer


def _sigmoid(x):
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def _sigmoid_deriv(x):
    s = _sigmoid(x)
    return s * (1.0 - s)


@dataclass(frozen=True)
class Activation:
    name: str
    fn: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    deriv: Callable[[np.ndarray], np.ndarray] = field(repr=False)

    def __call__(self, x):
        return self.fn(x)


SIGMOID = Activation("sigmoid", _sigmoid, _sigmoid_deriv)
IDENTITY = Activation("identity", lambda x: np.array(x, dtype=np.float64, copy=True), np.ones_like)
ACTIVATIONS = {a.name: a for a in (SIGMOID, IDENTITY)}


def get_activation(act: str | Activation) -> Activation:
    if isinstance(act, Activation):
        return act
    try:
        return ACTIVATIONS[act]
    except KeyError:
        raise KeyError(f"unknown activation {act!r}; choose from {sorted(ACTIVATIONS)}") from None


@dataclass
class Layer:
    weights: np.ndarray  # (I_out, I_in, N); weights[i, j] is w_ij
    biases: np.ndarray  # (I_out, N)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.weights.shape

    def copy(self) -> "Layer":
        return Layer(self.weights.copy(), self.biases.copy())


@dataclass
class Network:
    product: BilinearProduct
    topology: list[int]
    layers: list[Layer]
    hidden_activation: Activation = SIGMOID
    output_activation: Activation = SIGMOID

    def __post_init__(self):
        self.topology = [int(t) for t in self.topology]
        if len(self.layers) != len(self.topology) - 1:
            raise ValueError(f"{len(self.layers)} layers for topology {self.topology}")
        n = self.product.dim
        for l, layer in enumerate(self.layers):
            want = (self.topology[l + 1], self.topology[l], n)
            if layer.weights.shape != want or layer.biases.shape != (want[0], n):
                raise DimensionMismatchError(
                    f"layer {l}: weights {layer.weights.shape} / biases {layer.biases.shape}, "
                    f"expected {want} / {(want[0], n)}"
                )

    @property
    def dim(self) -> int:
        return self.product.dim

    @property
    def n_params(self) -> int:
        return sum(l.weights.size + l.biases.size for l in self.layers)

    def activation(self, l: int) -> Activation:
        """Activation applied by weight layer ``l`` (0-based)."""
        return self.output_activation if l == len(self.layers) - 1 else self.hidden_activation

    def copy(self) -> "Network":
        return Network(
            self.product,
            list(self.topology),
            [l.copy() for l in self.layers],
            self.hidden_activation,
            self.output_activation,
        )

    def parameters(self) -> list[np.ndarray]:
        out = []
        for l in self.layers:
            out += [l.weights, l.biases]
        return out


@dataclass
class Sample:
    input: np.ndarray  # (R, N)
    target: np.ndarray  # (G, N)

    def check(self, net: Network) -> None:
        if self.input.shape != (net.topology[0], net.dim):
            raise DimensionMismatchError(f"sample input {self.input.shape} != {(net.topology[0], net.dim)}")
        if self.target.shape != (net.topology[-1], net.dim):
            raise DimensionMismatchError(f"sample target {self.target.shape} != {(net.topology[-1], net.dim)}")
        if net.output_activation is SIGMOID and (self.target.min() < 0 or self.target.max() > 1):
            raise ValueError("sigmoid output needs targets in [0, 1]")


@dataclass
class ForwardTrace:
    """Per-layer pre-activations and activations; ``a[0]`` is the input."""

    z: list[np.ndarray]
    a: list[np.ndarray]

    @property
    def output(self) -> np.ndarray:
        return self.a[-1]


def init_network(
    topology: Sequence[int],
    product: BilinearProduct,
    hidden_activation: str | Activation = "sigmoid",
    output_activation: str | Activation = "sigmoid",
    seed: int = 0,
) -> Network:
    """Uniform init on [-r, r], r = sqrt(6 / (N * (fan_in + fan_out))); zero biases."""
    topology = [int(t) for t in topology]
    if len(topology) < 2 or min(topology) < 1:
        raise ValueError(f"bad topology {topology}")
    n = product.dim
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out in zip(topology[:-1], topology[1:]):
        r = np.sqrt(6.0 / (n * (fan_in + fan_out)))
        w = rng.uniform(-r, r, size=(fan_out, fan_in, n))
        layers.append(Layer(w, np.zeros((fan_out, n))))
    return Network(
        product,
        topology,
        layers,
        get_activation(hidden_activation),
        get_activation(output_activation),
    )


def layer_matrix(layer: Layer, product: BilinearProduct) -> np.ndarray:
    """Dense ``(I_out*N, I_in*N)`` matrix whose (i, j) block is ``[w_ij]``.

    With it a whole layer is one matmul on the flattened ``(width*N,)``
    activation vector.
    """
    i_out, i_in, n = layer.weights.shape
    reps = product.matrix_reps(layer.weights)  # (I_out, I_in, N, N)
    return reps.transpose(0, 2, 1, 3).reshape(i_out * n, i_in * n)


def forward(net: Network, x, matrices: list[np.ndarray] | None = None) -> ForwardTrace:
    """Feedforward pass for one sample ``(R, N)`` or a batch ``(B, R, N)``.

    ``matrices`` may pass precomputed :func:`layer_matrix` results.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    n = net.dim
    if x.ndim != 3 or x.shape[1:] != (net.topology[0], n):
        raise DimensionMismatchError(
            f"input shape {x.shape[-2:]} != {(net.topology[0], n)}"
        )
    b = x.shape[0]
    zs: list[np.ndarray] = []
    acts = [x]
    a = x
    for l, layer in enumerate(net.layers):
        m = matrices[l] if matrices is not None else layer_matrix(layer, net.product)
        with np.errstate(over="ignore", invalid="ignore"):
            z = (a.reshape(b, -1) @ m.T).reshape(b, layer.weights.shape[0], n) + layer.biases
        if not np.all(np.isfinite(z)):
            raise NumericOverflowError(l + 1)
        a = net.activation(l)(z)
        zs.append(z)
        acts.append(a)
    if single:
        zs = [z[0] for z in zs]
        acts = [a[0] for a in acts]
    return ForwardTrace(zs, acts)


def predict(net: Network, x, chunk: int = 4096) -> np.ndarray:
    """Network output for a batch, computed in chunks."""
    x = np.asarray(x, dtype=np.float64)
    mats = [layer_matrix(l, net.product) for l in net.layers]
    outs = [forward(net, x[s : s + chunk], mats).output for s in range(0, len(x), chunk)]
    return np.concatenate(outs) if outs else np.empty((0, net.topology[-1], net.dim))


def mse_loss(pred, target) -> float:
    """Mean of squared errors over every output scalar (and batch entry)."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionMismatchError(f"pred {pred.shape} vs target {target.shape}")
    return float(np.mean((pred - target) ** 2))
