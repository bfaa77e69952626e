"""Backpropagation, Adam and the minibatch training loop.

All gradients are of the per-sample MSE (mean over the G*N output scalars);
a minibatch gradient is the mean of per-sample gradients.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .bilinear import BilinearProduct, DimensionMismatchError
from .network import (
    Activation,
    ForwardTrace,
    Layer,
    Network,
    forward,
    layer_matrix,
    mse_loss,
    predict,
)

log = logging.getLogger(__name__)


@dataclass
class GradientSet:
    d_weights: list[np.ndarray]
    d_biases: list[np.ndarray]
    deltas: list[np.ndarray]

    def flat(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.d_weights, self.d_biases):
            out += [w, b]
        return out


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_network(cls, net: Network, lr: float = 5e-4, **kw) -> "AdamState":
        params = net.parameters()
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], lr=lr, **kw)


@dataclass
class TrainConfig:
    max_epochs: int = 3000
    patience: int = 100
    minibatch_size: int = 128
    seed: int = 0
    validation_fraction: float = 0.1
    lr: float = 5e-4

    def __post_init__(self):
        if self.minibatch_size < 1:
            raise ValueError("minibatch_size must be >= 1")
        if self.patience > self.max_epochs:
            raise ValueError("patience must not exceed max_epochs")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in [0, 1)")


class TrainingDiverged(FloatingPointError):
    def __init__(self, msg: str, history: list[tuple]):
        super().__init__(msg)
        self.history = history


# --------------------------------------------------------------------------
# per-layer backpropagation steps
# --------------------------------------------------------------------------

def output_delta(trace: ForwardTrace, target, net: Network) -> np.ndarray:
    """Local gradient at the output layer: dC/dy * phi'(z), with C the MSE."""
    y = trace.output
    target = np.asarray(target, dtype=np.float64)
    if target.shape != y.shape:
        raise DimensionMismatchError(f"target {target.shape} vs output {y.shape}")
    g, n = y.shape[-2:]
    dc_dy = 2.0 * (y - target) / (g * n)
    return dc_dy * net.output_activation.deriv(trace.z[-1])


def backprop_delta(
    delta_next,
    layer_next: Layer,
    z_cur,
    act: Activation,
    prod: BilinearProduct,
    matrix: np.ndarray | None = None,
) -> np.ndarray:
    """``d_i = sum_k d_k [w_ki] diag(phi'(z_i))`` for every neuron i.

    Accepts ``(K, N)`` or batched ``(B, K, N)`` local gradients.
    """
    delta_next = np.asarray(delta_next, dtype=np.float64)
    z_cur = np.asarray(z_cur, dtype=np.float64)
    k, i, n = layer_next.weights.shape
    if delta_next.shape[-2:] != (k, n) or z_cur.shape[-2:] != (i, n):
        raise DimensionMismatchError(
            f"delta {delta_next.shape} / z {z_cur.shape} do not fit layer {layer_next.weights.shape}"
        )
    if matrix is None:
        matrix = layer_matrix(layer_next, prod)
    lead = delta_next.shape[:-2]
    # row vector d_k times [w_ki], summed over k: one matmul on flattened blocks
    back = (delta_next.reshape(-1, k * n) @ matrix).reshape(*lead, i, n)
    return back * act.deriv(z_cur)


def weight_grad(delta, a_prev, prod: BilinearProduct) -> np.ndarray:
    """``dC/dw_ij = d_i [a_j]^dagger`` (row vector times transmuted rep)."""
    delta = np.asarray(delta, dtype=np.float64)
    a_prev = np.asarray(a_prev, dtype=np.float64)
    if delta.shape[-1] != prod.dim or a_prev.shape[-1] != prod.dim:
        raise DimensionMismatchError(f"delta {delta.shape} / activation {a_prev.shape} vs N={prod.dim}")
    return np.einsum("...k,...km->...m", delta, prod.transmuted_reps(a_prev))


def _layer_weight_grad(delta, a_prev, prod: BilinearProduct) -> np.ndarray:
    """Batch sum of ``d_i [a_j]^dagger`` for all (i, j): ``(B,I,N), (B,J,N) -> (I,J,N)``."""
    t = prod.transmuted_reps(a_prev)  # (B, J, N_k, N_m)
    return np.tensordot(delta, t, axes=([0, 2], [0, 2]))


def backward(net: Network, trace: ForwardTrace, target, matrices=None, loss_scale: float = 1.0) -> GradientSet:
    """Gradients of ``loss_scale`` times the batch-mean MSE.

    ``trace`` may hold one sample or a batch.
    """
    target = np.asarray(target, dtype=np.float64)
    single = trace.output.ndim == 2
    if single:
        trace = ForwardTrace([z[None] for z in trace.z], [a[None] for a in trace.a])
        target = target[None]
    b = trace.output.shape[0]
    n_layers = len(net.layers)
    if matrices is None:
        matrices = [layer_matrix(l, net.product) for l in net.layers]

    d_w: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    deltas: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    d = output_delta(trace, target, net)
    if loss_scale != 1.0:
        d = d * loss_scale
    for l in range(n_layers - 1, -1, -1):
        d_w[l] = _layer_weight_grad(d, trace.a[l], net.product) / b
        deltas[l] = d.sum(axis=0) / b
        if l > 0:
            d = backprop_delta(d, net.layers[l], trace.z[l - 1], net.activation(l - 1), net.product, matrices[l])
    # bias gradient is exactly the local gradient
    return GradientSet(d_w, [x.copy() for x in deltas], deltas)


# --------------------------------------------------------------------------
# optimizer
# --------------------------------------------------------------------------

def adam_step(net: Network, grads: GradientSet, state: AdamState) -> tuple[Network, AdamState]:
    """In-place bias-corrected Adam update of every weight and bias."""
    params = net.parameters()
    flat = grads.flat()
    if len(flat) != len(params) or len(state.m) != len(params):
        raise DimensionMismatchError("gradient/state does not match network parameters")
    for idx, (p, g) in enumerate(zip(params, flat)):
        if g.shape != p.shape:
            raise DimensionMismatchError(f"layer {idx // 2 + 1}: gradient {g.shape} vs parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            kind = "weight" if idx % 2 == 0 else "bias"
            raise FloatingPointError(f"non-finite {kind} gradient in layer {idx // 2 + 1}")
    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    # overflow here surfaces as a non-finite forward pass on the next batch
    with np.errstate(over="ignore", invalid="ignore"):
        for p, g, m, v in zip(params, flat, state.m, state.v):
            m *= state.beta1
            m += (1.0 - state.beta1) * g
            v *= state.beta2
            v += (1.0 - state.beta2) * (g * g)
            p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return net, state


# --------------------------------------------------------------------------
# training loop
# --------------------------------------------------------------------------

@dataclass
class TrainResult:
    net: Network
    history: list[tuple[int, float, float, float]] = field(default_factory=list)
    best_epoch: int = 0

    @property
    def epochs_run(self) -> int:
        return len(self.history)


def dataset_mse(net: Network, inputs, targets) -> float:
    return mse_loss(predict(net, inputs), targets)


def train(net: Network, inputs, targets, config: TrainConfig, *, validation=None) -> TrainResult:
    """Minibatch Adam with early stopping on validation MSE.

    ``validation`` is an optional ``(inputs, targets)`` pair; without it a
    ``validation_fraction`` share of the data is held out (or, if that share
    rounds to zero samples, the training set doubles as validation set).
    History rows are ``(epoch, train_mse, val_mse, elapsed_seconds)``.
    The returned network carries the best-validation parameters.
    """
    x = np.asarray(inputs, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if len(x) == 0:
        raise ValueError("empty dataset")
    if len(x) != len(y):
        raise DimensionMismatchError(f"{len(x)} inputs vs {len(y)} targets")
    rng = np.random.default_rng(config.seed)
    if validation is None:
        n_val = int(round(config.validation_fraction * len(x)))
        n_val = min(n_val, len(x) - 1)
        order = rng.permutation(len(x))
        xv, yv = x[order[:n_val]], y[order[:n_val]]
        x, y = x[order[n_val:]], y[order[n_val:]]
        if n_val == 0:
            xv, yv = x, y
    else:
        xv, yv = (np.asarray(a, dtype=np.float64) for a in validation)

    net = net.copy()
    state = AdamState.for_network(net, lr=config.lr)
    best = net.copy()
    best_val = np.inf
    best_epoch = 0
    since_best = 0
    history: list[tuple[int, float, float, float]] = []
    t0 = time.perf_counter()
    bs = config.minibatch_size
    for epoch in range(1, config.max_epochs + 1):
        perm = rng.permutation(len(x))
        for s in range(0, len(x), bs):
            idx = perm[s : s + bs]
            mats = [layer_matrix(l, net.product) for l in net.layers]
            try:
                trace = forward(net, x[idx], mats)
                grads = backward(net, trace, y[idx], mats)
                adam_step(net, grads, state)
            except FloatingPointError as e:
                raise TrainingDiverged(f"epoch {epoch}: {e}", history) from e
        try:
            tr = dataset_mse(net, x, y)
            va = dataset_mse(net, xv, yv)
        except FloatingPointError as e:
            raise TrainingDiverged(f"epoch {epoch}: {e}", history) from e
        if not (np.isfinite(tr) and np.isfinite(va)):
            raise TrainingDiverged(f"epoch {epoch}: non-finite loss", history)
        history.append((epoch, tr, va, time.perf_counter() - t0))
        if va < best_val:
            best_val, best_epoch, since_best = va, epoch, 0
            best = net.copy()
        else:
            since_best += 1
        if epoch % 50 == 0:
            log.info("epoch %d train %.6g val %.6g", epoch, tr, va)
        if since_best >= config.patience:
            break
    return TrainResult(best, history, best_epoch)


# --------------------------------------------------------------------------
# finite-difference verification
# --------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_err: float
    layer: int  # 1-based weight layer
    kind: str  # "weight" | "bias"
    index: tuple[int, ...]

    def as_dict(self) -> dict:
        return {"max_rel_err": self.max_rel_err, "layer": self.layer, "kind": self.kind, "index": list(self.index)}


def grad_check(net: Network, x, target, eps: float = 1e-5, grads: GradientSet | None = None) -> GradCheckReport:
    """Compare analytic gradients with central differences on every parameter.

    ``grads`` overrides the analytic gradients (used to test the checker).
    """
    x = np.asarray(x, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if net.n_params >= 10_000:
        raise ValueError(f"network too large for finite differences ({net.n_params} parameters)")
    if grads is None:
        grads = backward(net, forward(net, x), target)
    probe = net.copy()

    def cost() -> float:
        return mse_loss(forward(probe, x).output, target)

    worst = GradCheckReport(0.0, 1, "weight", (0, 0, 0))
    for l, (layer, gw, gb) in enumerate(zip(probe.layers, grads.d_weights, grads.d_biases)):
        for kind, p, g in (("weight", layer.weights, gw), ("bias", layer.biases, gb)):
            for index in np.ndindex(p.shape):
                old = p[index]
                p[index] = old + eps
                up = cost()
                p[index] = old - eps
                down = cost()
                p[index] = old
                numeric = (up - down) / (2 * eps)
                analytic = g[index]
                rel = abs(analytic - numeric) / max(1e-8, abs(analytic) + abs(numeric))
                if rel > worst.max_rel_err:
                    worst = GradCheckReport(float(rel), l + 1, kind, tuple(int(i) for i in index))
    return worst
