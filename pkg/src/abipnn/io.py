"""Binary formats: ABTN tensors and ABIP network checkpoints (little-endian)."""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .bilinear import get_product
from .network import Activation, Layer, Network, SIGMOID

TENSOR_MAGIC = b"ABTN"
CHECKPOINT_MAGIC = b"ABIP"
CHECKPOINT_VERSION = 1


class FormatError(ValueError):
    pass


def _u32(f) -> int:
    raw = f.read(4)
    if len(raw) != 4:
        raise FormatError("unexpected end of file")
    return struct.unpack("<I", raw)[0]


def _f64(f, count: int) -> np.ndarray:
    raw = f.read(8 * count)
    if len(raw) != 8 * count:
        raise FormatError("unexpected end of file")
    return np.frombuffer(raw, dtype="<f8").astype(np.float64)


def write_tensor(path: str | Path, array) -> None:
    a = np.asarray(array, dtype="<f8")
    with open(path, "wb") as f:
        f.write(TENSOR_MAGIC)
        f.write(struct.pack("<I", a.ndim))
        f.write(struct.pack(f"<{a.ndim}I", *a.shape))
        f.write(a.tobytes(order="C"))


def read_tensor(path: str | Path) -> np.ndarray:
    with open(path, "rb") as f:
        if f.read(4) != TENSOR_MAGIC:
            raise FormatError(f"{path}: not an ABTN tensor file")
        rank = _u32(f)
        dims = tuple(_u32(f) for _ in range(rank))
        data = _f64(f, int(np.prod(dims, dtype=np.int64)))
        if f.read(1):
            raise FormatError(f"{path}: trailing bytes after tensor payload")
    return data.reshape(dims)


def save_checkpoint(path: str | Path, net: Network) -> None:
    name = net.product.name.encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<I", len(name)))
        f.write(name)
        f.write(struct.pack("<II", net.dim, len(net.layers)))
        f.write(struct.pack(f"<{len(net.topology)}I", *net.topology))
        for layer in net.layers:
            f.write(np.ascontiguousarray(layer.weights, dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(layer.biases, dtype="<f8").tobytes())


def load_checkpoint(
    path: str | Path,
    hidden_activation: Activation = SIGMOID,
    output_activation: Activation = SIGMOID,
) -> Network:
    """Read a checkpoint; the product is resolved by name from the registry.

    Activations are not stored in the format and must be supplied.
    """
    with open(path, "rb") as f:
        if f.read(4) != CHECKPOINT_MAGIC:
            raise FormatError(f"{path}: not an ABIP checkpoint")
        version = _u32(f)
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        name = f.read(_u32(f)).decode("utf-8")
        n = _u32(f)
        n_layers = _u32(f)
        topology = [_u32(f) for _ in range(n_layers + 1)]
        layers = []
        for fan_in, fan_out in zip(topology[:-1], topology[1:]):
            w = _f64(f, fan_out * fan_in * n).reshape(fan_out, fan_in, n)
            b = _f64(f, fan_out * n).reshape(fan_out, n)
            layers.append(Layer(w, b))
        if f.read(1):
            raise FormatError(f"{path}: trailing bytes after checkpoint payload")
    return Network(get_product(name, n), topology, layers, hidden_activation, output_activation)


def write_history(path: str | Path, history) -> None:
    """Per-epoch losses as CSV.  Wall-clock time is kept out so reruns are byte-identical."""
    with open(path, "w") as f:
        f.write("epoch,train_mse,val_mse\n")
        for epoch, tr, va, _ in history:
            f.write(f"{epoch},{tr!r},{va!r}\n")


def write_timing(path: str | Path, history) -> None:
    with open(path, "w") as f:
        f.write("epoch,elapsed_seconds\n")
        for epoch, _, _, elapsed in history:
            f.write(f"{epoch},{elapsed:.6f}\n")


def read_history(path: str | Path) -> np.ndarray:
    """Rows of (epoch, train_mse, val_mse)."""
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


def write_pgm(path: str | Path, band: np.ndarray) -> None:
    """Binary 8-bit greyscale PGM of one band (values clipped to [0, 255])."""
    img = np.clip(np.rint(band), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        f.write(img.tobytes())
