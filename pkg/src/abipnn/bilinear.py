"""Bilinear products on R^N defined by structure tensors.

A product is fully described by ``coeffs[m, n, k]``, the k-th component of
``e_m * e_n``.  Every other quantity (the product itself, the matrix and
transmuted representations) is a contraction of that tensor, so builtin and
user-supplied products share a single evaluation path.
"""
from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "BUILTIN_KINDS",
    "BilinearProduct",
    "DimensionMismatchError",
    "StructureTensor",
    "builtin_product",
    "custom_product",
    "get_product",
    "load_product_json",
    "matrix_rep",
    "product",
    "registered_products",
    "transmuted_rep",
]


class DimensionMismatchError(ValueError):
    pass


# Fixed dimension per kind; None means any N >= 1.
BUILTIN_KINDS: dict[str, int | None] = {
    "scalar": 1,
    "circular": None,
    "skew_circular": None,
    "reverse_time_circular": None,
    "vector3": 3,
    "quaternion": 4,
    "seven_dim_vector": 7,
}


@dataclass(frozen=True)
class StructureTensor:
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=np.float64)
        if c.ndim != 3 or not (c.shape[0] == c.shape[1] == c.shape[2]) or c.shape[0] < 1:
            raise DimensionMismatchError(f"structure tensor must be N x N x N with N >= 1, got shape {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ValueError("structure tensor has non-finite coefficients")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def dim(self) -> int:
        return self.coeffs.shape[0]


@dataclass(frozen=True, eq=False)
class BilinearProduct:
    """A named bilinear map R^N x R^N -> R^N.

    The ``*_reps`` methods accept arbitrary leading batch axes; the vector
    is always the last axis.
    """

    name: str
    structure: StructureTensor

    @property
    def dim(self) -> int:
        return self.structure.dim

    @property
    def coeffs(self) -> np.ndarray:
        return self.structure.coeffs

    def _check(self, *vs: np.ndarray) -> None:
        for v in vs:
            if v.shape[-1:] != (self.dim,):
                raise DimensionMismatchError(
                    f"product {self.name!r} has N={self.dim}, got vector shape {v.shape}"
                )

    def __call__(self, p, q) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)
        q = np.asarray(q, dtype=np.float64)
        self._check(p, q)
        return np.einsum("...m,...n,mnk->...k", p, q, self.coeffs)

    def matrix_reps(self, p) -> np.ndarray:
        """``[p]``: column n is ``p * e_n``, so ``[p] @ q == p * q``."""
        p = np.asarray(p, dtype=np.float64)
        self._check(p)
        return np.swapaxes(np.tensordot(p, self.coeffs, axes=([-1], [0])), -1, -2)

    def transmuted_reps(self, q) -> np.ndarray:
        """``[q]^dagger``: column m is ``e_m * q``, so ``[q]^dagger @ p == p * q``."""
        q = np.asarray(q, dtype=np.float64)
        self._check(q)
        return np.swapaxes(np.tensordot(q, self.coeffs, axes=([-1], [1])), -1, -2)

    def commutativity(self) -> str:
        """Classify on basis pairs: commutative, anticommutative or noncommutative."""
        c = self.coeffs
        ct = c.transpose(1, 0, 2)
        if np.array_equal(c, ct):
            return "commutative"
        if np.array_equal(c, -ct):
            return "anticommutative"
        return "noncommutative"

    def identity_element(self) -> int | None:
        """Index n (0-based) of a basis vector acting as two-sided identity, if any."""
        eye = np.eye(self.dim)
        for n in range(self.dim):
            if np.array_equal(self.matrix_reps(eye[n]), eye) and np.array_equal(
                self.transmuted_reps(eye[n]), eye
            ):
                return n
        return None


def product(p, q, prod: BilinearProduct) -> np.ndarray:
    return prod(p, q)


def matrix_rep(p, prod: BilinearProduct) -> np.ndarray:
    return prod.matrix_reps(p)


def transmuted_rep(q, prod: BilinearProduct) -> np.ndarray:
    return prod.transmuted_reps(q)


# --------------------------------------------------------------------------
# builders
# --------------------------------------------------------------------------

def _circulant_coeffs(n: int, sign_on_wrap: float = 1.0) -> np.ndarray:
    c = np.zeros((n, n, n))
    for m in range(n):
        for q in range(n):
            s = m + q
            c[m, q, s % n] = 1.0 if s < n else sign_on_wrap
    return c


def _reverse_time_coeffs(n: int) -> np.ndarray:
    # circulant matrix flipped upside down: [w][r, c] = w[(N-1-r-c) mod N]
    c = np.zeros((n, n, n))
    for m in range(n):
        for q in range(n):
            c[m, q, (n - 1 - m - q) % n] = 1.0
    return c


def _from_matrix_table(table: list[list[int]]) -> np.ndarray:
    """Build coeffs from a signed index table of ``[w]``.

    ``table[r][c] = +-(m+1)`` means entry (r, c) of ``[w]`` is ``+-w_m``;
    0 marks a structural zero.
    """
    n = len(table)
    c = np.zeros((n, n, n))
    for r, row in enumerate(table):
        for col, t in enumerate(row):
            if t:
                # [w][r, col] = sum_m w_m coeffs[m, col, r]
                c[abs(t) - 1, col, r] = float(np.sign(t))
    return c


_VECTOR3 = [
    [0, -3, 2],
    [3, 0, -1],
    [-2, 1, 0],
]

_QUATERNION = [
    [1, -2, -3, -4],
    [2, 1, -4, 3],
    [3, 4, 1, -2],
    [4, -3, 2, 1],
]

# Sign table of the seven-dimensional vector product, used verbatim.
_SEVEN_DIM = [
    [0, -4, -7, 2, -6, 5, 3],
    [4, 0, -5, -1, 3, -7, 6],
    [7, 5, 0, -6, -2, 4, -1],
    [-2, 1, 6, 0, -7, -3, 5],
    [6, -3, 2, 7, 0, -1, -4],
    [-5, 7, -4, 3, 1, 0, -2],
    [-3, -6, 1, -5, 4, 2, 0],
]


def _builtin_coeffs(kind: str, n: int) -> np.ndarray:
    if kind == "scalar":
        return np.ones((1, 1, 1))
    if kind == "circular":
        return _circulant_coeffs(n)
    if kind == "skew_circular":
        return _circulant_coeffs(n, sign_on_wrap=-1.0)
    if kind == "reverse_time_circular":
        return _reverse_time_coeffs(n)
    if kind == "vector3":
        return _from_matrix_table(_VECTOR3)
    if kind == "quaternion":
        return _from_matrix_table(_QUATERNION)
    if kind == "seven_dim_vector":
        return _from_matrix_table(_SEVEN_DIM)
    raise KeyError(kind)


# --------------------------------------------------------------------------
# registry
# --------------------------------------------------------------------------

_REGISTRY: dict[str, BilinearProduct] = {}
_LOCK = threading.Lock()


def _builtin_name(kind: str, dim: int) -> str:
    return kind if BUILTIN_KINDS[kind] is not None else f"{kind}_{dim}"


def builtin_product(kind: str, dim: int | None = None) -> BilinearProduct:
    """Return the builtin product ``kind`` (cached per process).

    Convolution kinds need ``dim``; fixed-size kinds accept ``dim`` only if
    it matches.
    """
    if kind not in BUILTIN_KINDS:
        raise KeyError(f"unknown builtin product {kind!r}; choose from {sorted(BUILTIN_KINDS)}")
    fixed = BUILTIN_KINDS[kind]
    if fixed is not None:
        if dim is not None and dim != fixed:
            raise DimensionMismatchError(f"{kind} is defined only for N={fixed}, got N={dim}")
        dim = fixed
    elif dim is None or dim < 1:
        raise DimensionMismatchError(f"{kind} needs a dimension N >= 1, got {dim}")
    name = _builtin_name(kind, dim)
    with _LOCK:
        prod = _REGISTRY.get(name)
        if prod is None:
            prod = BilinearProduct(name, StructureTensor(_builtin_coeffs(kind, dim)))
            _REGISTRY[name] = prod
    return prod


def custom_product(name: str, coeffs) -> BilinearProduct:
    """Register a product; re-registering a name with identical coefficients returns the existing one."""
    st = StructureTensor(coeffs)
    with _LOCK:
        existing = _REGISTRY.get(name)
        if existing is not None and np.array_equal(existing.coeffs, st.coeffs) and parse_builtin_name(name) is None:
            return existing
        if existing is not None or parse_builtin_name(name) is not None:
            raise ValueError(f"product name {name!r} is already registered")
        prod = BilinearProduct(name, st)
        _REGISTRY[name] = prod
    return prod


def parse_builtin_name(name: str) -> tuple[str, int | None] | None:
    """Split a builtin registry name into ``(kind, N)``; ``None`` for other names."""
    if name in BUILTIN_KINDS and BUILTIN_KINDS[name] is not None:
        return name, None
    kind, _, tail = name.rpartition("_")
    if kind in BUILTIN_KINDS and BUILTIN_KINDS[kind] is None and tail.isdigit():
        return kind, int(tail)
    return None


def get_product(name: str, dim: int | None = None) -> BilinearProduct:
    """Look up a product by registry name, or by builtin kind plus ``dim``."""
    with _LOCK:
        prod = _REGISTRY.get(name)
    if prod is not None:
        if dim is not None and dim != prod.dim:
            raise DimensionMismatchError(f"product {name!r} has N={prod.dim}, requested N={dim}")
        return prod
    if name in BUILTIN_KINDS:
        return builtin_product(name, dim)
    parsed = parse_builtin_name(name)
    if parsed is None:
        raise KeyError(f"no product named {name!r}")
    kind, n = parsed
    if dim is not None and n is not None and dim != n:
        raise DimensionMismatchError(f"product {name!r} has N={n}, requested N={dim}")
    return builtin_product(kind, n if n is not None else dim)


def registered_products() -> list[BilinearProduct]:
    with _LOCK:
        return list(_REGISTRY.values())


def load_product_json(path: str | Path) -> BilinearProduct:
    """Register a product from ``{"name": str, "dim": int, "coeffs": [N][N][N]}``."""
    spec = json.loads(Path(path).read_text())
    coeffs = np.asarray(spec["coeffs"], dtype=np.float64)
    if coeffs.shape != (spec["dim"],) * 3:
        raise DimensionMismatchError(
            f"{path}: coeffs shape {coeffs.shape} does not match dim={spec['dim']}"
        )
    return custom_product(spec["name"], coeffs)
