"""Polynomial-filter GNN forward maps and constructive stability constants."""

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .graph import format_float
from .numerics import matrix_polynomial, operator_norm

M_GRID_POINTS = 10_000


@dataclass(frozen=True)
class PolynomialFilter:
    coefficients: tuple

    def __post_init__(self):
        coeffs = tuple(float(a) for a in self.coefficients)
        if not coeffs:
            raise ValueError("a filter needs at least one coefficient")
        if not all(math.isfinite(a) for a in coeffs):
            raise ValueError("filter coefficients must be finite")
        object.__setattr__(self, "coefficients", coeffs)

    @property
    def degree(self) -> int:
        return len(self.coefficients) - 1

    @property
    def is_constant(self) -> bool:
        return all(a == 0.0 for a in self.coefficients[1:])

    def __call__(self, x):
        """Scalar (or elementwise array) evaluation."""
        out = np.zeros_like(np.asarray(x, dtype=float))
        for a in reversed(self.coefficients):
            out = out * x + a
        return out

    def matrix(self, S) -> np.ndarray:
        return matrix_polynomial(self.coefficients, getattr(S, "matrix", S))


@dataclass(frozen=True)
class Activation:
    tag: str
    lipschitz: float
    value_at_zero: float
    derivative_lipschitz: Optional[float]  # None: derivative not Lipschitz

    @property
    def smooth(self) -> bool:
        return self.derivative_lipschitz is not None

    def __call__(self, x: np.ndarray) -> np.ndarray:
        if self.tag == "identity":
            return x
        if self.tag == "tanh":
            return np.tanh(x)
        return np.maximum(x, 0.0)

    def derivative(self, x: np.ndarray) -> np.ndarray:
        if self.tag == "identity":
            return np.ones_like(x)
        if self.tag == "tanh":
            return 1.0 - np.tanh(x) ** 2
        return (x > 0).astype(float)


IDENTITY = Activation("identity", 1.0, 0.0, 0.0)
# sup |tanh''| = 4 / (3 sqrt 3)
TANH = Activation("tanh", 1.0, 0.0, 4.0 / (3.0 * math.sqrt(3.0)))
RELU = Activation("relu", 1.0, 0.0, None)
ACTIVATIONS = {a.tag: a for a in (IDENTITY, TANH, RELU)}


def activation(tag: str) -> Activation:
    try:
        return ACTIVATIONS[tag]
    except KeyError:
        raise ValueError(f"unknown activation {tag!r}; choose from {sorted(ACTIVATIONS)}") from None


@dataclass(frozen=True, eq=False)
class Layer:
    filter: PolynomialFilter
    weight: np.ndarray
    activation: Activation = IDENTITY

    def __post_init__(self):
        W = np.array(self.weight, dtype=float)
        if W.ndim != 2:
            raise ValueError("weight must be a matrix")
        if not np.all(np.isfinite(W)):
            raise ValueError("weight has non-finite entries")
        W.setflags(write=False)
        object.__setattr__(self, "weight", W)


@dataclass(frozen=True, eq=False)
class GnnModel:
    layers: tuple

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ValueError("model needs at least one layer")
        for k in range(1, len(layers)):
            if layers[k - 1].weight.shape[1] != layers[k].weight.shape[0]:
                raise ValueError(
                    f"layer {k} expects width {layers[k].weight.shape[0]}, "
                    f"previous layer produces {layers[k - 1].weight.shape[1]}"
                )
        object.__setattr__(self, "layers", layers)

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def weights(self) -> list:
        return [layer.weight for layer in self.layers]

    @property
    def dims(self) -> list:
        return [self.layers[0].weight.shape[0]] + [layer.weight.shape[1] for layer in self.layers]

    def with_weights(self, weights: Sequence[np.ndarray]) -> "GnnModel":
        if len(weights) != self.depth:
            raise ValueError("wrong number of weight matrices")
        return GnnModel(
            tuple(Layer(l.filter, W, l.activation) for l, W in zip(self.layers, weights))
        )

    @classmethod
    def build(cls, filters, weights, activations) -> "GnnModel":
        acts = [activation(a) if isinstance(a, str) else a for a in activations]
        filts = [f if isinstance(f, PolynomialFilter) else PolynomialFilter(f) for f in filters]
        return cls(tuple(Layer(f, W, a) for f, W, a in zip(filts, weights, acts, strict=True)))


def filter_matrices(model: GnnModel, S) -> list:
    """``p_k(S)`` for every layer, computing each distinct filter once."""
    cache = {}
    out = []
    for layer in model.layers:
        key = layer.filter.coefficients
        if key not in cache:
            cache[key] = layer.filter.matrix(S)
        out.append(cache[key])
    return out


def forward(model: GnnModel, S, X, *, filters=None) -> list:
    """Hidden states ``H^(0) = X, ..., H^(K)`` of the network on operator ``S``."""
    X = np.asarray(X, dtype=float)
    S = getattr(S, "matrix", S)
    if X.shape[0] != S.shape[0]:
        raise ValueError(f"features have {X.shape[0]} rows, operator is {S.shape[0]}x{S.shape[0]}")
    if X.shape[1] != model.dims[0]:
        raise ValueError(f"features have width {X.shape[1]}, model expects {model.dims[0]}")
    if filters is None:
        filters = filter_matrices(model, S)
    states = [X]
    H = X
    for layer, P in zip(model.layers, filters):
        H = layer.activation(P @ H @ layer.weight)
        states.append(H)
    return states


def filter_error(filt: PolynomialFilter, S_dense, S_sparse) -> tuple[float, float]:
    """Absolute and relative operator-norm gap between ``p(S_dense)`` and ``p(S_sparse)``."""
    P = filt.matrix(S_dense)
    absolute = operator_norm(P - filt.matrix(S_sparse))
    ref = operator_norm(P)
    if ref == 0.0:
        raise ZeroDivisionError("dense filter is zero; relative error undefined")
    return absolute, absolute / ref


def bound_Cp(filt, B_L: float) -> float:
    """``sum_{r>=1} |a_r| r B_L^r``."""
    coeffs = filt.coefficients if isinstance(filt, PolynomialFilter) else tuple(filt)
    return float(sum(abs(a) * r * B_L**r for r, a in enumerate(coeffs) if r >= 1))


def filter_sup_on_interval(filt: PolynomialFilter, B_L: float, points: int = M_GRID_POINTS) -> float:
    """``max |p(lambda)|`` over ``[0, B_L]`` by a dense grid (endpoints included)."""
    grid = np.linspace(0.0, B_L, points + 1)
    return float(np.max(np.abs(filt(grid))))


@dataclass(frozen=True)
class StabilityConstants:
    C_p: tuple
    C_rep: float
    C_gram_2: float
    C_gram_F: float
    M: tuple
    B_prime: tuple  # forward bounds B'_0..B'_K
    alpha: tuple
    beta: tuple
    B_L: float
    B_X: float
    B_W: float


def bound_Crep(model: GnnModel, B_X: float, B_L: float, n: int) -> StabilityConstants:
    """Unroll the layerwise perturbation recursion into explicit constants.

    With ``M_k = max_{[0, B_L]} |p_k|`` and ``B_W = max_k ||W_k||_2``::

        B'_{k+1} = L_k M_k B_W B'_k + |sigma_k(0)| sqrt(n d_{k+1})
        alpha_k  = L_k B_W C_{p_k} B'_k
        beta_k   = L_k B_W M_k
        D_{k+1}  = alpha_k + beta_k D_k,   D_0 = 0,   C_rep = D_K

    The Gram constants use ``||Z||_2 <= ||Z||_F <= B'_K`` for both the dense
    and the sparse embedding, so ``C_gram = 2 B'_K C_rep``.
    """
    B_W = max(float(np.linalg.norm(layer.weight, 2)) for layer in model.layers)
    dims = model.dims
    Cp, M, Bp, alpha, beta = [], [], [float(B_X)], [], []
    D = 0.0
    for k, layer in enumerate(model.layers):
        Lsig = layer.activation.lipschitz
        Cp.append(bound_Cp(layer.filter, B_L))
        M.append(filter_sup_on_interval(layer.filter, B_L))
        alpha.append(Lsig * B_W * Cp[k] * Bp[k])
        beta.append(Lsig * B_W * M[k])
        D = alpha[k] + beta[k] * D
        Bp.append(Lsig * M[k] * B_W * Bp[k] + abs(layer.activation.value_at_zero) * math.sqrt(n * dims[k + 1]))
    C_gram = 2.0 * Bp[-1] * D
    return StabilityConstants(
        C_p=tuple(Cp),
        C_rep=D,
        C_gram_2=C_gram,
        C_gram_F=C_gram,
        M=tuple(M),
        B_prime=tuple(Bp),
        alpha=tuple(alpha),
        beta=tuple(beta),
        B_L=float(B_L),
        B_X=float(B_X),
        B_W=B_W,
    )


def representation_error(Z_dense, Z_sparse) -> tuple[float, float]:
    Z_dense = np.asarray(Z_dense, dtype=float)
    absolute = float(np.linalg.norm(Z_dense - np.asarray(Z_sparse, dtype=float)))
    ref = float(np.linalg.norm(Z_dense))
    if ref == 0.0:
        raise ZeroDivisionError("dense representation is zero")
    return absolute, absolute / ref


def init_weights(dims: Sequence[int], scale: float = 1.0, seed: int = 0) -> list:
    """Gaussian weights with std ``scale / sqrt(fan_in)``."""
    rng = np.random.default_rng(seed)
    return [scale / math.sqrt(a) * rng.standard_normal((a, b)) for a, b in zip(dims[:-1], dims[1:])]


# ---------------------------------------------------------------------------
# serialization


def dumps_model(model: GnnModel) -> str:
    lines = [f"layers = {model.depth}"]
    for k, layer in enumerate(model.layers):
        rows, cols = layer.weight.shape
        lines.append(f"[layer {k}]")
        lines.append("filter = " + " ".join(format_float(a) for a in layer.filter.coefficients))
        lines.append(f"activation = {layer.activation.tag}")
        lines.append(f"shape = {rows} {cols}")
        lines.extend(" ".join(format_float(x) for x in row) for row in layer.weight)
    return "\n".join(lines) + "\n"


def loads_model(text: str) -> GnnModel:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    pos = 0

    def take_kv(key):
        nonlocal pos
        k, _, v = lines[pos].partition("=")
        if k.strip() != key:
            raise ValueError(f"expected '{key} = ...', got {lines[pos]!r}")
        pos += 1
        return v.strip()

    depth = int(take_kv("layers"))
    layers = []
    for k in range(depth):
        if lines[pos] != f"[layer {k}]":
            raise ValueError(f"expected '[layer {k}]', got {lines[pos]!r}")
        pos += 1
        coeffs = [float(x) for x in take_kv("filter").split()]
        act = activation(take_kv("activation"))
        rows, cols = (int(x) for x in take_kv("shape").split())
        W = np.array([[float(x) for x in lines[pos + i].split()] for i in range(rows)]).reshape(rows, cols)
        pos += rows
        layers.append(Layer(PolynomialFilter(coeffs), W, act))
    return GnnModel(tuple(layers))


def write_model(model: GnnModel, path) -> None:
    Path(path).write_text(dumps_model(model), encoding="utf-8")


def read_model(path) -> GnnModel:
    return loads_model(Path(path).read_text(encoding="utf-8"))
