"""Weighted graphs, Laplacian operators, synthetic generators and edge-list I/O."""

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .numerics import operator_norm
from .seeding import STAGE_FEATURES, STAGE_RETRY, derive_seed

MAX_GENERATION_RETRIES = 20
# 4.0 separates 20-dimensional clusters completely, so every k-NN graph splits
DEFAULT_CENTER_SCALE = 1.0

COMBINATORIAL = "combinatorial"
NORMALIZED = "normalized"
SCALED = "scaled"
OPERATOR_KINDS = (COMBINATORIAL, NORMALIZED, SCALED)


class GenerationError(RuntimeError):
    """A generator could not produce a connected graph."""

    def __init__(self, message: str, seed: int):
        super().__init__(f"{message} (seed={seed})")
        self.seed = seed


class GraphFormatError(ValueError):
    """Malformed graph file."""

    def __init__(self, message: str, lineno: Optional[int] = None):
        where = f"line {lineno}: " if lineno is not None else ""
        super().__init__(where + message)
        self.lineno = lineno


@dataclass(frozen=True, eq=False)
class WeightedGraph:
    """Undirected weighted graph on nodes ``0..n-1``.

    Edges are stored as parallel arrays sorted lexicographically by
    ``(u, v)`` with ``u < v``.
    """

    n: int
    u: np.ndarray
    v: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.int64).reshape(-1)
        v = np.asarray(self.v, dtype=np.int64).reshape(-1)
        w = np.asarray(self.w, dtype=float).reshape(-1)
        if not (u.shape == v.shape == w.shape):
            raise ValueError("edge arrays differ in length")
        if self.n < 0:
            raise ValueError("negative node count")
        if u.size:
            if np.any(u == v):
                raise ValueError("self-loop")
            if np.any(u > v):
                raise ValueError("edges must satisfy u < v")
            if u.min() < 0 or v.max() >= self.n:
                raise ValueError("endpoint out of range")
            if not np.all(np.isfinite(w)) or np.any(w <= 0):
                raise ValueError("weights must be finite and strictly positive")
            order = np.lexsort((v, u))
            u, v, w = u[order], v[order], w[order]
            if np.any((np.diff(u) == 0) & (np.diff(v) == 0)):
                raise ValueError("duplicate edge")
        for name, arr in (("u", u), ("v", v), ("w", w)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[tuple[int, int, float]]) -> "WeightedGraph":
        """Build from ``(u, v, w)`` triples; endpoints may come in either order."""
        edges = list(edges)
        if not edges:
            return cls(n, np.zeros(0, int), np.zeros(0, int), np.zeros(0))
        a = np.array([e[0] for e in edges], dtype=np.int64)
        b = np.array([e[1] for e in edges], dtype=np.int64)
        w = np.array([e[2] for e in edges], dtype=float)
        return cls(n, np.minimum(a, b), np.maximum(a, b), w)

    @property
    def num_edges(self) -> int:
        return int(self.w.size)

    @property
    def edges(self) -> list[tuple[int, int, float]]:
        return [(int(a), int(b), float(c)) for a, b, c in zip(self.u, self.v, self.w)]

    def adjacency(self) -> np.ndarray:
        W = np.zeros((self.n, self.n))
        W[self.u, self.v] = self.w
        W[self.v, self.u] = self.w
        return W

    def is_connected(self) -> bool:
        if self.n <= 1:
            return True
        A = coo_matrix((self.w, (self.u, self.v)), shape=(self.n, self.n))
        ncomp, _ = connected_components(A, directed=False)
        return ncomp == 1

    def same_structure(self, other: "WeightedGraph") -> bool:
        """Bit-exact equality of node count, endpoints and weights."""
        return (
            self.n == other.n
            and np.array_equal(self.u, other.u)
            and np.array_equal(self.v, other.v)
            and np.array_equal(self.w, other.w)
        )

    def __eq__(self, other):
        if not isinstance(other, WeightedGraph):
            return NotImplemented
        return self.same_structure(other)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class GraphOperator:
    """Symmetric PSD graph operator with its kind and recorded scale."""

    matrix: np.ndarray
    kind: str = COMBINATORIAL
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in OPERATOR_KINDS:
            raise ValueError(f"unknown operator kind {self.kind!r}")
        M = np.asarray(self.matrix, dtype=float)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise ValueError("operator must be square")
        if np.max(np.abs(M - M.T), initial=0.0) > 1e-12:
            raise ValueError("operator is not symmetric")
        M.setflags(write=False)
        object.__setattr__(self, "matrix", M)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def check_invariants(self) -> None:
        """Assert PSD-ness and, for combinatorial kind, zero row sums."""
        w = np.linalg.eigvalsh(self.matrix)
        norm = max(abs(w[0]), abs(w[-1])) if w.size else 0.0
        if w.size and w[0] < -1e-9 * max(norm, 1.0):
            raise ValueError(f"operator not PSD (min eigenvalue {w[0]:.3e})")
        if self.kind == COMBINATORIAL:
            if np.max(np.abs(self.matrix.sum(axis=1)), initial=0.0) > 1e-9:
                raise ValueError("combinatorial Laplacian rows must sum to zero")


@dataclass(frozen=True, eq=False)
class LabeledFeatures:
    X: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if X.ndim != 2 or X.shape[0] != labels.size:
            raise ValueError("features and labels disagree in node count")
        if labels.size and labels.min() < 0:
            raise ValueError("negative class label")
        counts = np.bincount(labels) if labels.size else np.zeros(0, int)
        if np.any(counts == 0):
            raise ValueError("every class in 0..C-1 must be nonempty")
        X.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "labels", labels)

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size else 0

    @property
    def class_sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def class_sets(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.labels == c) for c in range(self.num_classes)]


# ---------------------------------------------------------------------------
# generators


def _retry_connected(build, seed: int, what: str):
    """Call ``build(seed)``, then derived seeds, until the graph is connected."""
    seeds = [seed] + [derive_seed(seed, a, 0, STAGE_RETRY) for a in range(1, MAX_GENERATION_RETRIES + 1)]
    for s in seeds:
        out = build(s)
        g = out[0] if isinstance(out, tuple) else out
        if g.is_connected():
            return out
    raise GenerationError(f"{what} disconnected after {MAX_GENERATION_RETRIES} retries", seed)


def generate_sbm(
    block_sizes: Sequence[int],
    p_in: float,
    p_out: float,
    weight_low: float = 0.5,
    weight_high: float = 1.5,
    seed: int = 0,
) -> WeightedGraph:
    """Weighted stochastic block model with uniform edge weights.

    Each intra-block pair is joined with probability ``p_in`` and each
    inter-block pair with ``p_out``; weights are uniform on
    ``[weight_low, weight_high]``.  Disconnected samples are redrawn from
    derived seeds.
    """
    block_sizes = [int(b) for b in block_sizes]
    if not block_sizes or min(block_sizes) < 1:
        raise ValueError("block sizes must be positive")
    for p in (p_in, p_out):
        if not 0.0 < p <= 1.0:
            raise ValueError("probabilities must lie in (0, 1]")
    if not 0.0 < weight_low <= weight_high:
        raise ValueError("need 0 < weight_low <= weight_high")

    n = sum(block_sizes)
    block = np.repeat(np.arange(len(block_sizes)), block_sizes)
    iu, iv = np.triu_indices(n, k=1)
    prob = np.where(block[iu] == block[iv], p_in, p_out)

    def build(s):
        rng = np.random.default_rng(s)
        keep = rng.random(iu.size) < prob
        w = rng.uniform(weight_low, weight_high, size=int(keep.sum()))
        return WeightedGraph(n, iu[keep], iv[keep], w)

    return _retry_connected(build, seed, "SBM")


def class_features(
    labels,
    dim: int,
    center_scale: float = DEFAULT_CENTER_SCALE,
    noise_std: float = 1.0,
    seed: int = 0,
    centers=None,
) -> LabeledFeatures:
    """Class mean plus isotropic Gaussian noise.

    Class means are ``center_scale * N(0, I)`` unless ``centers`` (C, dim)
    is given explicitly.
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    labels = np.asarray(labels, dtype=np.int64)
    C = int(labels.max()) + 1
    rng = np.random.default_rng(seed)
    if centers is None:
        means = center_scale * rng.standard_normal((C, dim))
    else:
        means = np.asarray(centers, dtype=float).reshape(C, dim)
    X = means[labels] + noise_std * rng.standard_normal((labels.size, dim))
    return LabeledFeatures(X, labels)


def knn_indices(X: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` Euclidean nearest neighbours (self excluded).

    Ties are broken by ascending node index.
    """
    X = np.asarray(X, dtype=float)
    sq = np.sum(X * X, axis=1)
    D = sq[:, None] + sq[None, :] - 2.0 * X @ X.T
    np.fill_diagonal(D, np.inf)
    return np.argsort(D, axis=1, kind="stable")[:, :k]


def generate_geometric_knn(
    n_per_class: int,
    num_classes: int,
    feat_dim: int,
    k: int,
    seed: int = 0,
    center_scale: float = DEFAULT_CENTER_SCALE,
    noise_std: float = 1.0,
) -> tuple[WeightedGraph, LabeledFeatures]:
    """Symmetrised k-NN graph over Gaussian class clusters.

    Weights follow the Gaussian kernel ``exp(-d^2 / (2 sigma^2))`` with
    ``sigma`` the median distance over the retained neighbour pairs.
    """
    n = n_per_class * num_classes
    if not 1 <= k < n:
        raise ValueError(f"need 1 <= k < n (k={k}, n={n})")
    labels = np.repeat(np.arange(num_classes), n_per_class)

    def build(s):
        feats = class_features(
            labels, feat_dim, center_scale, noise_std, seed=derive_seed(s, 0, 0, STAGE_FEATURES)
        )
        return knn_graph(feats.X, k), feats

    return _retry_connected(build, seed, "geometric k-NN graph")


def knn_graph(X: np.ndarray, k: int) -> WeightedGraph:
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    nbrs = knn_indices(X, k)
    rows = np.repeat(np.arange(n), k)
    cols = nbrs.reshape(-1)
    a = np.minimum(rows, cols)
    b = np.maximum(rows, cols)
    pairs = np.unique(a * n + b)
    a, b = pairs // n, pairs % n
    dist = np.linalg.norm(X[a] - X[b], axis=1)
    sigma = float(np.median(dist))
    if sigma <= 0:
        raise ValueError("degenerate features: median neighbour distance is zero")
    w = np.exp(-(dist**2) / (2.0 * sigma**2))
    return WeightedGraph(n, a, b, w)


# ---------------------------------------------------------------------------
# operators


def laplacian(g: WeightedGraph, kind: str = COMBINATORIAL) -> GraphOperator:
    W = g.adjacency()
    deg = W.sum(axis=1)
    if kind == COMBINATORIAL:
        return GraphOperator(np.diag(deg) - W, COMBINATORIAL)
    if kind == NORMALIZED:
        inv_sqrt = np.zeros_like(deg)
        nz = deg > 0
        inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
        M = np.diag(nz.astype(float)) - inv_sqrt[:, None] * W * inv_sqrt[None, :]
        return GraphOperator(0.5 * (M + M.T), NORMALIZED)
    raise ValueError(f"unknown Laplacian kind {kind!r}")


def scale_operator(L: GraphOperator, scale: Optional[float] = None) -> GraphOperator:
    """Divide ``L`` by ``scale`` (default: its own spectral norm).

    Pass the dense operator's recorded ``scale`` to put a sparsified
    Laplacian on the same footing as the dense one.
    """
    if scale is None:
        scale = operator_norm(L.matrix)
        if scale == 0.0:
            raise ValueError("cannot scale the zero operator")
    elif not scale > 0:
        raise ValueError("scale must be positive")
    return GraphOperator(L.matrix / scale, SCALED, float(scale))


# ---------------------------------------------------------------------------
# I/O


def format_float(x: float) -> str:
    return format(float(x), ".17g")


def write_graph(g: WeightedGraph, path) -> None:
    lines = [f"n={g.n}"]
    lines += [f"{a} {b} {format_float(c)}" for a, b, c in zip(g.u, g.v, g.w)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def parse_graph(text: str) -> WeightedGraph:
    n = None
    edges = []
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if n is None:
            if not line.startswith("n="):
                raise GraphFormatError("expected header 'n=<count>'", lineno)
            try:
                n = int(line[2:])
            except ValueError:
                raise GraphFormatError(f"bad node count {line[2:]!r}", lineno) from None
            if n < 0:
                raise GraphFormatError("negative node count", lineno)
            continue
        parts = line.split()
        if len(parts) != 3:
            raise GraphFormatError(f"expected '<u> <v> <w>', got {line!r}", lineno)
        try:
            a, b, w = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError:
            raise GraphFormatError(f"unparseable edge {line!r}", lineno) from None
        if a == b:
            raise GraphFormatError(f"self-loop at node {a}", lineno)
        if a > b:
            raise GraphFormatError("edges must be written with u < v", lineno)
        if a < 0 or b >= n:
            raise GraphFormatError(f"endpoint out of range for n={n}", lineno)
        if not np.isfinite(w) or w <= 0:
            raise GraphFormatError(f"weight must be positive, got {parts[2]}", lineno)
        if (a, b) in seen:
            raise GraphFormatError(f"duplicate edge ({a}, {b})", lineno)
        seen.add((a, b))
        edges.append((a, b, w))
    if n is None:
        raise GraphFormatError("missing header 'n=<count>'")
    return WeightedGraph.from_edges(n, edges)


def read_graph(path) -> WeightedGraph:
    return parse_graph(Path(path).read_text(encoding="utf-8"))
