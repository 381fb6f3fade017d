"""Effective-resistance sparsification and empirical spectral distortion."""

import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .graph import COMBINATORIAL, GraphOperator, WeightedGraph, format_float, laplacian, parse_graph, write_graph
from .numerics import NumericalError, generalized_extremal_eigs, pseudoinverse, sym_eig
from .seeding import STAGE_DRAW, STAGE_PROBE, derive_seed

EXACT = "exact"
TRUNCATED = "truncated"

DEFAULT_PROBES = 500
EXACT_ENVELOPE_MAX_N = 1000


@dataclass(frozen=True, eq=False)
class ResistanceTable:
    """Per-edge effective resistances, aligned with the graph's edge arrays."""

    resistance: np.ndarray
    mode: str = EXACT
    rank: Optional[int] = None

    def leverage(self, g: WeightedGraph) -> np.ndarray:
        return g.w * self.resistance


@dataclass(frozen=True, eq=False)
class SparsifierDraw:
    graph: WeightedGraph
    q: int
    seed: int
    retained_fraction: float
    c: Optional[float] = None
    eps_emp: Optional[float] = None
    draw_index: int = 0
    mode: str = EXACT
    rank: Optional[int] = None


def _require_connected(g: WeightedGraph):
    if g.n < 2 or not g.is_connected():
        raise ValueError("effective resistances need a connected graph with n >= 2")


def effective_resistances_exact(g: WeightedGraph) -> ResistanceTable:
    _require_connected(g)
    Lp = pseudoinverse(laplacian(g, COMBINATORIAL).matrix)
    R = Lp[g.u, g.u] + Lp[g.v, g.v] - 2.0 * Lp[g.u, g.v]
    return ResistanceTable(R, EXACT)


def effective_resistances_approx(g: WeightedGraph, rank: int) -> ResistanceTable:
    """Resistances from the ``rank`` smallest nonzero Laplacian eigenpairs.

    Each dropped eigenpair contributes a nonnegative term, so the estimate
    never exceeds the exact resistance.
    """
    if not 1 <= rank <= g.n - 1:
        raise ValueError(f"rank must lie in [1, n-1], got {rank}")
    eig = sym_eig(laplacian(g, COMBINATORIAL).matrix)
    lam = eig.eigenvalues[1 : rank + 1]
    V = eig.eigenvectors[:, 1 : rank + 1]
    if lam[0] < 1e-10:
        raise NumericalError("graph is numerically disconnected (lambda_2 < 1e-10)")
    diff = V[g.u] - V[g.v]
    R = (diff**2) @ (1.0 / lam)
    return ResistanceTable(R, TRUNCATED, rank)


def budget_from_multiplier(c: float, n: int) -> int:
    """Sample budget ``floor(c * n * ln n)``."""
    if not c > 0:
        raise ValueError("budget multiplier must be positive")
    if n < 2:
        raise ValueError("need n >= 2")
    return int(math.floor(c * n * math.log(n)))


def er_sparsify(
    g: WeightedGraph,
    r: ResistanceTable,
    q: int,
    seed: int,
    *,
    c: Optional[float] = None,
    draw_index: int = 0,
) -> SparsifierDraw:
    """Leverage-score edge sampling with replacement.

    Edge ``e`` is drawn with probability ``p_e = w_e R_e / sum_f w_f R_f``;
    each of its ``k_e`` draws adds ``w_e / (q p_e)`` to its new weight, so
    the sparse Laplacian is an unbiased estimate of the dense one.
    """
    if q < 1:
        raise ValueError("budget q must be >= 1")
    if r.resistance.shape != g.w.shape:
        raise ValueError("resistance table does not cover the graph's edges")
    lev = r.leverage(g)
    total = lev.sum()
    if not total > 0:
        raise ValueError("all leverage scores are zero")
    p = lev / total
    rng = np.random.default_rng(seed)
    picks = rng.choice(g.num_edges, size=q, replace=True, p=p)
    counts = np.bincount(picks, minlength=g.num_edges)
    kept = counts > 0
    new_w = g.w[kept] * (counts[kept] / (q * p[kept]))
    sparse = WeightedGraph(g.n, g.u[kept], g.v[kept], new_w)
    return SparsifierDraw(
        graph=sparse,
        q=int(q),
        seed=int(seed),
        retained_fraction=float(kept.sum()) / g.num_edges,
        c=c,
        draw_index=draw_index,
        mode=r.mode,
        rank=r.rank,
    )


def _matrix(L):
    return L.matrix if isinstance(L, GraphOperator) else np.asarray(L, dtype=float)


def empirical_distortion_exact(L_dense, L_sparse) -> float:
    """``max(1 - lambda_min, lambda_max - 1)`` of the pencil (sparse, dense) on 1-perp."""
    lo, hi = generalized_extremal_eigs(_matrix(L_sparse), _matrix(L_dense), deflate_ones=True)
    return max(1.0 - lo, hi - 1.0)


def empirical_distortion_probe(L_dense, L_sparse, num_probes: int = DEFAULT_PROBES, seed: int = 0) -> float:
    """Largest Rayleigh-quotient deviation over random probes orthogonal to 1.

    This is a lower estimate of the exact envelope: every probe is a
    feasible point of the generalized Rayleigh quotient.
    """
    A = _matrix(L_sparse)
    B = _matrix(L_dense)
    n = B.shape[0]
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, num_probes))
    X -= X.mean(axis=0)
    X /= np.linalg.norm(X, axis=0)
    den = np.einsum("ij,ij->j", X, B @ X)
    if np.any(den < 1e-12):
        raise NumericalError("probe with vanishing dense quadratic form")
    num = np.einsum("ij,ij->j", X, A @ X)
    return float(np.max(np.abs(num / den - 1.0)))


def empirical_distortion(L_dense, L_sparse, *, num_probes: int = DEFAULT_PROBES, seed: int = 0) -> float:
    """Exact envelope up to ``EXACT_ENVELOPE_MAX_N`` nodes, probes above."""
    if _matrix(L_dense).shape[0] <= EXACT_ENVELOPE_MAX_N:
        return empirical_distortion_exact(L_dense, L_sparse)
    return empirical_distortion_probe(L_dense, L_sparse, num_probes, seed)


def resistances(g: WeightedGraph, mode: str = EXACT, rank: Optional[int] = None) -> ResistanceTable:
    if mode == EXACT:
        return effective_resistances_exact(g)
    if mode == TRUNCATED:
        if rank is None:
            raise ValueError("truncated mode needs a rank")
        return effective_resistances_approx(g, rank)
    raise ValueError(f"unknown resistance mode {mode!r}")


@dataclass(frozen=True, eq=False)
class TargetLevel:
    """Draws produced for one target distortion.

    ``grid_eps`` holds the realised distortion of the single probe draw made
    at each multiplier of the search grid.
    """

    target: float
    c: float
    q: int
    draws: list
    grid_eps: tuple

    def __iter__(self):
        # unpacks as (target, draws)
        yield self.target
        yield self.draws


def draw_with_distortion(
    g: WeightedGraph,
    r: ResistanceTable,
    L_dense: GraphOperator,
    c: float,
    seed: int,
    draw_index: int = 0,
    num_probes: int = DEFAULT_PROBES,
) -> SparsifierDraw:
    q = budget_from_multiplier(c, g.n)
    d = er_sparsify(g, r, q, seed, c=c, draw_index=draw_index)
    eps = empirical_distortion(L_dense, laplacian(d.graph), num_probes=num_probes, seed=seed)
    return replace(d, eps_emp=eps)


def select_by_target_distortion(
    g: WeightedGraph,
    targets: Sequence[float],
    c_grid: Sequence[float],
    draws_per_target: int,
    resistance_mode: str = EXACT,
    seed: int = 0,
    *,
    rank: Optional[int] = None,
    resistance_table: Optional[ResistanceTable] = None,
    num_probes: int = DEFAULT_PROBES,
    probe_draws: int = 1,
) -> list[TargetLevel]:
    """Pick, for each target, the multiplier whose probe draw lands closest.

    ``probe_draws`` probe sparsifiers (default one) are drawn per grid
    multiplier, probe ``i`` at grid index ``j`` seeded with
    ``derive_seed(seed, j, i, STAGE_PROBE)``; their mean distortion
    represents the multiplier.  Each target then
    gets ``draws_per_target`` fresh draws at its selected multiplier, draw
    ``i`` of level ``j`` using ``derive_seed(seed, j, i, STAGE_DRAW)``.
    Ties in distance go to the earlier grid entry.
    """
    if not len(targets) or not len(c_grid):
        raise ValueError("targets and c_grid must be nonempty")
    r = resistance_table if resistance_table is not None else resistances(g, resistance_mode, rank)
    L = laplacian(g)
    if probe_draws < 1:
        raise ValueError("probe_draws must be >= 1")
    grid_eps = tuple(
        float(
            np.mean(
                [
                    draw_with_distortion(g, r, L, c, derive_seed(seed, j, i, STAGE_PROBE), num_probes=num_probes).eps_emp
                    for i in range(probe_draws)
                ]
            )
        )
        for j, c in enumerate(c_grid)
    )
    levels = []
    for j, target in enumerate(targets):
        best = int(np.argmin([abs(e - target) for e in grid_eps]))
        c = float(c_grid[best])
        draws = [
            draw_with_distortion(g, r, L, c, derive_seed(seed, j, i, STAGE_DRAW), i, num_probes)
            for i in range(draws_per_target)
        ]
        levels.append(TargetLevel(float(target), c, budget_from_multiplier(c, g.n), draws, grid_eps))
    return levels


# ---------------------------------------------------------------------------
# serialization

META_FIELDS = ("q", "c", "seed", "eps_emp", "retained_fraction", "mode", "rank")


def _fmt(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, float):
        return format_float(value)
    return str(value)


def write_draw(draw: SparsifierDraw, graph_path, meta_path=None) -> Path:
    """Write the sparse graph and its ``key = value`` metadata sidecar."""
    graph_path = Path(graph_path)
    meta_path = Path(meta_path) if meta_path else graph_path.with_suffix(graph_path.suffix + ".meta")
    write_graph(draw.graph, graph_path)
    meta = {
        "q": draw.q,
        "c": None if draw.c is None else float(draw.c),
        "seed": draw.seed,
        "eps_emp": None if draw.eps_emp is None else float(draw.eps_emp),
        "retained_fraction": float(draw.retained_fraction),
        "mode": draw.mode,
        "rank": draw.rank,
    }
    meta_path.write_text("".join(f"{k} = {_fmt(meta[k])}\n" for k in META_FIELDS), encoding="utf-8")
    return meta_path


def read_draw(graph_path, meta_path=None) -> SparsifierDraw:
    graph_path = Path(graph_path)
    meta_path = Path(meta_path) if meta_path else graph_path.with_suffix(graph_path.suffix + ".meta")
    raw = {}
    for line in meta_path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            key, _, value = line.partition("=")
            raw[key.strip()] = value.strip()
    missing = set(META_FIELDS) - set(raw)
    if missing:
        raise ValueError(f"metadata missing fields {sorted(missing)}")

    def opt(key, conv):
        return None if raw[key] == "none" else conv(raw[key])

    return SparsifierDraw(
        graph=parse_graph(graph_path.read_text(encoding="utf-8")),
        q=int(raw["q"]),
        seed=int(raw["seed"]),
        retained_fraction=float(raw["retained_fraction"]),
        c=opt("c", float),
        eps_emp=opt("eps_emp", float),
        mode=raw["mode"],
        rank=opt("rank", int),
    )
