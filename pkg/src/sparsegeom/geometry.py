"""Embedding-geometry metrics comparing dense-graph and sparse-graph representations."""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial.distance import pdist

from .numerics import orthogonal_procrustes, pca_fit, pca_project

BOUND_SLACK = 1e-8


def _pair(Z, Z_tilde):
    Z = np.asarray(Z, dtype=float)
    Z_tilde = np.asarray(Z_tilde, dtype=float)
    if Z.shape != Z_tilde.shape:
        raise ValueError(f"embedding shapes differ: {Z.shape} vs {Z_tilde.shape}")
    return Z, Z_tilde


@dataclass(frozen=True, eq=False)
class GramPair:
    dense: np.ndarray
    sparse: np.ndarray

    @classmethod
    def of(cls, Z, Z_tilde) -> "GramPair":
        Z, Z_tilde = _pair(Z, Z_tilde)
        return cls(Z @ Z.T, Z_tilde @ Z_tilde.T)

    @property
    def difference(self) -> np.ndarray:
        return self.dense - self.sparse


def gram_distortion(Z, Z_tilde) -> float:
    """``||Z Z^T - Zt Zt^T||_F / ||Z Z^T||_F``."""
    g = GramPair.of(Z, Z_tilde)
    ref = np.linalg.norm(g.dense)
    if ref == 0.0:
        raise ZeroDivisionError("dense embedding is zero")
    return float(np.linalg.norm(g.difference) / ref)


def gram_norm_gaps(Z, Z_tilde) -> tuple[float, float]:
    """Spectral and Frobenius norms of the Gram difference."""
    D = GramPair.of(Z, Z_tilde).difference
    w = np.linalg.eigvalsh(0.5 * (D + D.T))
    return float(np.max(np.abs(w))), float(np.linalg.norm(D))


def gram_factorization_residual(Z, Z_tilde) -> float:
    """``||Z Delta^T + Delta Zt^T - (Z Z^T - Zt Zt^T)||_F`` with ``Delta = Z - Zt``.

    Zero up to rounding; used as a numerical sanity check.
    """
    Z, Zt = _pair(Z, Z_tilde)
    Delta = Z - Zt
    return float(np.linalg.norm(Z @ Delta.T + Delta @ Zt.T - (Z @ Z.T - Zt @ Zt.T)))


def max_pairwise_sq_distance_gap(Z, Z_tilde, bound: Optional[float] = None):
    """Largest change in squared pairwise distance, and whether it is within ``bound``."""
    Z, Zt = _pair(Z, Z_tilde)
    if Z.shape[0] < 2:
        gap = 0.0
    else:
        gap = float(np.max(np.abs(pdist(Z, "sqeuclidean") - pdist(Zt, "sqeuclidean"))))
    passed = None if bound is None else bool(gap <= bound + BOUND_SLACK)
    return gap, passed


@dataclass(frozen=True, eq=False)
class ClassStats:
    means: np.ndarray  # (C, d)
    covariances: np.ndarray  # (C, d, d)
    sizes: np.ndarray


def class_stats(Z, labels) -> ClassStats:
    """Per-class mean and population covariance (divisor ``n_c``)."""
    Z = np.asarray(Z, dtype=float)
    labels = np.asarray(labels, dtype=np.int64)
    C = int(labels.max()) + 1
    d = Z.shape[1]
    means = np.zeros((C, d))
    covs = np.zeros((C, d, d))
    sizes = np.bincount(labels, minlength=C)
    for c in range(C):
        rows = Z[labels == c]
        if rows.shape[0] == 0:
            raise ValueError(f"class {c} is empty")
        means[c] = rows.mean(axis=0)
        A = rows - means[c]
        covs[c] = A.T @ A / rows.shape[0]
    return ClassStats(means, covs, sizes)


@dataclass(frozen=True)
class ClassGap:
    mean_gap: float
    cov_spectral_gap: float
    mean_bound: float
    cov_bound: float
    B_Z: float

    @property
    def mean_pass(self) -> bool:
        return self.mean_gap <= self.mean_bound + BOUND_SLACK

    @property
    def cov_pass(self) -> bool:
        return self.cov_spectral_gap <= self.cov_bound + BOUND_SLACK


def class_stat_gaps(Z, Z_tilde, labels) -> list:
    """Measured class mean / covariance shifts against their distribution-free bounds.

    For class ``c`` with ``n_c`` members and ``Delta = Z - Zt``::

        ||mu_c - mu~_c||            <= ||Delta||_F / sqrt(n_c)
        ||Sigma_c - Sigma~_c||_2    <= 8 B_Z ||Delta||_F / sqrt(n_c)

    with ``B_Z`` the largest row norm over both embeddings.
    """
    Z, Zt = _pair(Z, Z_tilde)
    s, st = class_stats(Z, labels), class_stats(Zt, labels)
    delta_F = float(np.linalg.norm(Z - Zt))
    B_Z = float(max(np.max(np.linalg.norm(Z, axis=1)), np.max(np.linalg.norm(Zt, axis=1))))
    out = []
    for c, n_c in enumerate(s.sizes):
        D = s.covariances[c] - st.covariances[c]
        root = np.sqrt(n_c)
        out.append(
            ClassGap(
                mean_gap=float(np.linalg.norm(s.means[c] - st.means[c])),
                cov_spectral_gap=float(np.max(np.abs(np.linalg.eigvalsh(0.5 * (D + D.T))))),
                mean_bound=delta_F / root,
                cov_bound=8.0 * B_Z * delta_F / root,
                B_Z=B_Z,
            )
        )
    return out


def cosine_neighbors(Z, k: int, subset) -> np.ndarray:
    """Top-``k`` cosine neighbours of each node in ``subset`` among all other nodes.

    Exact similarity ties go to the smaller node index.
    """
    Z = np.asarray(Z, dtype=float)
    norms = np.linalg.norm(Z, axis=1)
    if np.any(norms == 0):
        raise ValueError("cosine similarity undefined for zero-norm embedding rows")
    U = Z / norms[:, None]
    subset = np.asarray(subset, dtype=np.int64)
    sim = U[subset] @ U.T
    sim[np.arange(subset.size), subset] = -np.inf
    # stable sort on negated similarity keeps ascending index among ties
    return np.argsort(-sim, axis=1, kind="stable")[:, :k]


def knn_overlap(Z, Z_tilde, k: int = 20, eval_subset=None, seed: Optional[int] = None, max_nodes: int = 500) -> float:
    """Mean fraction of shared cosine ``k``-NN between the two embeddings.

    ``eval_subset`` defaults to all nodes.  When it holds more than
    ``max_nodes`` entries a seeded random subsample of that size is used.
    """
    Z, Zt = _pair(Z, Z_tilde)
    n = Z.shape[0]
    if not 1 <= k < n:
        raise ValueError(f"need 1 <= k < n (k={k}, n={n})")
    subset = np.arange(n) if eval_subset is None else np.asarray(eval_subset, dtype=np.int64)
    if subset.size == 0:
        raise ValueError("evaluation subset is empty")
    if subset.size > max_nodes:
        rng = np.random.default_rng(seed)
        subset = np.sort(rng.choice(subset, size=max_nodes, replace=False))
    A = cosine_neighbors(Z, k, subset)
    B = cosine_neighbors(Zt, k, subset)
    shared = [np.intersect1d(a, b, assume_unique=True).size for a, b in zip(A, B)]
    return float(np.mean(shared) / k)


@dataclass(frozen=True, eq=False)
class CentroidProjection:
    dense: np.ndarray  # (C, 2)
    sparse: np.ndarray  # (C, 2)
    displacement: np.ndarray  # (C,)


def centroid_projection(Z, Z_tilde, labels, dims: int = 2) -> CentroidProjection:
    """Class centroids of both embeddings in the PCA basis of the dense one."""
    Z, Zt = _pair(Z, Z_tilde)
    basis = pca_fit(Z, min(dims, *Z.shape))
    mu = class_stats(Z, labels).means
    mu_t = class_stats(Zt, labels).means
    P, Pt = pca_project(basis, mu), pca_project(basis, mu_t)
    return CentroidProjection(P, Pt, np.linalg.norm(P - Pt, axis=1))


@dataclass(frozen=True, eq=False)
class ProcrustesReport:
    dense: np.ndarray
    sparse_aligned: np.ndarray
    rotation: np.ndarray
    residual: float
    relative_residual: float
    unaligned_residual: float


def procrustes_report(Z, Z_tilde, dims: int = 2) -> ProcrustesReport:
    """Project both embeddings on the dense PCA basis and rotate sparse onto dense."""
    Z, Zt = _pair(Z, Z_tilde)
    basis = pca_fit(Z, min(dims, *Z.shape))
    A = pca_project(basis, Z)
    B = pca_project(basis, Zt)
    Q, residual = orthogonal_procrustes(A, B)
    ref = float(np.linalg.norm(A))
    return ProcrustesReport(
        dense=A,
        sparse_aligned=B @ Q,
        rotation=Q,
        residual=residual,
        relative_residual=residual / ref if ref > 0 else 0.0,
        unaligned_residual=float(np.linalg.norm(B - A)),
    )


def class_balanced_split(labels, test_fraction: float, seed: int) -> np.ndarray:
    """Sorted node indices of a seeded per-class test split."""
    labels = np.asarray(labels, dtype=np.int64)
    rng = np.random.default_rng(seed)
    picked = []
    for c in range(int(labels.max()) + 1):
        members = np.flatnonzero(labels == c)
        m = max(1, int(round(test_fraction * members.size)))
        picked.append(rng.choice(members, size=m, replace=False))
    return np.sort(np.concatenate(picked))


@dataclass
class GeometryReport:
    rel_gram_distortion: float
    rel_representation_error: float
    gram_spectral_gap: float
    gram_frobenius_gap: float
    max_pairwise_sq_gap: float
    class_gaps: list
    knn_overlap: float
    gram_bound_2: Optional[float] = None
    gram_bound_F: Optional[float] = None
    pairwise_bound: Optional[float] = None
    flags: dict = field(default_factory=dict)

    @property
    def mean_gap_max(self) -> float:
        return max(g.mean_gap for g in self.class_gaps)

    @property
    def cov_gap_max(self) -> float:
        return max(g.cov_spectral_gap for g in self.class_gaps)


def geometry_report(
    Z,
    Z_tilde,
    labels,
    *,
    k: int = 20,
    eval_subset=None,
    seed: Optional[int] = None,
    C_gram_2: Optional[float] = None,
    C_gram_F: Optional[float] = None,
    eps: Optional[float] = None,
) -> GeometryReport:
    """All geometry metrics for one dense/sparse pair, plus bound flags.

    When ``eps`` and the Gram constants are supplied, the Gram and pairwise
    distance gaps are checked against ``C * eps``; the class-statistic
    bounds are always checked.
    """
    Z, Zt = _pair(Z, Z_tilde)
    spec, frob = gram_norm_gaps(Z, Zt)
    gaps = class_stat_gaps(Z, Zt, labels)
    ref = float(np.linalg.norm(Z))
    flags = {
        "mean": all(g.mean_pass for g in gaps),
        "cov": all(g.cov_pass for g in gaps),
        # pairwise mechanism: |d^2 - d~^2| <= 4 ||G - G~||_2 holds unconditionally
        "pairwise_mechanism": None,
    }
    b2 = bF = pw = None
    if eps is not None and C_gram_2 is not None:
        b2 = C_gram_2 * eps
        bF = (C_gram_F if C_gram_F is not None else C_gram_2) * eps
        pw = 4.0 * b2
        flags["gram"] = bool(spec <= b2 + BOUND_SLACK and frob <= bF + BOUND_SLACK)
    max_gap, pw_pass = max_pairwise_sq_distance_gap(Z, Zt, pw)
    flags["pairwise_mechanism"] = bool(max_gap <= 4.0 * spec + BOUND_SLACK)
    if pw_pass is not None:
        flags["pairwise"] = pw_pass
    return GeometryReport(
        rel_gram_distortion=gram_distortion(Z, Zt),
        rel_representation_error=float(np.linalg.norm(Z - Zt) / ref) if ref > 0 else 0.0,
        gram_spectral_gap=spec,
        gram_frobenius_gap=frob,
        max_pairwise_sq_gap=max_gap,
        class_gaps=gaps,
        knn_overlap=knn_overlap(Z, Zt, k, eval_subset, seed),
        gram_bound_2=b2,
        gram_bound_F=bF,
        pairwise_bound=pw,
        flags=flags,
    )
