"""Dense symmetric linear algebra used throughout the package.

Everything here works on dense ``numpy`` arrays; the graphs we handle have
a few hundred nodes, where LAPACK's dense symmetric drivers are both fast
and deterministic.
"""

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg


class NumericalError(ArithmeticError):
    """Raised when a linear-algebra precondition fails numerically."""


@dataclass(frozen=True)
class EigenDecomposition:
    eigenvalues: np.ndarray  # ascending
    eigenvectors: np.ndarray  # orthonormal columns

    def reconstruct(self) -> np.ndarray:
        V = self.eigenvectors
        return (V * self.eigenvalues) @ V.T


@dataclass(frozen=True)
class PcaBasis:
    mean: np.ndarray
    components: np.ndarray  # (k, d), orthonormal rows
    explained_variance: np.ndarray


def _as_matrix(M) -> np.ndarray:
    M = getattr(M, "matrix", M)
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    return M


def symmetrize(M) -> np.ndarray:
    M = _as_matrix(M)
    if not np.all(np.isfinite(M)):
        raise NumericalError("matrix has non-finite entries")
    return 0.5 * (M + M.T)


def sym_eig(M) -> EigenDecomposition:
    """Full eigendecomposition of a symmetric matrix, eigenvalues ascending.

    The input is symmetrized by averaging with its transpose first.
    """
    w, V = np.linalg.eigh(symmetrize(M))
    return EigenDecomposition(w, V)


def operator_norm(M) -> float:
    """Spectral norm of a symmetric matrix (largest absolute eigenvalue)."""
    w = np.linalg.eigvalsh(symmetrize(M))
    if w.size == 0:
        return 0.0
    return float(max(abs(w[0]), abs(w[-1])))


def pseudoinverse(L, rtol: float = 1e-10) -> np.ndarray:
    """Moore-Penrose pseudoinverse of a symmetric PSD matrix.

    Eigenvalues below ``rtol * lambda_max`` are treated as zero.
    """
    eig = sym_eig(L)
    w, V = eig.eigenvalues, eig.eigenvectors
    lam_max = np.max(np.abs(w)) if w.size else 0.0
    keep = w > rtol * lam_max
    inv = np.zeros_like(w)
    inv[keep] = 1.0 / w[keep]
    return (V * inv) @ V.T


def ones_complement_basis(n: int) -> np.ndarray:
    """Orthonormal basis (n, n-1) of the complement of the all-ones vector.

    Built from the Householder reflector that sends ``e_1`` to
    ``1/sqrt(n)``; its last ``n-1`` columns span the complement.
    """
    if n < 2:
        raise ValueError("need n >= 2")
    u = np.full(n, 1.0 / np.sqrt(n))
    u[0] -= 1.0
    H = np.eye(n) - 2.0 * np.outer(u, u) / (u @ u)
    return H[:, 1:]


def generalized_extremal_eigs(A, B, deflate_ones: bool = True) -> tuple[float, float]:
    """Extremal eigenvalues of the symmetric-definite pencil ``(A, B)``.

    With ``deflate_ones`` both matrices are restricted to the orthogonal
    complement of the constant vector first, which is where two graph
    Laplacians are compared.

    Raises
    ------
    NumericalError
        If the (restricted) ``B`` is not positive definite.
    """
    A = symmetrize(A)
    B = symmetrize(B)
    if A.shape != B.shape:
        raise ValueError("pencil matrices differ in shape")
    if deflate_ones:
        V = ones_complement_basis(A.shape[0])
        A = V.T @ A @ V
        B = V.T @ B @ V
        A = 0.5 * (A + A.T)
        B = 0.5 * (B + B.T)
    try:
        w = scipy.linalg.eigh(A, B, eigvals_only=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            "denominator operator is not positive definite on the deflated subspace "
            "(is the dense graph connected?)"
        ) from exc
    return float(w[0]), float(w[-1])


def matrix_polynomial(coeffs: Sequence[float], M) -> np.ndarray:
    """Evaluate ``sum_r coeffs[r] * M**r`` by Horner's rule."""
    M = _as_matrix(M)
    coeffs = list(coeffs)
    if not coeffs:
        raise ValueError("empty coefficient list")
    n = M.shape[0]
    eye = np.eye(n)
    P = coeffs[-1] * eye
    for a in reversed(coeffs[:-1]):
        P = M @ P + a * eye
    return P


def pca_fit(Z, k: int) -> PcaBasis:
    Z = np.asarray(Z, dtype=float)
    n, d = Z.shape
    if not 1 <= k <= min(n, d):
        raise ValueError(f"k={k} outside [1, min(n, d)={min(n, d)}]")
    mean = Z.mean(axis=0)
    C = (Z - mean).T @ (Z - mean) / n
    eig = sym_eig(C)
    w = eig.eigenvalues[::-1][:k]
    V = eig.eigenvectors[:, ::-1][:, :k]
    # sign convention: largest-magnitude loading positive
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(k)])
    signs[signs == 0] = 1.0
    V = V * signs
    return PcaBasis(mean=mean, components=V.T, explained_variance=np.clip(w, 0.0, None))


def pca_project(basis: PcaBasis, Z) -> np.ndarray:
    """Coordinates of ``Z`` in ``basis``, centred by the *fitted* mean."""
    Z = np.asarray(Z, dtype=float)
    return (Z - basis.mean) @ basis.components.T


def orthogonal_procrustes(A, B) -> tuple[np.ndarray, float]:
    """Orthogonal ``Q`` minimising ``||B Q - A||_F`` and the attained residual."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape != B.shape:
        raise ValueError(f"shape mismatch {A.shape} vs {B.shape}")
    U, _, Vt = np.linalg.svd(B.T @ A)
    Q = U @ Vt
    return Q, float(np.linalg.norm(B @ Q - A))
