"""
Dense symmetric linear algebra kernel

Small-matrix helpers shared by every other module: symmetric
eigendecompositions, SPD square roots, definiteness tests and
Kronecker-vectorised Lyapunov/Sylvester solves. Everything here is a pure
function of its inputs.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import scipy.linalg

from .exceptions import (
    DimensionError,
    NoUniqueSolutionError,
    NotPositiveDefiniteError,
    NumericalFailure,
)

logger = logging.getLogger(__name__)

# Relative threshold below which the Kronecker operator is treated as singular
KRON_RCOND = 1e-13


@dataclass(frozen=True)
class Spectrum:
    """Eigen-decomposition of a real symmetric matrix (ascending eigenvalues)"""
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.eigenvectors * self.eigenvalues) @ self.eigenvectors.T

    @property
    def lambda_min(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def lambda_max(self) -> float:
        return float(self.eigenvalues[-1])


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce scalars, nested lists and arrays to a 2-D float array"""
    arr = np.asarray(a, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be two-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    return arr


def as_symmetric(a, name: str = "matrix") -> np.ndarray:
    """Return the symmetric part of a square matrix (exactly symmetric)"""
    arr = as_matrix(a, name)
    if arr.shape[0] != arr.shape[1] or arr.shape[0] < 1:
        raise DimensionError(f"{name} must be square with dimension >= 1, got shape {arr.shape}")
    return 0.5 * (arr + arr.T)


def definiteness_tol(S: np.ndarray) -> float:
    """Default definiteness tolerance 1e-12*(1 + ||S||_F)"""
    return 1e-12 * (1.0 + float(np.linalg.norm(S, 'fro')))


def sym_eig(S) -> Spectrum:
    """Full spectrum and orthonormal eigenvectors of a symmetric matrix"""
    S = as_symmetric(S)
    try:
        eigenvalues, eigenvectors = np.linalg.eigh(S)
    except np.linalg.LinAlgError as e:
        logger.error(f"Symmetric eigensolver failed on a {S.shape[0]}x{S.shape[0]} matrix: {e}")
        raise NumericalFailure(f"symmetric eigensolver did not converge: {e}") from e
    return Spectrum(eigenvalues=eigenvalues, eigenvectors=eigenvectors)


def is_positive_definite(S, tol: Optional[float] = None) -> bool:
    """True iff lambda_min(S) > tol (default tolerance scales with ||S||_F)"""
    S = as_symmetric(S)
    if tol is None:
        tol = definiteness_tol(S)
    if tol < 0:
        raise ValueError("tol must be non-negative")
    return sym_eig(S).lambda_min > tol


def spd_sqrt(S, tol: Optional[float] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Symmetric square root of an SPD matrix and its inverse"""
    S = as_symmetric(S)
    if tol is None:
        tol = definiteness_tol(S)
    spectrum = sym_eig(S)
    if spectrum.lambda_min <= tol:
        raise NotPositiveDefiniteError(
            f"matrix is not positive definite (lambda_min = {spectrum.lambda_min:.3e})"
        )
    V = spectrum.eigenvectors
    roots = np.sqrt(spectrum.eigenvalues)
    root = as_symmetric((V * roots) @ V.T)
    inv_root = as_symmetric((V / roots) @ V.T)
    return root, inv_root


def psd_factor(S) -> np.ndarray:
    """A factor L with L L^T = S for symmetric PSD S (negative eigenvalues clipped)"""
    spectrum = sym_eig(S)
    return spectrum.eigenvectors * np.sqrt(np.clip(spectrum.eigenvalues, 0.0, None))


def solve_sylvester(A, B, C) -> np.ndarray:
    """
    Solve A X + X B + C = 0 by Kronecker vectorisation.

    With row-major vectorisation vec(A X) = (A kron I) vec(X) and
    vec(X B) = (I kron B^T) vec(X).
    """
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    C = as_matrix(C, "C")
    n, m = A.shape[0], B.shape[0]
    if A.shape != (n, n) or B.shape != (m, m) or C.shape != (n, m):
        raise DimensionError(
            f"incompatible Sylvester dimensions A{A.shape} B{B.shape} C{C.shape}"
        )

    L = np.kron(A, np.eye(m)) + np.kron(np.eye(n), B.T)
    singular_values = np.linalg.svd(L, compute_uv=False)
    if singular_values[-1] <= KRON_RCOND * singular_values[0]:
        raise NoUniqueSolutionError(
            "Kronecker system is singular: A and -B share an eigenvalue "
            f"(sigma_min = {singular_values[-1]:.3e})"
        )

    try:
        x = np.linalg.solve(L, -C.reshape(-1))
    except np.linalg.LinAlgError as e:
        raise NoUniqueSolutionError(f"Kronecker system is singular: {e}") from e
    return x.reshape(n, m)


def solve_lyapunov(A, V) -> np.ndarray:
    """
    Solve the algebraic Lyapunov equation A X + X A^T + V = 0.

    Raises NoUniqueSolutionError when A has an eigenvalue pair summing to
    zero (undamped oscillations, for example).
    """
    A = as_matrix(A, "A")
    V = as_symmetric(V, "V")
    if A.shape != V.shape:
        raise DimensionError(f"A{A.shape} and V{V.shape} must have equal shapes")

    X = as_symmetric(solve_sylvester(A, A.T, V))

    residual = np.linalg.norm(A @ X + X @ A.T + V, 'fro')
    limit = 1e-10 * (1.0 + np.linalg.norm(V, 'fro'))
    if residual > limit:
        logger.warning(f"Lyapunov residual {residual:.3e} exceeds {limit:.3e} (ill-conditioned A)")
    return X


def min_gen_eig(S, Q) -> float:
    """lambda_min(S Q^{-1}), computed as the smallest eigenvalue of the pencil (S, Q)"""
    S = as_symmetric(S, "S")
    Q = as_symmetric(Q, "Q")
    if S.shape != Q.shape:
        raise DimensionError(f"S{S.shape} and Q{Q.shape} must have equal shapes")
    if not is_positive_definite(Q):
        raise NotPositiveDefiniteError("Q is not positive definite")
    try:
        eigenvalues = scipy.linalg.eigh(S, Q, eigvals_only=True)
    except np.linalg.LinAlgError as e:
        raise NumericalFailure(f"generalized eigensolver failed: {e}") from e
    return float(eigenvalues[0])
