"""
Linear stochastic Hamiltonian (LSH) systems

An LSH system is the quadruple (K, M, F, N) of stiffness, mass, damping and
coupling matrices. This module builds its state-space realization, the mass
normalisation to an identity mass matrix, the transfer function, the static
gain and the characteristic polynomial.
"""

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .exceptions import DimensionError, NotPositiveDefiniteError, SingularityError, NumericalFailure
from .numlin import as_matrix, as_symmetric, definiteness_tol, spd_sqrt, sym_eig

logger = logging.getLogger(__name__)

# Matrices with a larger condition number are treated as singular
SINGULAR_COND = 1e15
# Condition number above which the static gain is reported as unreliable
WARN_COND = 1e12


def _square_param(value, n: int, name: str) -> np.ndarray:
    """Scalars stand for value*I_n; anything else must be a symmetric n x n matrix"""
    if np.ndim(value) == 0:
        return float(value) * np.eye(n)
    S = as_symmetric(value, name)
    if S.shape != (n, n):
        raise DimensionError(f"{name} must be {n}x{n}, got {S.shape}")
    return S


@dataclass(frozen=True, eq=False)
class LshSystem:
    """The quadruple (K, M, F, N); K, M, F are n x n, N is m x n"""
    K: np.ndarray
    M: np.ndarray
    F: np.ndarray
    N: np.ndarray
    name: str = "system"

    def __post_init__(self):
        K = as_symmetric(self.K, "K")
        n = K.shape[0]
        M = _square_param(self.M, n, "M")
        F = _square_param(self.F, n, "F")
        N = as_matrix(self.N, "N")
        if N.shape[1] != n:
            raise DimensionError(f"N must have {n} columns, got shape {N.shape}")

        m_spectrum = sym_eig(M)
        if m_spectrum.lambda_min <= definiteness_tol(M):
            raise NotPositiveDefiniteError(f"M not positive definite (lambda_min = {m_spectrum.lambda_min:.3e})")
        f_min = sym_eig(F).lambda_min
        if f_min < -definiteness_tol(F):
            raise NotPositiveDefiniteError(f"F not positive semi-definite (lambda_min = {f_min:.3e})")

        object.__setattr__(self, 'K', K)
        object.__setattr__(self, 'M', M)
        object.__setattr__(self, 'F', F)
        object.__setattr__(self, 'N', N)

    @property
    def n(self) -> int:
        return self.K.shape[0]

    @property
    def m(self) -> int:
        return self.N.shape[0]

    @property
    def M_inv(self) -> np.ndarray:
        return as_symmetric(np.linalg.inv(self.M))

    def to_dict(self) -> dict:
        return {
            'name': self.name,
            'K': self.K.tolist(),
            'M': self.M.tolist(),
            'F': self.F.tolist(),
            'N': self.N.tolist(),
        }


@dataclass(frozen=True)
class StateSpace:
    """Realization dx = A x dt + B dW, y = C x"""
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray


@dataclass(frozen=True)
class NormalizedSystem:
    """Identity-mass equivalent (Ktil, I, Ftil, Ntil) of an LSH system"""
    Ktil: np.ndarray
    Ftil: np.ndarray
    Ntil: np.ndarray

    def as_system(self, name: str = "normalized") -> LshSystem:
        n = self.Ktil.shape[0]
        return LshSystem(self.Ktil, np.eye(n), self.Ftil, self.Ntil, name=name)


def symplectic_matrix(n: int) -> np.ndarray:
    """J = [[0, 1], [-1, 0]] kron I_n"""
    return np.kron(np.array([[0.0, 1.0], [-1.0, 0.0]]), np.eye(n))


def energy_matrix(sys: LshSystem) -> np.ndarray:
    """R = diag(K, M^{-1}) so that H(x) = x^T R x / 2"""
    n = sys.n
    R = np.zeros((2 * n, 2 * n))
    R[:n, :n] = sys.K
    R[n:, n:] = sys.M_inv
    return R


def hamiltonian(sys: LshSystem, x) -> np.ndarray:
    """H(x) = x^T R x / 2 for a state or a stack of states (last axis 2n)"""
    x = np.asarray(x, dtype=float)
    return 0.5 * np.einsum('...i,ij,...j->...', x, energy_matrix(sys), x)


def kinetic_energy(sys: LshSystem, p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return 0.5 * np.einsum('...i,ij,...j->...', p, sys.M_inv, p)


def output(sys: LshSystem, q) -> np.ndarray:
    """y = N q (works on stacks of positions)"""
    return np.asarray(q, dtype=float) @ sys.N.T


def realize(sys: LshSystem) -> StateSpace:
    """State-space matrices A = [[0, M^-1], [-K, -F M^-1]], B = [0; N^T], C = [N, 0]"""
    n, m = sys.n, sys.m
    M_inv = sys.M_inv

    A = np.zeros((2 * n, 2 * n))
    A[:n, n:] = M_inv
    A[n:, :n] = -sys.K
    A[n:, n:] = -sys.F @ M_inv

    B = np.zeros((2 * n, m))
    B[n:, :] = sys.N.T

    C = np.zeros((m, 2 * n))
    C[:, :n] = sys.N

    # A must coincide with (J - diag(0, 1) kron F) R
    damping = np.kron(np.array([[0.0, 0.0], [0.0, 1.0]]), sys.F)
    A_structured = (symplectic_matrix(n) - damping) @ energy_matrix(sys)
    defect = np.linalg.norm(A - A_structured)
    if defect > 1e-12 * (1.0 + np.linalg.norm(A)):
        raise NumericalFailure(f"realization does not match its Hamiltonian structure (defect {defect:.3e})")

    return StateSpace(A=A, B=B, C=C)


def similarity_transform(sys: LshSystem) -> Tuple[np.ndarray, np.ndarray]:
    """T = diag(sqrt(M), M^{-1/2}) and its inverse; T A T^{-1} is the identity-mass A"""
    n = sys.n
    root, inv_root = spd_sqrt(sys.M)
    T = np.zeros((2 * n, 2 * n))
    T[:n, :n] = root
    T[n:, n:] = inv_root
    T_inv = np.zeros((2 * n, 2 * n))
    T_inv[:n, :n] = inv_root
    T_inv[n:, n:] = root
    return T, T_inv


def normalize_mass(sys: LshSystem) -> NormalizedSystem:
    """Ktil = M^{-1/2} K M^{-1/2}, Ftil likewise, Ntil = N M^{-1/2}"""
    _, inv_root = spd_sqrt(sys.M)
    normalized = NormalizedSystem(
        Ktil=as_symmetric(inv_root @ sys.K @ inv_root),
        Ftil=as_symmetric(inv_root @ sys.F @ inv_root),
        Ntil=sys.N @ inv_root,
    )

    A = realize(sys).A
    A_tilde = realize(normalized.as_system()).A
    scale = 1.0 + np.linalg.norm(A)
    if abs(np.trace(A) - np.trace(A_tilde)) > 1e-9 * scale:
        raise NumericalFailure("mass normalisation changed trace(A)")
    det_a, det_t = np.linalg.det(A), np.linalg.det(A_tilde)
    if abs(det_a - det_t) > 1e-9 * max(1.0, abs(det_a)):
        raise NumericalFailure("mass normalisation changed det(A)")

    return normalized


def _pencil(normalized: NormalizedSystem, s: complex) -> np.ndarray:
    n = normalized.Ktil.shape[0]
    return s * s * np.eye(n) + s * normalized.Ftil + normalized.Ktil


def transfer(sys: LshSystem, s: complex) -> np.ndarray:
    """Phi(s) = Ntil (s^2 I + s Ftil + Ktil)^{-1} Ntil^T (complex m x m)"""
    s = complex(s)
    normalized = normalize_mass(sys)
    pencil = _pencil(normalized, s)
    cond = np.linalg.cond(pencil)
    if not np.isfinite(cond) or cond > SINGULAR_COND:
        raise SingularityError(f"s = {s} is a root of the quadratic pencil")
    Phi = normalized.Ntil @ np.linalg.solve(pencil, normalized.Ntil.T.astype(complex))

    ss = realize(sys)
    resolvent = s * np.eye(2 * sys.n) - ss.A
    if np.linalg.cond(resolvent) < SINGULAR_COND:
        Phi_ss = ss.C @ np.linalg.solve(resolvent, ss.B.astype(complex))
        mismatch = np.linalg.norm(Phi - Phi_ss)
        if mismatch > 1e-9 * (1.0 + np.linalg.norm(Phi)):
            logger.warning(f"transfer function formulas disagree at s={s}: {mismatch:.3e}")

    return Phi


def static_gain(sys: LshSystem) -> np.ndarray:
    """Phi(0) = N K^{-1} N^T, symmetric; K must be nonsingular"""
    cond = np.linalg.cond(sys.K)
    if not np.isfinite(cond) or cond > SINGULAR_COND:
        raise SingularityError("stiffness matrix K is singular; the static gain is undefined")
    if cond > WARN_COND:
        logger.warning(f"stiffness matrix K is ill-conditioned (cond = {cond:.3e})")

    gain = sys.N @ np.linalg.solve(sys.K, sys.N.T)
    asymmetry = np.max(np.abs(gain - gain.T)) if gain.size else 0.0
    if asymmetry > 1e-12 * (1.0 + np.max(np.abs(gain))):
        logger.warning(f"static gain asymmetry {asymmetry:.3e} before symmetrisation")
    return as_symmetric(gain)


def char_poly_eval(sys: LshSystem, s: complex) -> complex:
    """chi(s) = det(s^2 I + s Ftil + Ktil), equal to det(s I - A)"""
    s = complex(s)
    chi = complex(np.linalg.det(_pencil(normalize_mass(sys), s)))

    A = realize(sys).A
    chi_ss = complex(np.linalg.det(s * np.eye(2 * sys.n) - A))
    if abs(chi - chi_ss) > 1e-8 * max(1.0, abs(chi)):
        logger.warning(f"characteristic polynomial cross-check failed at s={s}: {chi} vs {chi_ss}")
    return chi
