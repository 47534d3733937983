"""
Stability certificates built on the deformed Hamiltonian

For an LSH system with K, M, F positive definite the quadratic form
Ups = x^T Q x / 2 = H + eps q^T p is a strict Lyapunov function whenever eps
lies inside the window returned by eps_bounds. Hurwitz tests go through the
Lyapunov equation instead of a nonsymmetric eigensolver.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import ConditionsNotMet, NoUniqueSolutionError, NumericalFailure
from .model import LshSystem, energy_matrix, hamiltonian, normalize_mass, realize
from .numlin import as_matrix, definiteness_tol, is_positive_definite, min_gen_eig, solve_lyapunov, sym_eig

logger = logging.getLogger(__name__)

HURWITZ = 'hurwitz'
MARGINAL = 'marginal'
UNSTABLE = 'unstable'


@dataclass(frozen=True)
class EpsWindow:
    """Admissible range 0 < eps < min(eps1_bound, eps2_bound)"""
    eps1_bound: float
    eps2_bound: float

    @property
    def upper(self) -> float:
        return min(self.eps1_bound, self.eps2_bound)

    def contains(self, eps: float) -> bool:
        return 0.0 < eps < self.upper


@dataclass(frozen=True)
class LyapunovCertificate:
    """
    Q and the dissipation matrix Psi for a given eps.

    Psi is the block form [[2 eps K, eps F M^-1], [eps M^-1 F, M^-1 F M^-1 - 2 eps M^-1]]
    on which the eps window is computed. The exact -QA - A^T Q exceeds it by
    diag(0, M^-1 F M^-1) and is kept in Psi_exact; Psi is therefore a lower
    bound on the true dissipation rate.
    """
    eps: float
    Q: np.ndarray
    Psi: np.ndarray
    Psi_exact: np.ndarray
    valid: bool
    q_min_eig: float
    psi_min_eig: float

    def to_dict(self) -> dict:
        return {
            'eps': self.eps,
            'Q': self.Q.tolist(),
            'Psi': self.Psi.tolist(),
            'valid': self.valid,
            'lambda_min_Q': self.q_min_eig,
            'lambda_min_Psi': self.psi_min_eig,
        }


@dataclass(frozen=True)
class HurwitzDiagnosis:
    """Outcome of the Lyapunov test A^T X + X A + I = 0"""
    status: str
    X: Optional[np.ndarray] = field(default=None, repr=False)
    min_eig: Optional[float] = None

    @property
    def hurwitz(self) -> bool:
        return self.status == HURWITZ


def _require_spd(sys: LshSystem, names=('K', 'F')):
    failing = {}
    for name in names:
        S = getattr(sys, name)
        if not is_positive_definite(S):
            failing[name] = sym_eig(S).lambda_min
    if failing:
        message = ", ".join(f"{name} not positive definite" for name in failing)
        logger.error(f"Stability hypotheses fail for {sys.name}: {message}")
        raise ConditionsNotMet(message, failing=failing)


def eps_bounds(sys: LshSystem) -> EpsWindow:
    """eps1 = sqrt(lambda_min(Ktil)), eps2 = lambda_min((I + Ftil Ktil^-1 Ftil / 4)^-1 Ftil) / 2"""
    _require_spd(sys)
    normalized = normalize_mass(sys)
    Ktil, Ftil = normalized.Ktil, normalized.Ftil

    eps1 = float(np.sqrt(sym_eig(Ktil).lambda_min))
    # (I + Ftil Ktil^-1 Ftil / 4)^-1 Ftil has the spectrum of the pencil (Ftil, I + ...)
    weight = np.eye(sys.n) + 0.25 * Ftil @ np.linalg.solve(Ktil, Ftil)
    eps2 = 0.5 * min_gen_eig(Ftil, weight)

    logger.info(f"eps window for {sys.name}: eps1 < {eps1:.6g}, eps2 < {eps2:.6g}")
    return EpsWindow(eps1_bound=eps1, eps2_bound=float(eps2))


def default_eps(window: EpsWindow) -> float:
    return 0.5 * window.upper


def deformation_matrix(sys: LshSystem, eps: float) -> np.ndarray:
    """Q = R + eps [[0, I], [I, 0]]"""
    n = sys.n
    Q = energy_matrix(sys)
    Q[:n, n:] += eps * np.eye(n)
    Q[n:, :n] += eps * np.eye(n)
    return Q


def certificate(sys: LshSystem, eps: float) -> LyapunovCertificate:
    n = sys.n
    eps = float(eps)
    M_inv = sys.M_inv
    Q = deformation_matrix(sys, eps)

    Psi = np.zeros((2 * n, 2 * n))
    Psi[:n, :n] = 2.0 * eps * sys.K
    Psi[:n, n:] = eps * sys.F @ M_inv
    Psi[n:, :n] = eps * M_inv @ sys.F
    Psi[n:, n:] = M_inv @ sys.F @ M_inv - 2.0 * eps * M_inv
    Psi = 0.5 * (Psi + Psi.T)

    A = realize(sys).A
    Psi_exact = -Q @ A - A.T @ Q
    Psi_exact = 0.5 * (Psi_exact + Psi_exact.T)
    excess = np.zeros((2 * n, 2 * n))
    excess[n:, n:] = M_inv @ sys.F @ M_inv
    defect = np.linalg.norm(Psi_exact - Psi - excess)
    if defect > 1e-12 * (1.0 + np.linalg.norm(Psi_exact)):
        raise NumericalFailure(f"dissipation matrix does not match -QA - A^T Q (defect {defect:.3e})")

    q_min = sym_eig(Q).lambda_min
    psi_min = sym_eig(Psi).lambda_min
    valid = q_min > definiteness_tol(Q) and psi_min > definiteness_tol(Psi)
    if not valid:
        logger.debug(f"eps={eps} gives no certificate for {sys.name} "
                     f"(lambda_min Q = {q_min:.3e}, lambda_min Psi = {psi_min:.3e})")

    return LyapunovCertificate(eps=eps, Q=Q, Psi=Psi, Psi_exact=Psi_exact, valid=bool(valid),
                               q_min_eig=q_min, psi_min_eig=psi_min)


def hurwitz_diagnosis(A) -> HurwitzDiagnosis:
    """Solve A^T X + X A = -I; Hurwitz iff the solve succeeds with X positive definite"""
    A = as_matrix(A, "A")
    try:
        X = solve_lyapunov(A.T, np.eye(A.shape[0]))
    except NoUniqueSolutionError:
        logger.warning("Lyapunov test is singular: spectrum of A touches the imaginary axis")
        return HurwitzDiagnosis(status=MARGINAL)

    min_eig = sym_eig(X).lambda_min
    status = HURWITZ if min_eig > definiteness_tol(X) else UNSTABLE
    return HurwitzDiagnosis(status=status, X=X, min_eig=min_eig)


def is_hurwitz(A) -> bool:
    return hurwitz_diagnosis(A).hurwitz


def deformed_hamiltonian(sys: LshSystem, eps: float, x) -> np.ndarray:
    """Ups = x^T Q x / 2 = H(x) + eps q^T p (accepts stacks of states)"""
    x = np.asarray(x, dtype=float)
    n = sys.n
    Q = deformation_matrix(sys, eps)
    ups = 0.5 * np.einsum('...i,ij,...j->...', x, Q, x)

    expanded = hamiltonian(sys, x) + eps * np.einsum('...i,...i->...', x[..., :n], x[..., n:])
    if np.any(np.abs(ups - expanded) > 1e-12 * (1.0 + np.abs(ups))):
        logger.warning("deformed Hamiltonian: quadratic form and H + eps q^T p disagree")
    return ups


def lyapunov_rate(sys: LshSystem, eps: float, x) -> np.ndarray:
    """d Ups / dt along dx/dt = A x, equal to -||x||^2_{-QA-A^T Q} / 2"""
    x = np.asarray(x, dtype=float)
    Psi_exact = certificate(sys, eps).Psi_exact
    return -0.5 * np.einsum('...i,ij,...j->...', x, Psi_exact, x)
