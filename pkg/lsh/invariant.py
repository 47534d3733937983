"""
Invariant Gaussian measure of an LSH system under standard Wiener forcing

The stationary covariance Pi solves A Pi + Pi A^T + B B^T = 0. Its blocks
satisfy three Sylvester equations, Pi12 M^-1 is antisymmetric and the trace
of Pi12 vanishes, which is the stochastic virial theorem.
"""

import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Tuple

import numpy as np
import pandas as pd
import scipy.linalg
from scipy.integrate import simpson

from .exceptions import ConditionsNotMet, DimensionError, NumericalFailure
from .model import LshSystem, realize
from .numlin import as_matrix, as_symmetric, is_positive_definite, solve_lyapunov, sym_eig
from .stability import hurwitz_diagnosis

logger = logging.getLogger(__name__)

# Horizon for the Gramian integral is grown until ||exp(T A)|| drops below this
GRAMIAN_TAIL = 1e-8


@dataclass(frozen=True)
class InvariantMeasure:
    """Zero-mean Gaussian N(0, Pi) on the phase space"""
    Pi: np.ndarray
    n: int
    Xi: np.ndarray = field(repr=False)
    xi_defect: float = 0.0
    full_rank_coupling: bool = True

    @property
    def Pi11(self) -> np.ndarray:
        return self.Pi[:self.n, :self.n]

    @property
    def Pi12(self) -> np.ndarray:
        return self.Pi[:self.n, self.n:]

    @property
    def Pi21(self) -> np.ndarray:
        return self.Pi[self.n:, :self.n]

    @property
    def Pi22(self) -> np.ndarray:
        return self.Pi[self.n:, self.n:]

    def to_dict(self) -> dict:
        return {
            'Pi': self.Pi.tolist(),
            'Xi': self.Xi.tolist(),
            'xi_antisymmetry_defect': self.xi_defect,
            'full_rank_coupling': self.full_rank_coupling,
        }


class SylvesterResiduals(NamedTuple):
    ase11: float
    ase12: float
    ase22: float


@dataclass(frozen=True)
class VirialReport:
    mean_kinetic: float
    virial_rhs: float
    trace_pi12: float

    @property
    def defect(self) -> float:
        return self.mean_kinetic - self.virial_rhs

    def to_dict(self) -> dict:
        return {
            'mean_kinetic': self.mean_kinetic,
            'virial_rhs': self.virial_rhs,
            'trace_pi12': self.trace_pi12,
            'moment_of_inertia_rate': self.trace_pi12,
        }


class ControllabilityBound(NamedTuple):
    bound_matrix: np.ndarray
    min_eig: float
    full_rank_coupling: bool


def measure_from_covariance(sys: LshSystem, Pi) -> InvariantMeasure:
    """Wrap a covariance matrix, extracting Xi = Pi12 M^-1 (antisymmetrised)"""
    Pi = as_symmetric(Pi, "Pi")
    n = sys.n
    if Pi.shape != (2 * n, 2 * n):
        raise DimensionError(f"Pi must be {2 * n}x{2 * n}, got {Pi.shape}")
    raw = Pi[:n, n:] @ sys.M_inv
    Xi = 0.5 * (raw - raw.T)
    D = sys.N.T @ sys.N
    return InvariantMeasure(
        Pi=Pi,
        n=n,
        Xi=Xi,
        xi_defect=float(np.linalg.norm(raw + raw.T)),
        full_rank_coupling=bool(is_positive_definite(D)),
    )


def invariant_covariance(sys: LshSystem) -> InvariantMeasure:
    ss = realize(sys)
    diagnosis = hurwitz_diagnosis(ss.A)
    if not diagnosis.hurwitz:
        logger.error(f"No invariant measure for {sys.name}: A is {diagnosis.status}")
        raise ConditionsNotMet(f"no invariant measure: A is {diagnosis.status}",
                               failing={'A': diagnosis.status})

    BBt = ss.B @ ss.B.T
    Pi = solve_lyapunov(ss.A, BBt)
    residual = np.linalg.norm(ss.A @ Pi + Pi @ ss.A.T + BBt)
    meas = measure_from_covariance(sys, Pi)

    if not meas.full_rank_coupling:
        logger.warning(f"N^T N is singular for {sys.name}; Pi may be singular")
    logger.info(f"Invariant covariance for {sys.name}: ALE residual {residual:.3e}, "
                f"Xi antisymmetry defect {meas.xi_defect:.3e}")
    return meas


def sylvester_residuals(sys: LshSystem, meas: InvariantMeasure) -> SylvesterResiduals:
    """Frobenius norms of the (1,1), (1,2) and (2,2) block equations of the ALE"""
    if meas.n != sys.n:
        raise DimensionError(f"measure has n={meas.n}, system has n={sys.n}")
    M_inv, K, F = sys.M_inv, sys.K, sys.F
    D = sys.N.T @ sys.N
    P11, P12, P21, P22 = meas.Pi11, meas.Pi12, meas.Pi21, meas.Pi22

    r11 = M_inv @ P21 + P12 @ M_inv
    r12 = M_inv @ P22 - P11 @ K - P12 @ M_inv @ F
    r22 = D - K @ P12 - P21 @ K - F @ M_inv @ P22 - P22 @ M_inv @ F
    return SylvesterResiduals(
        ase11=float(np.linalg.norm(r11)),
        ase12=float(np.linalg.norm(r12)),
        ase22=float(np.linalg.norm(r22)),
    )


def virial_check(sys: LshSystem, meas: InvariantMeasure) -> VirialReport:
    """E T = tr(M^-1 Pi22)/2 against -E(q^T f)/2 with f = -K q - F M^-1 p"""
    M_inv = sys.M_inv
    mean_kinetic = 0.5 * np.trace(M_inv @ meas.Pi22)
    mean_qf = -np.trace(sys.K @ meas.Pi11) - np.trace(sys.F @ M_inv @ meas.Pi21)
    report = VirialReport(
        mean_kinetic=float(mean_kinetic),
        virial_rhs=float(-0.5 * mean_qf),
        trace_pi12=float(np.trace(meas.Pi12)),
    )
    if abs(report.defect) > 1e-9 * (1.0 + abs(report.mean_kinetic)):
        logger.warning(f"virial identity off by {report.defect:.3e} for {sys.name}")
    return report


def controllability_bound(sys: LshSystem) -> ControllabilityBound:
    """B B^T + A B B^T A^T, a lower bound on the controllability Gramian's integrand"""
    n = sys.n
    M_inv, F = sys.M_inv, sys.F
    D = sys.N.T @ sys.N
    MDM = M_inv @ D @ M_inv

    bound = np.zeros((2 * n, 2 * n))
    bound[:n, :n] = MDM
    bound[:n, n:] = -MDM @ F
    bound[n:, :n] = -F @ MDM
    bound[n:, n:] = D + F @ MDM @ F

    ss = realize(sys)
    BBt = ss.B @ ss.B.T
    direct = BBt + ss.A @ BBt @ ss.A.T
    defect = np.linalg.norm(direct - bound)
    if defect > 1e-12 * (1.0 + np.linalg.norm(direct)):
        raise NumericalFailure(f"controllability bound blocks disagree with B B^T + A B B^T A^T ({defect:.3e})")

    bound = as_symmetric(bound)
    return ControllabilityBound(
        bound_matrix=bound,
        min_eig=sym_eig(bound).lambda_min,
        full_rank_coupling=bool(is_positive_definite(D)),
    )


def _gramian_horizon(A: np.ndarray) -> float:
    horizon = 1.0
    while np.linalg.norm(scipy.linalg.expm(horizon * A), 2) > GRAMIAN_TAIL:
        horizon *= 2.0
        if horizon > 1e6:
            raise NumericalFailure("exp(tA) does not decay; A is not Hurwitz")
    return horizon


def gramian_integral(A, B, horizon: Optional[float] = None, points: int = 4001) -> np.ndarray:
    """
    Composite Simpson approximation of int_0^T exp(tA) B B^T exp(tA^T) dt.

    Without a horizon, T is doubled until ||exp(TA)|| <= 1e-8, which makes the
    result an approximation of the infinite-horizon controllability Gramian.
    """
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    if B.shape[0] != A.shape[0]:
        B = B.reshape(A.shape[0], -1)
    if points < 3 or points % 2 == 0:
        raise ValueError("points must be an odd integer >= 3")
    if horizon is None:
        horizon = _gramian_horizon(A)

    times = np.linspace(0.0, horizon, points)
    step = scipy.linalg.expm((times[1] - times[0]) * A)
    BBt = B @ B.T

    integrand = np.empty((points,) + A.shape)
    E = np.eye(A.shape[0])
    for k in range(points):
        integrand[k] = E @ BBt @ E.T
        E = step @ E

    return as_symmetric(simpson(integrand, x=times, axis=0))


def virial_empirical(sys: LshSystem, states) -> pd.DataFrame:
    """
    Monte Carlo virial quantities from sampled states (any leading shape, last axis 2n).

    Returns a frame indexed by ('mean', 'sem') with columns kinetic (T),
    virial (-q^T f / 2), qp (q^T p) and difference (kinetic - virial).
    """
    x = np.asarray(states, dtype=float).reshape(-1, 2 * sys.n)
    n = sys.n
    q, p = x[:, :n], x[:, n:]
    M_inv = sys.M_inv
    velocity = p @ M_inv
    force = -q @ sys.K - velocity @ sys.F

    samples = pd.DataFrame({
        'kinetic': 0.5 * np.einsum('ij,ij->i', p, velocity),
        'virial': -0.5 * np.einsum('ij,ij->i', q, force),
        'qp': np.einsum('ij,ij->i', q, p),
    })
    samples['difference'] = samples['kinetic'] - samples['virial']
    return samples.agg(['mean', 'sem'])


def covariance_with_errors(states) -> Tuple[np.ndarray, np.ndarray]:
    """Zero-mean second moments E[x x^T] and the standard error of each entry"""
    x = np.asarray(states, dtype=float)
    x = x.reshape(-1, x.shape[-1])
    products = np.einsum('si,sj->sij', x, x)
    count = products.shape[0]
    mean = products.mean(axis=0)
    sem = products.std(axis=0, ddof=1) / np.sqrt(count) if count > 1 else np.full_like(mean, np.inf)
    return mean, sem
