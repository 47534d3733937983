"""
Robust second-moment bounds under statistically uncertain forces

A force belongs to the uncertainty class (gamma, Delta) when, at every time
and state, <Ntil Ntil^T, Sigma> + 2 x^T Gamma alpha <= gamma + ||x||^2_Delta.
For Delta < Psi the deformed Hamiltonian then obeys
E Ups(t) <= gamma / (2 mu) + exp(-mu t) (E Ups(0) - gamma / (2 mu)).
"""

import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Tuple

import numpy as np
import pandas as pd

from .exceptions import ConditionsNotMet, DimensionError, InadmissibleClassError, MissingForcePathError
from .model import LshSystem, normalize_mass
from .numlin import as_symmetric, definiteness_tol, min_gen_eig, sym_eig
from .stability import certificate, deformation_matrix, eps_bounds

logger = logging.getLogger(__name__)

# Pointwise slack allowed in the class inequality
ADMISSIBILITY_SLACK = 1e-9
# Strictness margin for Delta < Psi, relative to 1 + ||Psi||_F
STRICTNESS_MARGIN = 1e-10
# Forward differences of Z may exceed zero by this many standard errors
SUPERMARTINGALE_SLACK = 3.0


@dataclass(frozen=True)
class UncertaintyClass:
    gamma: float
    Delta: np.ndarray

    def __post_init__(self):
        if not self.gamma >= 0:
            raise InadmissibleClassError(f"gamma must be non-negative, got {self.gamma}")
        Delta = as_symmetric(self.Delta, "Delta")
        if sym_eig(Delta).lambda_min < -definiteness_tol(Delta):
            raise InadmissibleClassError("Delta must be positive semi-definite")
        object.__setattr__(self, 'gamma', float(self.gamma))
        object.__setattr__(self, 'Delta', Delta)

    @classmethod
    def scaled_identity(cls, gamma: float, delta: float, n: int) -> 'UncertaintyClass':
        return cls(gamma=gamma, Delta=delta * np.eye(2 * n))

    def to_dict(self) -> dict:
        return {'gamma': self.gamma, 'Delta': self.Delta.tolist()}


@dataclass(frozen=True)
class RobustBound:
    eps: float
    mu: float
    lambda_min_Q: float
    lambda_max_Q: float
    gamma: float
    initial_energy: float

    @property
    def asymptotic_bound(self) -> float:
        """Bound on limsup E|x(t)|^2"""
        return self.gamma / (self.lambda_min_Q * self.mu)

    @property
    def energy_limit(self) -> float:
        return self.gamma / (2.0 * self.mu)

    def transient(self, t) -> np.ndarray:
        """Bound on E Ups(x(t))"""
        t = np.asarray(t, dtype=float)
        return self.energy_limit + np.exp(-self.mu * t) * (self.initial_energy - self.energy_limit)

    def to_dict(self) -> dict:
        return {
            'eps': self.eps,
            'mu': self.mu,
            'lambda_min_Q': self.lambda_min_Q,
            'asymptotic_bound': self.asymptotic_bound,
            'energy_limit': self.energy_limit,
            'initial_energy_bound': self.initial_energy,
        }


class AdmissibilityResult(NamedTuple):
    passed: bool
    worst_margin: float


@dataclass(frozen=True)
class DissipationAudit:
    """Per-path residuals of the discretised dissipation identity"""
    residual: np.ndarray
    residual_predicted: np.ndarray
    dt: float


@dataclass(frozen=True)
class SupermartingaleResult:
    nonincreasing: bool
    max_uptick: float
    times: np.ndarray = field(repr=False)
    z: np.ndarray = field(repr=False)
    z_sem: np.ndarray = field(repr=False)
    low_power: bool = False


def gamma_matrix(sys: LshSystem, eps: float) -> np.ndarray:
    """Gamma = [eps I; M^-1] N^T, equal to Q B"""
    n = sys.n
    stacked = np.vstack([eps * np.eye(n), sys.M_inv])
    return stacked @ sys.N.T


def exact_initial_energy(Q, mean, cov) -> float:
    """E Ups(0) = <Q, Cov> / 2 + ||mean||^2_Q / 2 for a known initial law"""
    Q = np.asarray(Q, dtype=float)
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    return float(0.5 * np.sum(Q * cov) + 0.5 * mean @ Q @ mean)


def robust_bound(sys: LshSystem, eps: float, uc: UncertaintyClass, second_moment_x0: float = 0.0,
                 initial_energy: Optional[float] = None) -> RobustBound:
    """
    mu = lambda_min((Psi - Delta) Q^-1) and the bounds that follow from it.

    E Ups(0) is bounded by lambda_max(Q) E|x(0)|^2 / 2 unless the exact value
    is passed as initial_energy.
    """
    if uc.Delta.shape != (2 * sys.n, 2 * sys.n):
        raise DimensionError(f"Delta must be {2 * sys.n}x{2 * sys.n}, got {uc.Delta.shape}")
    if not np.isfinite(second_moment_x0) or second_moment_x0 < 0:
        raise ValueError("second_moment_x0 must be finite and non-negative")

    cert = certificate(sys, eps)
    if not cert.valid:
        logger.error(f"No Lyapunov certificate for {sys.name} at eps={eps}")
        raise ConditionsNotMet(f"eps={eps} does not give a valid certificate",
                               failing={'Q': cert.q_min_eig, 'Psi': cert.psi_min_eig})

    slack = sym_eig(cert.Psi - uc.Delta).lambda_min
    if slack <= STRICTNESS_MARGIN * (1.0 + np.linalg.norm(cert.Psi)):
        logger.error(f"Delta is not dominated by Psi (lambda_min(Psi - Delta) = {slack:.3e})")
        raise InadmissibleClassError(f"Delta < Psi fails: lambda_min(Psi - Delta) = {slack:.3e}")

    mu = min_gen_eig(cert.Psi - uc.Delta, cert.Q)
    spectrum = sym_eig(cert.Q)
    if initial_energy is None:
        initial_energy = 0.5 * spectrum.lambda_max * second_moment_x0

    bound = RobustBound(eps=float(eps), mu=mu, lambda_min_Q=spectrum.lambda_min,
                        lambda_max_Q=spectrum.lambda_max, gamma=uc.gamma,
                        initial_energy=float(initial_energy))
    logger.info(f"Robust bound for {sys.name}: eps={eps:.6g}, mu={mu:.6g}, "
                f"limsup E|x|^2 <= {bound.asymptotic_bound:.6g}")
    return bound


def _require_force(traj):
    if getattr(traj, 'force', None) is None:
        raise MissingForcePathError("trajectory carries no realised force path")
    return traj.force


def class_margins(sys: LshSystem, eps: float, uc: UncertaintyClass, traj) -> np.ndarray:
    """m_k = gamma + ||x_k||^2_Delta - <Ntil Ntil^T, Sigma_k> - 2 x_k^T Gamma alpha_k, shape (P, K)"""
    force = _require_force(traj)
    x = traj.states[:, :-1]
    Ntil = normalize_mass(sys).Ntil
    NNt = Ntil @ Ntil.T
    Gamma = gamma_matrix(sys, eps)

    quad = np.einsum('pki,ij,pkj->pk', x, uc.Delta, x)
    diffusion = np.einsum('ij,...ij->...', NNt, force.realized_sigma)
    drift = 2.0 * np.einsum('pki,im,pkm->pk', x, Gamma, force.alpha_full())
    return uc.gamma + quad - np.broadcast_to(diffusion, quad.shape) - drift


def admissibility_check(sys: LshSystem, eps: float, uc: UncertaintyClass, traj) -> AdmissibilityResult:
    margins = class_margins(sys, eps, uc, traj)
    worst = float(np.min(margins))
    return AdmissibilityResult(passed=worst >= -ADMISSIBILITY_SLACK, worst_margin=worst)


def dissipation_audit(sys: LshSystem, eps: float, traj, model=None) -> DissipationAudit:
    """
    Ups(x_K) - Ups(x_0) minus the discretised right-hand side
    sum_k [(-||x_k||^2_Psi / 2 + x_k^T Gamma alpha_k) dt + x_k^T Gamma beta Delta omega_k] + Ito term.

    The Ito term uses the realised quadratic variation of the martingale part
    (beta Delta omega) for `residual` and <Ntil Ntil^T, Sigma_k> dt for
    `residual_predicted`. Psi here is the exact -QA - A^T Q.
    """
    force = _require_force(traj)
    dt = force.dt
    x, x_start, x_end = traj.states[:, :-1], traj.states[:, 0], traj.states[:, -1]

    Q = deformation_matrix(sys, eps)
    Psi = certificate(sys, eps).Psi_exact
    Gamma = gamma_matrix(sys, eps)
    Ntil = normalize_mass(sys).Ntil
    NNt = Ntil @ Ntil.T

    ups_change = 0.5 * (np.einsum('pi,ij,pj->p', x_end, Q, x_end) - np.einsum('pi,ij,pj->p', x_start, Q, x_start))
    rate = -0.5 * np.einsum('pki,ij,pkj->pk', x, Psi, x) + np.einsum('pki,im,pkm->pk', x, Gamma, force.alpha_full())
    drift = rate @ dt
    martingale = np.einsum('pki,im,pkm->p', x, Gamma, force.noise)
    ito_realized = 0.5 * np.einsum('pki,ij,pkj->p', force.noise, NNt, force.noise)
    ito_predicted = 0.5 * np.broadcast_to(np.einsum('ij,...ij->...', NNt, force.realized_sigma),
                                          (x.shape[0], dt.shape[0])) @ dt

    base = ups_change - drift - martingale
    return DissipationAudit(residual=base - ito_realized, residual_predicted=base - ito_predicted,
                            dt=float(np.max(dt)))


def supermartingale_check(sys: LshSystem, eps: float, uc: UncertaintyClass, ensemble,
                          margins=None) -> SupermartingaleResult:
    """
    Z(t) = exp(mu t) (mean Ups(x(t)) - gamma / (2 mu)) on the ensemble's record grid.

    Nonincreasing when every forward difference is at most three standard
    errors of the paired difference (plus 1e-9).
    """
    if margins is None:
        margins = ensemble.extras.get('admissibility_margin')
    if margins is None:
        logger.warning("admissibility of the ensemble paths was not verified")
    elif np.min(margins) < -ADMISSIBILITY_SLACK:
        bad = int(np.sum(np.asarray(margins) < -ADMISSIBILITY_SLACK))
        logger.error(f"{bad} ensemble paths leave the uncertainty class")
        raise InadmissibleClassError(f"{bad} paths violate the class inequality")

    bound = robust_bound(sys, eps, uc)
    times = np.asarray(ensemble.times)
    Q = deformation_matrix(sys, eps)
    ups = 0.5 * np.einsum('pri,ij,prj->pr', ensemble.states, Q, ensemble.states)
    z_paths = np.exp(bound.mu * times) * (ups - bound.energy_limit)

    count = z_paths.shape[0]
    z = z_paths.mean(axis=0)
    differences = np.diff(z_paths, axis=1)
    low_power = count < 2
    if low_power:
        logger.warning("supermartingale test on a single path has no statistical power")
        z_sem = np.zeros_like(z)
        diff_sem = np.zeros(differences.shape[1])
    else:
        z_sem = z_paths.std(axis=0, ddof=1) / np.sqrt(count)
        diff_sem = differences.std(axis=0, ddof=1) / np.sqrt(count)

    steps = differences.mean(axis=0)
    nonincreasing = bool(np.all(steps <= SUPERMARTINGALE_SLACK * diff_sem + 1e-9))
    with np.errstate(divide='ignore', invalid='ignore'):
        upticks = np.where(diff_sem > 0, steps / diff_sem, np.where(steps > 1e-9, np.inf, 0.0))
    max_uptick = float(max(0.0, np.max(upticks))) if upticks.size else 0.0

    return SupermartingaleResult(nonincreasing=nonincreasing, max_uptick=max_uptick, times=times,
                                 z=z, z_sem=z_sem, low_power=low_power)


def moment_envelope(sys: LshSystem, bound: RobustBound, ensemble) -> pd.DataFrame:
    """Per record time: Monte Carlo mean Ups and E|x|^2 with standard errors against the bounds"""
    Q = deformation_matrix(sys, bound.eps)
    states = ensemble.states
    count = states.shape[0]
    ups = 0.5 * np.einsum('pri,ij,prj->pr', states, Q, states)
    sq_norm = np.einsum('pri,pri->pr', states, states)

    def sem(values):
        return values.std(axis=0, ddof=1) / np.sqrt(count) if count > 1 else np.zeros(values.shape[1])

    frame = pd.DataFrame({
        't': ensemble.times,
        'mean_ups': ups.mean(axis=0),
        'sem_ups': sem(ups),
        'transient_bound': bound.transient(ensemble.times),
        'mean_sq_norm': sq_norm.mean(axis=0),
        'sem_sq_norm': sem(sq_norm),
    })
    frame['asymptotic_bound'] = bound.asymptotic_bound
    frame['within_envelope'] = frame['mean_ups'] <= frame['transient_bound'] + 3.0 * frame['sem_ups']
    return frame


def scan_eps(sys: LshSystem, uc: UncertaintyClass, points: int = 100,
             second_moment_x0: float = 0.0) -> Tuple[float, pd.DataFrame]:
    """
    Evaluate the asymptotic bound on an interior grid of the eps window.

    Returns the eps with the smallest finite bound and the full table.
    """
    window = eps_bounds(sys)
    grid = window.upper * np.arange(1, points + 1) / (points + 1)
    rows = []
    for eps in grid:
        try:
            bound = robust_bound(sys, eps, uc, second_moment_x0)
            rows.append({'eps': eps, 'mu': bound.mu, 'asymptotic_bound': bound.asymptotic_bound})
        except (ConditionsNotMet, InadmissibleClassError):
            rows.append({'eps': eps, 'mu': np.nan, 'asymptotic_bound': np.inf})

    table = pd.DataFrame(rows)
    finite = table[np.isfinite(table['asymptotic_bound'])]
    if finite.empty:
        raise InadmissibleClassError("no eps in the window admits the uncertainty class")
    best = float(finite.loc[finite['asymptotic_bound'].idxmin(), 'eps'])
    logger.info(f"eps scan over {points} points: best eps={best:.6g}")
    return best, table
