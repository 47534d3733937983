"""
Kalman filtering of positions from the observed momentum history

With a stationary Gaussian start the conditional mean of q(t) given the
momentum path obeys an innovation-driven linear SDE whose error covariance
is known in closed form, P(t) = (P0^-1 + t K D^-1 K)^-1 with D = N^T N.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd

from .exceptions import GridError, MissingForcePathError, NotPositiveDefiniteError, SingularityError
from .invariant import InvariantMeasure, covariance_with_errors
from .model import LshSystem
from .numlin import as_symmetric, is_positive_definite, sym_eig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FilterSetup:
    qhat0_gain: np.ndarray
    P0: np.ndarray
    D: np.ndarray

    def to_dict(self) -> dict:
        return {'qhat0_gain': self.qhat0_gain.tolist(), 'P0': self.P0.tolist(), 'D': self.D.tolist()}


@dataclass(frozen=True)
class FilterRun:
    """Estimates qhat (P, K + 1, n), errors q - qhat, innovations dp - fhat dt and P(t_k)"""
    times: np.ndarray
    qhat: np.ndarray = field(repr=False)
    error: np.ndarray = field(repr=False)
    innovations: np.ndarray = field(repr=False)
    P: np.ndarray = field(repr=False)


def filter_setup(sys: LshSystem, meas: InvariantMeasure) -> FilterSetup:
    """qhat(0) = Pi12 Pi22^-1 p(0) with prior error covariance P0 = Pi11 - Pi12 Pi22^-1 Pi21"""
    D = as_symmetric(sys.N.T @ sys.N)
    if not is_positive_definite(D):
        logger.error(f"N^T N is singular for {sys.name}; momentum does not observe every position")
        raise SingularityError("D = N^T N is singular (N lacks full column rank)")
    if not is_positive_definite(meas.Pi22):
        logger.error(f"Pi22 is singular for {sys.name}")
        raise SingularityError("momentum block Pi22 of the invariant covariance is singular")

    gain = np.linalg.solve(meas.Pi22, meas.Pi21).T
    P0 = as_symmetric(meas.Pi11 - gain @ meas.Pi21)
    if not is_positive_definite(P0):
        raise NotPositiveDefiniteError(f"prior error covariance P0 not positive definite "
                                       f"(lambda_min = {sym_eig(P0).lambda_min:.3e})")
    return FilterSetup(qhat0_gain=gain, P0=P0, D=D)


def covariance_closed_form(setup: FilterSetup, K, t: float) -> np.ndarray:
    """P(t) = (P0^-1 + t K D^-1 K)^-1"""
    if t < 0:
        raise ValueError(f"t must be non-negative, got {t}")
    K = np.asarray(K, dtype=float)
    information = np.linalg.inv(setup.P0) + t * K @ np.linalg.solve(setup.D, K)
    return as_symmetric(np.linalg.inv(as_symmetric(information)))


def riccati_residual(setup: FilterSetup, K, t: float, h: float = 1e-4) -> float:
    """|| dP/dt + P K D^-1 K P || with dP/dt from a central difference"""
    K = np.asarray(K, dtype=float)
    P = covariance_closed_form(setup, K, t)
    derivative = (covariance_closed_form(setup, K, t + h) - covariance_closed_form(setup, K, max(t - h, 0.0)))
    derivative /= (t + h) - max(t - h, 0.0)
    return float(np.linalg.norm(derivative + P @ K @ np.linalg.solve(setup.D, K) @ P))


def run_filter(sys: LshSystem, traj, setup: FilterSetup, qhat0: Optional[np.ndarray] = None) -> FilterRun:
    """
    Discretise dqhat = M^-1 p dt - P K D^-1 (dp - fhat dt), fhat = -K qhat - F M^-1 p.

    The M^-1 p dt term is integrated with the trapezoid rule, the innovation
    at the left end of each step. qhat0 overrides the stationary prior mean
    qhat0_gain p(0) (for instance when q(0) is known).
    """
    times = np.asarray(traj.times, dtype=float)
    if abs(times[0]) > 1e-12:
        raise GridError("filter grid must start at t = 0 where P(0) = P0")
    if np.any(np.diff(times) <= 0):
        raise GridError("filter grid must be strictly increasing")

    n = sys.n
    q, p = traj.states[..., :n], traj.states[..., n:]
    M_inv, K, F = sys.M_inv, sys.K, sys.F
    covariances = np.stack([covariance_closed_form(setup, K, t) for t in times])
    gains = covariances @ K @ np.linalg.inv(setup.D)

    count, steps = q.shape[0], times.shape[0] - 1
    qhat = np.empty_like(q)
    innovations = np.empty((count, steps, n))
    if qhat0 is None:
        qhat[:, 0] = p[:, 0] @ setup.qhat0_gain.T
    else:
        qhat[:, 0] = np.broadcast_to(np.asarray(qhat0, dtype=float), (count, n))

    dt = np.diff(times)
    for k in range(steps):
        fhat = -qhat[:, k] @ K - p[:, k] @ (F @ M_inv).T
        innovations[:, k] = p[:, k + 1] - p[:, k] - fhat * dt[k]
        transport = 0.5 * (p[:, k] + p[:, k + 1]) @ M_inv * dt[k]
        qhat[:, k + 1] = qhat[:, k] + transport - innovations[:, k] @ gains[k].T

    return FilterRun(times=times, qhat=qhat, error=q - qhat, innovations=innovations, P=covariances)


def error_increment_check(sys: LshSystem, run: FilterRun, traj) -> float:
    """
    Relative RMS gap between the realised error increments and
    P K D^-1 (-K e dt + N^T Delta W).
    """
    if traj.force is None:
        raise MissingForcePathError("trajectory carries no force path")
    D = sys.N.T @ sys.N
    gains = run.P[:-1] @ sys.K @ np.linalg.inv(D)
    dt = np.diff(run.times)
    e = run.error
    drive = -e[:, :-1] @ sys.K * dt[None, :, None] + traj.force.increments @ sys.N
    predicted = np.einsum('kij,pkj->pki', gains, drive)
    realised = np.diff(e, axis=1)
    scale = np.sqrt(np.mean(realised ** 2))
    if scale == 0:
        return 0.0
    return float(np.sqrt(np.mean((realised - predicted) ** 2)) / scale)


def _probe_indices(times, probe_times):
    indices = np.searchsorted(times, np.asarray(probe_times, dtype=float) - 1e-12)
    if np.any(indices >= times.shape[0]) or np.any(np.abs(times[indices] - probe_times) > 1e-9 * max(1.0, times[-1])):
        raise GridError("probe times must lie on the filter grid")
    return indices


def empirical_error_table(run: FilterRun, probe_times) -> pd.DataFrame:
    """Empirical E[e e^T] and mean error at each probe time against the closed-form P(t)"""
    rows = []
    for t, k in zip(probe_times, _probe_indices(run.times, probe_times)):
        e = run.error[:, k]
        cov, sem = covariance_with_errors(e)
        mean = e.mean(axis=0)
        mean_sem = e.std(axis=0, ddof=1) / np.sqrt(e.shape[0]) if e.shape[0] > 1 else np.full(e.shape[1], np.inf)
        n = e.shape[1]
        for i in range(n):
            for j in range(n):
                rows.append({
                    't': float(t), 'i': i, 'j': j,
                    'empirical_cov': cov[i, j],
                    'sem_cov': sem[i, j],
                    'closed_form': run.P[k, i, j],
                    'mean_error': mean[i] if i == j else np.nan,
                    'sem_mean': mean_sem[i] if i == j else np.nan,
                })
    table = pd.DataFrame(rows)
    table['z_cov'] = (table['empirical_cov'] - table['closed_form']) / table['sem_cov']
    return table


def orthogonality_table(run: FilterRun, traj, probe_times) -> pd.DataFrame:
    """Cross moments E[e_i p_j] at the probe times, which vanish for the conditional mean"""
    n = traj.n
    rows = []
    for t, k in zip(probe_times, _probe_indices(run.times, probe_times)):
        products = run.error[:, k, :, None] * traj.states[:, k, None, n:]
        mean = products.mean(axis=0)
        sem = products.std(axis=0, ddof=1) / np.sqrt(products.shape[0])
        for i in range(n):
            for j in range(n):
                rows.append({'t': float(t), 'i': i, 'j': j, 'cross_moment': mean[i, j], 'sem': sem[i, j]})
    table = pd.DataFrame(rows)
    table['z'] = table['cross_moment'] / table['sem']
    return table
