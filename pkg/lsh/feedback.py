"""
Feedback interconnection of two LSH systems

Each subsystem's output y_k = N_k q_k drives the other through its coupling
matrix. The closed loop is again an LSH system whose stiffness matrix is
positive definite exactly when the small-gain quantity
||K1^{-1/2} N1^T N2 K2^{-1/2}|| is below one.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import scipy.linalg

from .exceptions import ConditionsNotMet, DimensionError, NumericalFailure
from .forces import ForceModel
from .invariant import invariant_covariance
from .model import LshSystem, realize, static_gain
from .numlin import is_positive_definite, psd_factor, spd_sqrt, sym_eig
from .robust import UncertaintyClass, robust_bound
from .stability import certificate, default_eps, eps_bounds, hurwitz_diagnosis

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClosedLoop:
    loop: LshSystem
    subsystems: Tuple[LshSystem, LshSystem]


@dataclass(frozen=True)
class SmallGainReport:
    norm: float
    definite: bool
    sufficient_gain_product: float
    gain_identity: float

    def to_dict(self) -> dict:
        return {
            'norm': self.norm,
            'definite': self.definite,
            'sufficient_gain_product': self.sufficient_gain_product,
            'lambda_max_static_gains': self.gain_identity,
        }


def _loop_permutation(n: int) -> np.ndarray:
    """Maps (q1, p1, q2, p2) to (q1, q2, p1, p2)"""
    order = np.concatenate([np.arange(n), 2 * n + np.arange(n), n + np.arange(n), 3 * n + np.arange(n)])
    return np.eye(4 * n)[order]


def compose(s1: LshSystem, s2: LshSystem) -> ClosedLoop:
    if (s1.n, s1.m) != (s2.n, s2.m):
        logger.error(f"Cannot connect {s1.name} (n={s1.n}, m={s1.m}) with {s2.name} (n={s2.n}, m={s2.m})")
        raise DimensionError("feedback subsystems must share n and m")
    n = s1.n
    coupling = s1.N.T @ s2.N

    K = np.block([[s1.K, -coupling], [-coupling.T, s2.K]])
    M = scipy.linalg.block_diag(s1.M, s2.M)
    F = scipy.linalg.block_diag(s1.F, s2.F)
    N = scipy.linalg.block_diag(s1.N, s2.N)
    loop = LshSystem(K, M, F, N, name=f"{s1.name}*{s2.name}")

    # the interconnection of the two state equations with dW_k containing y_{3-k} dt
    ss1, ss2 = realize(s1), realize(s2)
    A_connected = np.block([[ss1.A, ss1.B @ ss2.C], [ss2.B @ ss1.C, ss2.A]])
    T = _loop_permutation(n)
    defect = np.linalg.norm(T @ A_connected @ T.T - realize(loop).A)
    if defect > 1e-12 * (1.0 + np.linalg.norm(A_connected)):
        raise NumericalFailure(f"closed-loop realization disagrees with the interconnection ({defect:.3e})")

    logger.info(f"Composed {loop.name}: n={loop.n}, m={loop.m}")
    return ClosedLoop(loop=loop, subsystems=(s1, s2))


def stacked_force(model1: ForceModel, model2: ForceModel, n: int) -> ForceModel:
    """
    The closed-loop force W = (W1, W2).

    Subsystem k sees its own phase-space slice (q_k, p_k) of the loop state
    (q1, q2, p1, p2).
    """
    m1, m2 = model1.m, model2.m
    m = m1 + m2

    def slices(x):
        x = np.atleast_2d(x)
        first = np.concatenate([x[:, :n], x[:, 2 * n:3 * n]], axis=1)
        second = np.concatenate([x[:, n:2 * n], x[:, 3 * n:]], axis=1)
        return first, second

    def alpha(t, x):
        first, second = slices(x)
        return np.concatenate([model1.drift_at(t, first), model2.drift_at(t, second)], axis=1)

    def beta(t, x):
        first, second = slices(x)
        out = np.zeros((first.shape[0], m, m))
        out[:, :m1, :m1] = model1.factor_at(t, first)
        out[:, m1:, m1:] = model2.factor_at(t, second)
        return out

    alpha0 = beta0 = None
    if model1.is_constant and model2.is_constant:
        alpha0 = np.concatenate([model1.alpha0, model2.alpha0])
        beta0 = scipy.linalg.block_diag(model1.beta0, model2.beta0)

    kind = model1.kind if model1.kind == model2.kind else 'stacked'
    return ForceModel(kind=kind, m=m, alpha=alpha, beta=beta, alpha0=alpha0, beta0=beta0,
                      description={'kind': 'stacked', 'parts': [model1.description, model2.description]})


def _stiffness_check(s1: LshSystem, s2: LshSystem):
    failing = {}
    for label, sys in (('K1', s1), ('K2', s2)):
        if not is_positive_definite(sys.K):
            failing[label] = sym_eig(sys.K).lambda_min
    if failing:
        logger.error(f"Small-gain check needs positive definite stiffness: {sorted(failing)}")
        raise ConditionsNotMet(", ".join(f"{label} not positive definite" for label in failing), failing=failing)


def small_gain_check(s1: LshSystem, s2: LshSystem) -> SmallGainReport:
    _stiffness_check(s1, s2)
    if (s1.n, s1.m) != (s2.n, s2.m):
        raise DimensionError("feedback subsystems must share n and m")

    _, inv_root1 = spd_sqrt(s1.K)
    _, inv_root2 = spd_sqrt(s2.K)
    cross = inv_root1 @ s1.N.T @ s2.N @ inv_root2
    norm = float(np.linalg.norm(cross, 2))
    definite = norm < 1.0

    composed = compose(s1, s2).loop
    direct = is_positive_definite(composed.K)
    if direct != definite and abs(norm - 1.0) > 1e-9:
        raise NumericalFailure(f"small-gain norm {norm:.12g} contradicts the definiteness of the closed-loop K")

    gain1, gain2 = static_gain(s1), static_gain(s2)
    # lambda(Phi1 Phi2) = lambda(L^T Phi1 L) with Phi2 = L L^T
    factor = psd_factor(gain2)
    gain_identity = sym_eig(factor.T @ gain1 @ factor).lambda_max
    if abs(norm ** 2 - gain_identity) > 1e-9 * (1.0 + norm ** 2):
        logger.warning(f"norm^2 = {norm ** 2:.12g} but lambda_max(Phi1(0) Phi2(0)) = {gain_identity:.12g}")

    product = float(np.linalg.norm(gain1, 2) * np.linalg.norm(gain2, 2))
    if product < 1.0 and not definite:
        raise NumericalFailure("static-gain product below one but the small-gain norm is not")

    return SmallGainReport(norm=norm, definite=bool(definite), sufficient_gain_product=product,
                           gain_identity=float(gain_identity))


def closed_loop_stability(s1: LshSystem, s2: LshSystem, uc: Optional[UncertaintyClass] = None,
                          eps: Optional[float] = None, second_moment_x0: float = 0.0) -> dict:
    """
    Stability report for the composed system.

    When a hypothesis of the stability certificate fails, the report lists
    the failing matrices and makes no claim about instability.
    """
    closed = compose(s1, s2)
    loop = closed.loop
    report = {'loop': loop.to_dict(), 'certificate_applicable': False, 'failing': {}}

    for label, sys in (('F1', s1), ('F2', s2)):
        if not is_positive_definite(sys.F):
            report['failing'][label] = f"{label} not positive definite (lambda_min = {sym_eig(sys.F).lambda_min:.6g})"
    try:
        gain = small_gain_check(s1, s2)
        report['small_gain'] = gain.to_dict()
        if not gain.definite:
            report['failing']['K'] = f"closed-loop K not positive definite (small-gain norm {gain.norm:.6g} >= 1)"
    except ConditionsNotMet as e:
        report['failing'].update({label: f"{label} not positive definite" for label in e.failing})

    if report['failing']:
        report['message'] = "stability certificate inapplicable: " + "; ".join(report['failing'].values())
        logger.warning(report['message'])
        return report

    window = eps_bounds(loop)
    eps = default_eps(window) if eps is None else float(eps)
    cert = certificate(loop, eps)
    hurwitz = hurwitz_diagnosis(realize(loop).A)
    meas = invariant_covariance(loop)

    report.update({
        'certificate_applicable': True,
        'eps_window': {'eps1_bound': window.eps1_bound, 'eps2_bound': window.eps2_bound},
        'certificate': cert.to_dict(),
        'hurwitz': hurwitz.hurwitz,
        'hurwitz_status': hurwitz.status,
        'invariant': meas.to_dict(),
    })
    if uc is not None:
        report['robust'] = robust_bound(loop, eps, uc, second_moment_x0).to_dict()
    return report
