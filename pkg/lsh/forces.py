"""
Driving Ito forces dW = alpha(t, x) dt + beta(t, x) d omega

Models are evaluated on batches of states (shape (P, 2n)) so that ensembles
can be advanced path-parallel. Randomness comes from counter-based Philox
streams keyed by (seed, path, channel); a path's numbers never depend on how
many other paths are simulated or on which worker runs them.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import ndtri

from .exceptions import DimensionError, GridError, InadmissibleClassError
from .model import LshSystem, normalize_mass
from .numlin import as_matrix
from .robust import UncertaintyClass, gamma_matrix

logger = logging.getLogger(__name__)

STANDARD_WIENER = 'standard_wiener'
AFFINE_UNCERTAIN = 'affine_uncertain'
BOUNDED_DRIFT = 'bounded_drift'

# Stream channels within one (seed, path) key
INITIAL_CHANNEL = 0
INCREMENT_CHANNEL = 1

_TINY = np.finfo(float).tiny


class PathStreams:
    """Counter-based standard-normal streams keyed by (seed, path index)"""

    def __init__(self, seed: int):
        self.seed = int(seed)

    def generator(self, path: int, channel: int = INCREMENT_CHANNEL) -> np.random.Generator:
        sequence = np.random.SeedSequence(self.seed, spawn_key=(int(path), int(channel)))
        return np.random.Generator(np.random.Philox(sequence))

    def normals(self, path: int, shape, channel: int = INCREMENT_CHANNEL) -> np.ndarray:
        # inverse-CDF of uniforms in (0, 1)
        uniforms = self.generator(path, channel).random(shape)
        return ndtri(np.maximum(uniforms, _TINY))

    def batch(self, paths: Sequence[int], shape, channel: int = INCREMENT_CHANNEL) -> np.ndarray:
        """Normals for several paths stacked along a leading axis"""
        shape = tuple(np.atleast_1d(shape))
        out = np.empty((len(paths),) + shape)
        for row, path in enumerate(paths):
            out[row] = self.normals(path, shape, channel)
        return out


@dataclass(frozen=True)
class ForceModel:
    """
    Specification of the driving process W.

    alpha maps (t, x) with x of shape (P, 2n) to drifts (P, m) and beta to
    diffusion factors (P, m, m); constant-coefficient models also carry
    alpha0/beta0 so that simulators can skip the callbacks. The local
    integrability of user callbacks is a documented contract, not a runtime
    check.
    """
    kind: str
    m: int
    alpha: Callable = field(repr=False)
    beta: Callable = field(repr=False)
    class_params: Optional[UncertaintyClass] = None
    alpha0: Optional[np.ndarray] = field(default=None, repr=False)
    beta0: Optional[np.ndarray] = field(default=None, repr=False)
    description: dict = field(default_factory=dict)

    @property
    def is_constant(self) -> bool:
        return self.alpha0 is not None and self.beta0 is not None

    @property
    def is_standard(self) -> bool:
        return self.kind == STANDARD_WIENER

    def drift_at(self, t: float, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        if self.is_constant:
            return np.broadcast_to(self.alpha0, (x.shape[0], self.m))
        return np.broadcast_to(np.asarray(self.alpha(t, x), dtype=float), (x.shape[0], self.m))

    def factor_at(self, t: float, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        if self.is_constant:
            return np.broadcast_to(self.beta0, (x.shape[0], self.m, self.m))
        return np.broadcast_to(np.asarray(self.beta(t, x), dtype=float), (x.shape[0], self.m, self.m))


def _constant_callbacks(alpha0: np.ndarray, beta0: np.ndarray):
    return (lambda t, x: alpha0), (lambda t, x: beta0)


def standard_wiener(m: int, class_params: Optional[UncertaintyClass] = None) -> ForceModel:
    alpha0, beta0 = np.zeros(m), np.eye(m)
    alpha, beta = _constant_callbacks(alpha0, beta0)
    return ForceModel(kind=STANDARD_WIENER, m=m, alpha=alpha, beta=beta, class_params=class_params,
                      alpha0=alpha0, beta0=beta0, description={'kind': STANDARD_WIENER, 'm': m})


def affine_uncertain(alpha0, beta0, drift_gain=None,
                     class_params: Optional[UncertaintyClass] = None) -> ForceModel:
    """alpha(t, x) = alpha0 + drift_gain x, beta(t, x) = beta0; class parameters are user-supplied"""
    alpha0 = np.atleast_1d(np.asarray(alpha0, dtype=float))
    m = alpha0.shape[0]
    beta0 = as_matrix(beta0, "beta0")
    if beta0.shape != (m, m):
        raise DimensionError(f"beta0 must be {m}x{m}, got {beta0.shape}")

    description = {'kind': AFFINE_UNCERTAIN, 'alpha0': alpha0.tolist(), 'beta0': beta0.tolist()}
    if drift_gain is None or not np.any(drift_gain):
        alpha, beta = _constant_callbacks(alpha0, beta0)
        return ForceModel(kind=AFFINE_UNCERTAIN, m=m, alpha=alpha, beta=beta, class_params=class_params,
                          alpha0=alpha0, beta0=beta0, description=description)

    gain = as_matrix(drift_gain, "drift_gain")
    if gain.shape[0] != m:
        raise DimensionError(f"drift_gain must have {m} rows, got {gain.shape}")
    description['drift_gain'] = gain.tolist()
    return ForceModel(
        kind=AFFINE_UNCERTAIN, m=m,
        alpha=lambda t, x: alpha0 + x @ gain.T,
        beta=lambda t, x: beta0,
        class_params=class_params,
        description=description,
    )


def bounded_drift(a: float, sigma_max: float, feedback, bias=None,
                  class_params: Optional[UncertaintyClass] = None) -> ForceModel:
    """
    Saturated state feedback alpha = a v / max(1, |v|) with v = feedback x + bias,
    so |alpha| <= a, and constant diffusion Sigma = sigma_max I.
    """
    if a < 0 or sigma_max < 0:
        raise ValueError("a and sigma_max must be non-negative")
    gain = as_matrix(feedback, "feedback")
    m = gain.shape[0]
    bias = np.zeros(m) if bias is None else np.atleast_1d(np.asarray(bias, dtype=float))
    beta0 = np.sqrt(sigma_max) * np.eye(m)

    def alpha(t, x):
        v = x @ gain.T + bias
        scale = np.maximum(1.0, np.linalg.norm(v, axis=-1, keepdims=True))
        return a * v / scale

    return ForceModel(
        kind=BOUNDED_DRIFT, m=m,
        alpha=alpha,
        beta=lambda t, x: beta0,
        class_params=class_params,
        description={'kind': BOUNDED_DRIFT, 'a': a, 'sigma_max': sigma_max,
                     'feedback': gain.tolist(), 'bias': bias.tolist()},
    )


def bounded_drift_class_params(sys: LshSystem, eps: float, a: float, delta: float,
                               sigma_max: float) -> UncertaintyClass:
    """
    Class parameters valid for every force with |alpha| <= a and ||Sigma|| <= sigma_max:
    gamma = tr(Ntil Ntil^T) sigma_max + a^2 ||Gamma||_F^2 / delta, Delta = delta I.
    """
    if min(a, delta, sigma_max) < 0:
        raise ValueError("a, delta and sigma_max must be non-negative")
    if delta == 0 and a > 0:
        raise InadmissibleClassError("delta = 0 with a > 0: the drift cannot be absorbed")

    Ntil = normalize_mass(sys).Ntil
    gamma = float(np.trace(Ntil @ Ntil.T)) * sigma_max
    if a > 0:
        gamma += a * a * float(np.sum(gamma_matrix(sys, eps) ** 2)) / delta
    return UncertaintyClass(gamma=gamma, Delta=delta * np.eye(2 * sys.n))


def diffusion_matrix(model: ForceModel, t: float, x) -> np.ndarray:
    """Sigma = beta beta^T, batched over states"""
    beta = model.factor_at(t, x)
    return np.einsum('pij,pkj->pik', beta, beta)


@dataclass(frozen=True)
class ForcePath:
    """
    Realised force on a time grid for P paths.

    increments[p, k] is Delta W over step k, noise[p, k] its martingale part
    beta Delta omega. realized_alpha and realized_sigma are broadcastable to
    (P, K, m) and (P, K, m, m).
    """
    times: np.ndarray
    increments: np.ndarray
    noise: np.ndarray
    realized_alpha: np.ndarray
    realized_sigma: np.ndarray
    seed: int
    paths: np.ndarray

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.times)

    @property
    def n_steps(self) -> int:
        return self.times.shape[0] - 1

    @property
    def n_paths(self) -> int:
        return self.increments.shape[0]

    @property
    def m(self) -> int:
        return self.increments.shape[-1]

    def alpha_full(self) -> np.ndarray:
        return np.broadcast_to(self.realized_alpha, self.increments.shape)

    def sigma_full(self) -> np.ndarray:
        return np.broadcast_to(self.realized_sigma, self.increments.shape + (self.m,))


def check_grid(grid) -> np.ndarray:
    times = np.asarray(grid, dtype=float)
    if times.ndim != 1 or times.shape[0] < 2:
        raise GridError("time grid needs at least two points")
    if not np.all(np.isfinite(times)) or np.any(np.diff(times) <= 0):
        raise GridError("time grid must be strictly increasing")
    return times


def sample_increments(model: ForceModel, grid, state_feed=None, seed: int = 0,
                      path: int = 0) -> ForcePath:
    """
    Delta W_k = alpha(t_k, x_k) dt_k + beta(t_k, x_k) Delta omega_k for one path.

    Coefficients are taken at the left end of each step; state_feed holds the
    states x_k (shape (K, 2n) or (K + 1, 2n)) and may be omitted for
    state-independent models.
    """
    times = check_grid(grid)
    dt = np.diff(times)
    K, m = dt.shape[0], model.m

    omega = PathStreams(seed).normals(path, (K, m)) * np.sqrt(dt)[:, None]

    if model.is_constant:
        alpha = np.broadcast_to(model.alpha0, (1, 1, m))
        beta = np.broadcast_to(model.beta0, (1, 1, m, m))
        noise = omega @ model.beta0.T
    else:
        if state_feed is None:
            raise ValueError("state_feed is required for state-dependent force models")
        states = np.asarray(state_feed, dtype=float)
        if states.shape[0] < K:
            raise DimensionError(f"state_feed has {states.shape[0]} states for {K} steps")
        alpha = np.empty((1, K, m))
        beta = np.empty((1, K, m, m))
        for k in range(K):
            x = states[k][None, :]
            alpha[0, k] = model.drift_at(times[k], x)[0]
            beta[0, k] = model.factor_at(times[k], x)[0]
        noise = np.einsum('kij,kj->ki', beta[0], omega)

    increments = alpha[0] * dt[:, None] + noise
    sigma = np.einsum('...ij,...kj->...ik', beta, beta)
    return ForcePath(times=times, increments=increments[None], noise=noise[None],
                     realized_alpha=np.array(alpha), realized_sigma=sigma,
                     seed=int(seed), paths=np.array([path]))


def quadratic_variation(path: ForcePath):
    """
    Per-path realised sum |Delta W_k|^2 and predicted sum tr(Sigma_k) dt_k.

    Returns two arrays of shape (P,).
    """
    if path.n_steps < 1:
        raise ValueError("force path is empty")
    realized = np.sum(path.increments ** 2, axis=(1, 2))
    traces = np.trace(path.realized_sigma, axis1=-2, axis2=-1)
    traces = np.broadcast_to(traces, (path.n_paths, path.n_steps))
    predicted = traces @ path.dt
    return realized, predicted
