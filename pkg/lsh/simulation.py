"""
Simulation of stochastic Hamiltonian systems

General systems (position-dependent mass, potential, damping and coupling)
are advanced path by path with Euler-Maruyama. LSH systems are advanced on
whole batches of paths, either by Euler-Maruyama or by the exact Gaussian
one-step transition when the force has constant coefficients. Ensembles are
split into chunks of consecutive path indices and run on a thread pool;
each chunk is reduced before the next one is stored, so only the recorded
states stay in memory.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence, Union

import numpy as np
import scipy.linalg

from config import config
from .exceptions import ConfigError, GridError, MissingForcePathError, NotPositiveDefiniteError
from .forces import INITIAL_CHANNEL, ForceModel, ForcePath, PathStreams, check_grid, standard_wiener
from .invariant import invariant_covariance
from .model import LshSystem, energy_matrix, realize
from .numlin import as_symmetric, definiteness_tol, psd_factor, sym_eig

logger = logging.getLogger(__name__)

EULER_MARUYAMA = 'euler_maruyama'
EXACT_LINEAR = 'exact_linear'
SCHEMES = (EULER_MARUYAMA, EXACT_LINEAR)

# Relative finite-difference tolerance for user-supplied derivatives
PROBE_TOL = 1e-4


@dataclass(frozen=True)
class NonlinearHamiltonianSystem:
    """
    General stochastic Hamiltonian system with H(q, p) = V(q) + p^T M(q)^-1 p / 2.

    Callbacks take a single position vector q of length n. mass_grad(q, k) is the
    partial derivative of the mass matrix along q_k; coupling_jac(q) is the
    m x n Jacobian L'(q), so the force enters the momentum equation through
    G(q) = L'(q)^T. Derivatives are checked against central differences at
    probe_points when those are given.
    """
    n: int
    m: int
    potential: Callable = field(repr=False)
    potential_grad: Callable = field(repr=False)
    mass: Callable = field(repr=False)
    mass_grad: Callable = field(repr=False)
    damping: Callable = field(repr=False)
    coupling: Callable = field(repr=False)
    coupling_jac: Callable = field(repr=False)
    probe_points: Optional[np.ndarray] = field(default=None, repr=False)
    name: str = "nonlinear"

    def __post_init__(self):
        if self.probe_points is not None:
            for q in np.atleast_2d(np.asarray(self.probe_points, dtype=float)):
                self.check_derivatives(q)

    def check_derivatives(self, q, step: float = 1e-6):
        q = np.asarray(q, dtype=float)
        basis = np.eye(self.n)

        def central(fn, k):
            h = step * max(1.0, abs(q[k]))
            return (np.asarray(fn(q + h * basis[k])) - np.asarray(fn(q - h * basis[k]))) / (2.0 * h)

        grad_fd = np.array([central(self.potential, k) for k in range(self.n)])
        jac_fd = np.stack([central(self.coupling, k) for k in range(self.n)], axis=-1)
        checks = [('potential_grad', grad_fd, np.asarray(self.potential_grad(q), dtype=float)),
                  ('coupling_jac', jac_fd, np.asarray(self.coupling_jac(q), dtype=float).reshape(jac_fd.shape))]
        for k in range(self.n):
            checks.append((f'mass_grad[{k}]', central(self.mass, k), np.asarray(self.mass_grad(q, k), dtype=float)))

        for name, approx, supplied in checks:
            error = np.linalg.norm(approx - supplied)
            if error > PROBE_TOL * max(1.0, np.linalg.norm(supplied)):
                logger.error(f"{name} of {self.name} disagrees with finite differences at q={q}: {error:.3e}")
                raise ConfigError(f"{name} is inconsistent with its function at q={q.tolist()}")


def as_nonlinear(sys: LshSystem) -> NonlinearHamiltonianSystem:
    """The LSH quadruple as a general system: constant mass, quadratic V, linear L"""
    K, M, F, N = sys.K, sys.M, sys.F, sys.N
    zero = np.zeros_like(M)
    return NonlinearHamiltonianSystem(
        n=sys.n, m=sys.m,
        potential=lambda q: 0.5 * q @ K @ q,
        potential_grad=lambda q: K @ q,
        mass=lambda q: M,
        mass_grad=lambda q, k: zero,
        damping=lambda q: F,
        coupling=lambda q: N @ q,
        coupling_jac=lambda q: N,
        name=sys.name,
    )


def _inverse_mass(nlsys: NonlinearHamiltonianSystem, q: np.ndarray) -> np.ndarray:
    M = as_symmetric(nlsys.mass(q), "M(q)")
    if sym_eig(M).lambda_min <= definiteness_tol(M):
        raise NotPositiveDefiniteError(f"mass matrix not positive definite at q={q.tolist()}")
    return np.linalg.inv(M)


def drift(nlsys: NonlinearHamiltonianSystem, x) -> np.ndarray:
    """(M^-1 p, -dH/dq - F M^-1 p), dH/dq including the centrifugal terms of a varying mass"""
    x = np.asarray(x, dtype=float)
    n = nlsys.n
    q, p = x[:n], x[n:]
    velocity = _inverse_mass(nlsys, q) @ p
    centrifugal = np.array([0.5 * velocity @ nlsys.mass_grad(q, k) @ velocity for k in range(n)])
    dHdq = np.asarray(nlsys.potential_grad(q), dtype=float) - centrifugal
    return np.concatenate([velocity, -dHdq - nlsys.damping(q) @ velocity])


def hamiltonian(nlsys: NonlinearHamiltonianSystem, x) -> float:
    x = np.asarray(x, dtype=float)
    return float(nlsys.potential(x[:nlsys.n])) + kinetic_energy(nlsys, x)


def kinetic_energy(nlsys: NonlinearHamiltonianSystem, x) -> float:
    x = np.asarray(x, dtype=float)
    q, p = x[:nlsys.n], x[nlsys.n:]
    return float(0.5 * p @ _inverse_mass(nlsys, q) @ p)


def poisson_bracket(grad_phi, grad_psi) -> float:
    """{phi, psi} = grad_phi^T J grad_psi = d_q phi . d_p psi - d_p phi . d_q psi"""
    a = np.asarray(grad_phi, dtype=float)
    b = np.asarray(grad_psi, dtype=float)
    if a.shape != b.shape or a.shape[0] % 2:
        raise ValueError("gradients must have equal, even length")
    n = a.shape[0] // 2
    return float(np.dot(a[:n], b[n:]) - np.dot(a[n:], b[:n]))


@dataclass(frozen=True)
class GaussianInitial:
    """Initial law N(mean, cov), sampled from the INITIAL channel of each path's stream"""
    mean: np.ndarray
    cov: np.ndarray

    def sample(self, streams: PathStreams, paths: Sequence[int]) -> np.ndarray:
        mean = np.asarray(self.mean, dtype=float)
        factor = psd_factor(self.cov)
        normals = streams.batch(paths, mean.shape[0], channel=INITIAL_CHANNEL)
        return mean + normals @ factor.T

    @property
    def second_moment(self) -> float:
        mean = np.asarray(self.mean, dtype=float)
        return float(np.trace(self.cov) + mean @ mean)


def stationary_law(sys: LshSystem) -> GaussianInitial:
    return GaussianInitial(mean=np.zeros(2 * sys.n), cov=invariant_covariance(sys).Pi)


@dataclass(frozen=True)
class Trajectory:
    """States (P, K + 1, 2n), outputs (P, K + 1, m) and the realised force of P paths"""
    times: np.ndarray
    states: np.ndarray
    outputs: np.ndarray
    force: Optional[ForcePath]
    seed: int
    scheme: str
    paths: np.ndarray

    @property
    def n(self) -> int:
        return self.states.shape[-1] // 2

    @property
    def q(self) -> np.ndarray:
        return self.states[..., :self.n]

    @property
    def p(self) -> np.ndarray:
        return self.states[..., self.n:]


@dataclass(frozen=True)
class Ensemble:
    """States recorded on a coarse time grid plus per-path reductions"""
    times: np.ndarray
    states: np.ndarray
    extras: Dict[str, np.ndarray]
    seed: int
    scheme: str
    dt: float


def _path_indices(paths: Union[int, Sequence[int]]) -> np.ndarray:
    if np.ndim(paths) == 0:
        if int(paths) < 1:
            raise ValueError("at least one path is required")
        return np.arange(int(paths))
    return np.asarray(paths, dtype=int)


def _initial_states(x0, streams: PathStreams, paths: np.ndarray, dim: int) -> np.ndarray:
    if isinstance(x0, GaussianInitial):
        states = x0.sample(streams, paths)
    else:
        states = np.broadcast_to(np.asarray(x0, dtype=float), (paths.shape[0], dim)).copy()
    if states.shape != (paths.shape[0], dim):
        raise ConfigError(f"initial state must have {dim} components")
    return states


def step_matrices(sys: LshSystem, model: ForceModel, dt: float):
    """
    One exact step of the augmented process z = (x, W) under constant alpha, beta.

    Returns (transition e^{A dt}, mean shift of (x, Delta W), joint covariance
    of (x, Delta W)). The covariance comes from Van Loan's block exponential.
    """
    ss = realize(sys)
    d, m = 2 * sys.n, sys.m
    A_aug = np.zeros((d + m, d + m))
    A_aug[:d, :d] = ss.A
    B_aug = np.vstack([ss.B, np.eye(m)])
    sigma = model.beta0 @ model.beta0.T
    size = d + m

    van_loan = np.zeros((2 * size, 2 * size))
    van_loan[:size, :size] = -A_aug
    van_loan[:size, size:] = B_aug @ sigma @ B_aug.T
    van_loan[size:, size:] = A_aug.T
    block = scipy.linalg.expm(van_loan * dt)
    transition = block[size:, size:].T
    covariance = as_symmetric(transition @ block[:size, size:])

    integral = np.zeros((2 * size, 2 * size))
    integral[:size, :size] = A_aug
    integral[:size, size:] = np.eye(size)
    shift = scipy.linalg.expm(integral * dt)[:size, size:] @ B_aug @ model.alpha0

    return transition[:d, :d], shift, covariance


def step_covariance(sys: LshSystem, dt: float) -> np.ndarray:
    """Covariance of the state noise over one exact step under standard Wiener forcing"""
    _, _, covariance = step_matrices(sys, standard_wiener(sys.m), dt)
    return covariance[:2 * sys.n, :2 * sys.n]


def _simulate_linear_em(sys, model, x, times, normals):
    ss = realize(sys)
    dt = np.diff(times)
    P, K, m = normals.shape
    states = np.empty((P, K + 1, x.shape[1]))
    states[:, 0] = x
    omega = normals * np.sqrt(dt)[None, :, None]

    if model.is_constant:
        alpha = np.broadcast_to(model.alpha0, (1, 1, m))
        beta = np.broadcast_to(model.beta0, (1, 1, m, m))
        noise = omega @ model.beta0.T
        increments = alpha * dt[None, :, None] + noise
        for k in range(K):
            states[:, k + 1] = states[:, k] + dt[k] * states[:, k] @ ss.A.T + increments[:, k] @ ss.B.T
    else:
        alpha = np.empty((P, K, m))
        beta = np.empty((P, K, m, m))
        noise = np.empty((P, K, m))
        for k in range(K):
            xk = states[:, k]
            alpha[:, k] = model.drift_at(times[k], xk)
            beta[:, k] = model.factor_at(times[k], xk)
            noise[:, k] = np.einsum('pij,pj->pi', beta[:, k], omega[:, k])
            dW = alpha[:, k] * dt[k] + noise[:, k]
            states[:, k + 1] = xk + dt[k] * xk @ ss.A.T + dW @ ss.B.T
        increments = alpha * dt[None, :, None] + noise

    sigma = np.einsum('...ij,...kj->...ik', beta, beta)
    return states, increments, noise, np.array(alpha), sigma


def _simulate_linear_exact(sys, model, x, times, streams, paths):
    dt = np.diff(times)
    d, m = 2 * sys.n, sys.m
    P, K = x.shape[0], dt.shape[0]
    normals = streams.batch(paths, (K, d + m))

    cache = {}
    states = np.empty((P, K + 1, d))
    increments = np.empty((P, K, m))
    states[:, 0] = x
    for k in range(K):
        key = float(f"{dt[k]:.12e}")
        if key not in cache:
            transition, shift, covariance = step_matrices(sys, model, dt[k])
            cache[key] = (transition, shift, psd_factor(covariance))
        transition, shift, factor = cache[key]
        draw = shift + normals[:, k] @ factor.T
        states[:, k + 1] = states[:, k] @ transition.T + draw[:, :d]
        increments[:, k] = draw[:, d:]

    alpha = np.broadcast_to(model.alpha0, (1, 1, m))
    sigma = np.broadcast_to(model.beta0 @ model.beta0.T, (1, 1, m, m))
    noise = increments - alpha * dt[None, :, None]
    return states, increments, noise, np.array(alpha), np.array(sigma)


def _simulate_nonlinear(nlsys, model, x, times, normals):
    dt = np.diff(times)
    P, K, m = normals.shape
    n = nlsys.n
    states = np.empty((P, K + 1, 2 * n))
    alpha = np.empty((P, K, m))
    beta = np.empty((P, K, m, m))
    noise = np.empty((P, K, m))
    states[:, 0] = x

    for path in range(P):
        for k in range(K):
            xk = states[path, k]
            try:
                velocity_force = drift(nlsys, xk)
            except NotPositiveDefiniteError as e:
                logger.error(f"path {path}: mass matrix lost definiteness at step {k}")
                raise NotPositiveDefiniteError(f"step {k}: {e}") from e
            alpha[path, k] = model.drift_at(times[k], xk[None])[0]
            beta[path, k] = model.factor_at(times[k], xk[None])[0]
            noise[path, k] = beta[path, k] @ normals[path, k] * np.sqrt(dt[k])
            dW = alpha[path, k] * dt[k] + noise[path, k]
            G = np.asarray(nlsys.coupling_jac(xk[:n]), dtype=float).reshape(m, n).T
            step = velocity_force * dt[k]
            step[n:] += G @ dW
            states[path, k + 1] = xk + step

    increments = alpha * dt[None, :, None] + noise
    sigma = np.einsum('pkij,pklj->pkil', beta, beta)
    return states, increments, noise, alpha, sigma


def simulate(system, model: ForceModel, x0, grid, seed: int = 0, scheme: str = EULER_MARUYAMA,
             paths: Union[int, Sequence[int]] = 1) -> Trajectory:
    """
    Simulate P paths of an LSH or general system driven by model.

    x0 is a fixed state (2n,), per-path states (P, 2n) or a GaussianInitial.
    Path indices select the counter-based streams, so simulating paths
    [500, 1000) alone reproduces those rows of a 1000-path run.
    """
    if scheme not in SCHEMES:
        raise ConfigError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    times = check_grid(grid)
    indices = _path_indices(paths)
    streams = PathStreams(seed)
    linear = isinstance(system, LshSystem)

    if model.m != system.m:
        raise ConfigError(f"force has {model.m} channels, system has {system.m}")
    if scheme == EXACT_LINEAR and not (linear and model.is_constant):
        raise ConfigError("exact_linear needs an LSH system and a constant-coefficient force")

    x = _initial_states(x0, streams, indices, 2 * system.n)
    K = times.shape[0] - 1
    if scheme == EXACT_LINEAR:
        states, increments, noise, alpha, sigma = _simulate_linear_exact(system, model, x, times, streams, indices)
    elif linear:
        normals = streams.batch(indices, (K, model.m))
        states, increments, noise, alpha, sigma = _simulate_linear_em(system, model, x, times, normals)
    else:
        normals = streams.batch(indices, (K, model.m))
        states, increments, noise, alpha, sigma = _simulate_nonlinear(system, model, x, times, normals)

    if linear:
        outputs = states[..., :system.n] @ system.N.T
    else:
        outputs = np.array([[system.coupling(s[:system.n]) for s in path] for path in states])

    force = ForcePath(times=times, increments=increments, noise=noise, realized_alpha=alpha,
                      realized_sigma=sigma, seed=int(seed), paths=indices)
    return Trajectory(times=times, states=states, outputs=outputs, force=force, seed=int(seed),
                      scheme=scheme, paths=indices)


def record_indices(times: np.ndarray, record_times) -> np.ndarray:
    """Grid indices of the requested record times (each must lie on the grid)"""
    if record_times is None:
        return np.arange(times.shape[0])
    wanted = np.atleast_1d(np.asarray(record_times, dtype=float))
    indices = np.searchsorted(times, wanted)
    indices = np.clip(indices, 0, times.shape[0] - 1)
    left = np.clip(indices - 1, 0, times.shape[0] - 1)
    nearer = np.where(np.abs(times[left] - wanted) < np.abs(times[indices] - wanted), left, indices)
    tolerance = 1e-9 * max(1.0, abs(times[-1]))
    if np.any(np.abs(times[nearer] - wanted) > tolerance):
        raise GridError("record times must lie on the simulation grid")
    return nearer


def simulate_ensemble(system, model: ForceModel, x0, grid, seed: int, paths: int,
                      scheme: str = EULER_MARUYAMA, record_times=None,
                      reducers: Optional[Dict[str, Callable]] = None,
                      chunk_paths: Optional[int] = None, threads: Optional[int] = None) -> Ensemble:
    """
    Chunked, thread-parallel ensemble.

    Each chunk of consecutive path indices is simulated, its states are kept
    only at record_times and every reducer (a function of the chunk's
    Trajectory returning one row per path) is applied before the chunk is
    discarded. Chunks are gathered in index order.
    """
    times = check_grid(grid)
    kept = record_indices(times, record_times)
    chunk_paths = chunk_paths or config.LSH_CHUNK_PATHS
    threads = threads or config.LSH_THREADS
    reducers = reducers or {}
    chunks = [np.arange(start, min(start + chunk_paths, paths)) for start in range(0, paths, chunk_paths)]

    def run_chunk(indices):
        traj = simulate(system, model, x0, times, seed=seed, scheme=scheme, paths=indices)
        reduced = {name: np.asarray(fn(traj)) for name, fn in reducers.items()}
        return traj.states[:, kept], reduced

    workers = max(1, min(threads, len(chunks)))
    logger.info(f"Simulating {paths} paths in {len(chunks)} chunks on {workers} threads ({scheme})")
    with ThreadPoolExecutor(max_workers=workers) as executor:
        results = list(executor.map(run_chunk, chunks))

    states = np.concatenate([states for states, _ in results], axis=0)
    extras = {name: np.concatenate([reduced[name] for _, reduced in results], axis=0) for name in reducers}
    return Ensemble(times=times[kept], states=states, extras=extras, seed=int(seed), scheme=scheme,
                    dt=float(np.max(np.diff(times))))


@dataclass(frozen=True)
class EnergyAudit:
    """
    Per-path residuals of the discretised energy balance.

    work is sum q_dot^T G Delta W, work_output the same work computed from
    output differences (y_{k+1} - y_k)^T Delta W / dt_k.
    """
    residual: np.ndarray
    residual_predicted: np.ndarray
    work: np.ndarray
    work_output: np.ndarray
    dt: float


def energy_balance_residual(traj: Trajectory, system, model: Optional[ForceModel] = None) -> EnergyAudit:
    """
    H(x_K) - H(x_0) - sum_k [-||q_dot_k||^2_F dt + q_dot_k^T G_k Delta W_k] minus the Ito term.

    The Ito term is (G^T M^-1 G)-weighted realised quadratic variation of the
    martingale part of W for `residual` and <G^T M^-1 G, Sigma_k> dt / 2 for
    `residual_predicted`.
    """
    force = traj.force
    if force is None:
        raise MissingForcePathError("energy audit needs the realised force path")
    dt = force.dt
    n = traj.n
    P, K = traj.states.shape[0], dt.shape[0]

    if isinstance(system, LshSystem):
        M_inv = system.M_inv
        x = traj.states[:, :-1]
        velocity = x[..., n:] @ M_inv
        dissipation = np.einsum('pki,ij,pkj->pk', velocity, system.F, velocity)
        work_steps = np.einsum('pki,mi,pkm->pk', velocity, system.N, force.increments)
        weight = system.N @ M_inv @ system.N.T
        ito_realized = 0.5 * np.einsum('pki,ij,pkj->pk', force.noise, weight, force.noise)
        ito_predicted = 0.5 * np.broadcast_to(np.einsum('ij,...ij->...', weight, force.realized_sigma), (P, K)) * dt
        energy = 0.5 * np.einsum('pki,ij,pkj->pk', traj.states[:, [0, -1]],
                                 energy_matrix(system), traj.states[:, [0, -1]])
        change = energy[:, 1] - energy[:, 0]
    else:
        dissipation = np.empty((P, K))
        work_steps = np.empty((P, K))
        ito_realized = np.empty((P, K))
        ito_predicted = np.empty((P, K))
        sigma = force.sigma_full()
        change = np.empty(P)
        for path in range(P):
            for k in range(K):
                q, p = traj.states[path, k, :n], traj.states[path, k, n:]
                M_inv = _inverse_mass(system, q)
                velocity = M_inv @ p
                G = np.asarray(system.coupling_jac(q), dtype=float).reshape(-1, n).T
                weight = G.T @ M_inv @ G
                dissipation[path, k] = velocity @ system.damping(q) @ velocity
                work_steps[path, k] = velocity @ G @ force.increments[path, k]
                ito_realized[path, k] = 0.5 * force.noise[path, k] @ weight @ force.noise[path, k]
                ito_predicted[path, k] = 0.5 * np.sum(weight * sigma[path, k]) * dt[k]
            change[path] = hamiltonian(system, traj.states[path, -1]) - hamiltonian(system, traj.states[path, 0])

    output_rate = np.diff(traj.outputs, axis=1) / dt[None, :, None]
    work_output = np.einsum('pkm,pkm->p', output_rate, force.increments)
    work = work_steps.sum(axis=1)
    base = change + dissipation @ dt - work

    return EnergyAudit(residual=base - ito_realized.sum(axis=1),
                       residual_predicted=base - ito_predicted.sum(axis=1),
                       work=work, work_output=work_output, dt=float(np.max(dt)))