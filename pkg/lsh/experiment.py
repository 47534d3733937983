"""
Experiment configuration and command dispatch

An experiment file is JSON validated by the pydantic models below. Every
command builds its systems, calls into the library modules and returns a
ResultEnvelope; tables (trajectories, filter statistics, moment envelopes)
travel next to the JSON outputs as pandas DataFrames.
"""

import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Literal, Optional, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, ValidationError, field_validator

from config import config
from .exceptions import ConditionsNotMet, ConfigError, DimensionError, LshError, SingularityError
from .feedback import closed_loop_stability
from .filtering import (FilterRun, empirical_error_table, error_increment_check, filter_setup,
                        orthogonality_table, run_filter, covariance_closed_form)
from .forces import (AFFINE_UNCERTAIN, BOUNDED_DRIFT, STANDARD_WIENER, affine_uncertain, bounded_drift,
                     bounded_drift_class_params, standard_wiener)
from .invariant import (controllability_bound, invariant_covariance, sylvester_residuals, virial_check,
                        virial_empirical)
from .model import LshSystem, char_poly_eval, energy_matrix, normalize_mass, realize, static_gain, transfer
from .robust import (UncertaintyClass, class_margins, exact_initial_energy, moment_envelope, robust_bound,
                     scan_eps, supermartingale_check)
from .simulation import (EULER_MARUYAMA, EXACT_LINEAR, GaussianInitial, Trajectory, energy_balance_residual,
                         record_indices, simulate_ensemble, stationary_law)
from .stability import certificate, default_eps, deformation_matrix, eps_bounds, hurwitz_diagnosis

logger = logging.getLogger(__name__)

COMMANDS = ('stability', 'invariant', 'simulate', 'filter', 'robust', 'compose', 'transfer')
STOCHASTIC_COMMANDS = ('simulate', 'filter', 'robust')

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONDITIONS_NOT_MET = 2
EXIT_USAGE = 64

# Upper limit on rows of the recorded time grid when none is configured
MAX_RECORDS = 1001

Matrix = Union[float, List[List[float]]]


class SystemSpec(BaseModel):
    """One quadruple; scalars are accepted for 1-DOF systems (and for M, F as multiples of I)"""
    model_config = ConfigDict(extra='forbid')

    K: Matrix
    M: Matrix = 1.0
    F: Matrix = 1.0
    N: Union[float, List[List[float]]]
    name: Optional[str] = None

    def build(self, name: str) -> LshSystem:
        K = [[self.K]] if isinstance(self.K, (int, float)) else self.K
        N = [[self.N]] if isinstance(self.N, (int, float)) else self.N
        return LshSystem(K=K, M=self.M, F=self.F, N=N, name=self.name or name)


class ForceSpec(BaseModel):
    model_config = ConfigDict(extra='forbid')

    kind: Literal['standard_wiener', 'affine_uncertain', 'bounded_drift'] = STANDARD_WIENER
    alpha0: Optional[List[float]] = None
    beta0: Optional[Matrix] = None
    drift_gain: Optional[List[List[float]]] = None
    a: float = Field(default=0.0, ge=0)
    sigma_max: float = Field(default=1.0, ge=0)
    feedback: Optional[List[List[float]]] = None
    bias: Optional[List[float]] = None
    delta: Optional[float] = Field(default=None, ge=0)


class SimulationSpec(BaseModel):
    model_config = ConfigDict(extra='forbid')

    T: float = Field(default=1.0, gt=0)
    dt: float = Field(default_factory=lambda: config.DEFAULT_DT, gt=0)
    paths: int = Field(default_factory=lambda: config.DEFAULT_PATHS, ge=1)
    seed: Optional[int] = Field(default=None, ge=0)
    scheme: Optional[Literal['euler_maruyama', 'exact_linear']] = None
    initial: Literal['stationary', 'zero', 'fixed'] = 'stationary'
    x0: Optional[List[float]] = None
    record_times: Optional[List[float]] = None
    probe_times: List[float] = Field(default_factory=lambda: [0.5, 1.0, 2.0])
    sample_paths: int = Field(default=1, ge=0)


class RobustSpec(BaseModel):
    model_config = ConfigDict(extra='forbid')

    eps: Union[float, Literal['auto', 'scan']] = 'auto'
    gamma: Optional[float] = Field(default=None, ge=0)
    Delta: Optional[Matrix] = None
    scan_points: int = Field(default=100, ge=1)

    @field_validator('eps')
    @classmethod
    def positive_eps(cls, value):
        if not isinstance(value, str) and value <= 0:
            raise ValueError("eps must be positive, 'auto' or 'scan'")
        return value


class OutputSpec(BaseModel):
    model_config = ConfigDict(extra='forbid')

    format: Literal['csv', 'json'] = 'json'
    path: Optional[str] = None


class TransferSpec(BaseModel):
    model_config = ConfigDict(extra='forbid')

    points: List[List[float]] = Field(default_factory=lambda: [[0.0, 0.0], [0.0, 1.0]])

    @field_validator('points')
    @classmethod
    def complex_pairs(cls, value):
        if any(len(point) != 2 for point in value):
            raise ValueError("transfer points are [real, imag] pairs")
        return value


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra='forbid')

    systems: Dict[str, SystemSpec] = Field(min_length=1)
    system: Optional[str] = None
    compose: Optional[List[str]] = None
    force: ForceSpec = Field(default_factory=ForceSpec)
    simulation: SimulationSpec = Field(default_factory=SimulationSpec)
    robust: RobustSpec = Field(default_factory=RobustSpec)
    output: OutputSpec = Field(default_factory=OutputSpec)
    transfer: TransferSpec = Field(default_factory=TransferSpec)

    _systems: Dict[str, LshSystem] = PrivateAttr(default_factory=dict)

    def build_systems(self):
        for name, spec in self.systems.items():
            try:
                self._systems[name] = spec.build(name)
            except (LshError, ValueError) as e:
                logger.error(f"System {name!r} is invalid: {e}")
                raise ConfigError(f"system {name!r}: {e}") from e
        if self.system is not None and self.system not in self.systems:
            raise ConfigError(f"selected system {self.system!r} is not defined")
        for name in self.compose or []:
            if name not in self.systems:
                raise ConfigError(f"compose names undefined system {name!r}")
        if self.compose is not None and len(self.compose) != 2:
            raise ConfigError("compose needs exactly two system names")

    def lsh_system(self, name: Optional[str] = None) -> LshSystem:
        """The named system, the selected one, or the first defined"""
        name = name or self.system or next(iter(self.systems))
        if name not in self._systems:
            self.build_systems()
        return self._systems[name]

    def feedback_pair(self):
        names = self.compose or list(self.systems)[:2]
        if len(names) != 2:
            raise ConfigError("compose needs two systems")
        return self.lsh_system(names[0]), self.lsh_system(names[1])

    def digest(self) -> str:
        """sha256 of the canonical JSON form"""
        canonical = json.dumps(self.model_dump(mode='json'), sort_keys=True, separators=(',', ':'))
        return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


@dataclass
class ResultEnvelope:
    command: str
    config_digest: str
    seed: Optional[int]
    outputs: dict
    diagnostics: dict = field(default_factory=dict)
    wall_time_s: float = 0.0
    exit_code: int = EXIT_OK
    tables: Dict[str, pd.DataFrame] = field(default_factory=dict)
    schema_version: str = config.SCHEMA_VERSION

    def to_dict(self) -> dict:
        return {
            'schema_version': self.schema_version,
            'command': self.command,
            'config_digest': self.config_digest,
            'seed': self.seed,
            'status': 'ok' if self.exit_code == EXIT_OK else 'conditions_not_met',
            'outputs': self.outputs,
            'diagnostics': self.diagnostics,
            'wall_time_s': self.wall_time_s,
        }


def _format_validation_error(error: ValidationError) -> str:
    parts = []
    for item in error.errors():
        location = '.'.join(str(piece) for piece in item['loc'])
        parts.append(f"{location}: {item['msg']}")
    return '; '.join(parts)


def parse_config(data: dict, command: Optional[str] = None, seed: Optional[int] = None) -> ExperimentConfig:
    try:
        cfg = ExperimentConfig.model_validate(data)
    except ValidationError as e:
        message = _format_validation_error(e)
        logger.error(f"Invalid experiment configuration: {message}")
        raise ConfigError(message) from e

    if seed is not None:
        cfg.simulation.seed = int(seed)
    if command in STOCHASTIC_COMMANDS and cfg.simulation.seed is None:
        raise ConfigError(f"seed required for the {command} command")
    cfg.build_systems()
    return cfg


def load_config(path, command: Optional[str] = None, seed: Optional[int] = None) -> ExperimentConfig:
    """Read and validate an experiment file; --seed overrides simulation.seed"""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text(encoding='utf-8')
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        logger.error(f"Config {path} is not valid JSON")
        raise ConfigError(f"{path}: invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")

    cfg = parse_config(data, command=command, seed=seed)
    logger.info(f"Loaded {path} with systems {sorted(cfg.systems)}")
    return cfg


# Builders shared by the commands

def build_force(spec: ForceSpec, sys: LshSystem, eps: Optional[float] = None):
    m = sys.m
    if spec.kind == STANDARD_WIENER:
        return standard_wiener(m)
    if spec.kind == AFFINE_UNCERTAIN:
        alpha0 = spec.alpha0 if spec.alpha0 is not None else np.zeros(m)
        if spec.beta0 is None:
            beta0 = np.eye(m)
        elif isinstance(spec.beta0, (int, float)):
            beta0 = float(spec.beta0) * np.eye(m)
        else:
            beta0 = spec.beta0
        model = affine_uncertain(alpha0, beta0, drift_gain=spec.drift_gain)
        if model.m != m:
            raise DimensionError(f"force has {model.m} channels, system has {m}")
        return model
    if spec.kind == BOUNDED_DRIFT:
        gain = spec.feedback if spec.feedback is not None else np.zeros((m, 2 * sys.n))
        class_params = None
        if spec.delta is not None and eps is not None:
            class_params = bounded_drift_class_params(sys, eps, spec.a, spec.delta, spec.sigma_max)
        return bounded_drift(spec.a, spec.sigma_max, gain, bias=spec.bias, class_params=class_params)
    raise ConfigError(f"unknown force kind {spec.kind!r}")


def resolve_scheme(spec: SimulationSpec, model) -> str:
    if spec.scheme is not None:
        return spec.scheme
    return EXACT_LINEAR if model.is_constant else EULER_MARUYAMA


def time_grid(spec: SimulationSpec, horizon: Optional[float] = None) -> np.ndarray:
    T = max(spec.T, horizon or 0.0)
    steps = max(1, int(round(T / spec.dt)))
    return np.arange(steps + 1) * (T / steps)


def default_record_times(times: np.ndarray) -> np.ndarray:
    stride = max(1, int(np.ceil((times.shape[0] - 1) / (MAX_RECORDS - 1))))
    kept = np.arange(0, times.shape[0], stride)
    if kept[-1] != times.shape[0] - 1:
        kept = np.append(kept, times.shape[0] - 1)
    return times[kept]


def snap_to_grid(times: np.ndarray, wanted) -> np.ndarray:
    indices = np.clip(np.searchsorted(times, np.asarray(wanted, dtype=float) - 0.5 * (times[1] - times[0])),
                      0, times.shape[0] - 1)
    return times[np.unique(indices)]


def initial_law(spec: SimulationSpec, sys: LshSystem):
    dim = 2 * sys.n
    if spec.initial == 'stationary':
        return stationary_law(sys)
    if spec.initial == 'zero':
        return GaussianInitial(mean=np.zeros(dim), cov=np.zeros((dim, dim)))
    if spec.x0 is None or len(spec.x0) != dim:
        raise ConfigError(f"initial 'fixed' needs x0 with {dim} components")
    return GaussianInitial(mean=np.asarray(spec.x0, dtype=float), cov=np.zeros((dim, dim)))


def uncertainty_class(cfg: ExperimentConfig, sys: LshSystem, model) -> UncertaintyClass:
    spec = cfg.robust
    dim = 2 * sys.n
    if spec.Delta is None:
        Delta = np.zeros((dim, dim))
    elif isinstance(spec.Delta, (int, float)):
        Delta = float(spec.Delta) * np.eye(dim)
    else:
        Delta = np.asarray(spec.Delta, dtype=float)
    if spec.gamma is not None:
        return UncertaintyClass(gamma=spec.gamma, Delta=Delta)
    if model.class_params is not None:
        return model.class_params
    if model.is_standard:
        Ntil = normalize_mass(sys).Ntil
        return UncertaintyClass(gamma=float(np.trace(Ntil @ Ntil.T)), Delta=Delta)
    raise ConfigError("robust.gamma required for this force model")


def resolve_eps(cfg: ExperimentConfig, sys: LshSystem, uc: Optional[UncertaintyClass] = None,
                second_moment_x0: float = 0.0):
    spec = cfg.robust
    if spec.eps == 'auto':
        return default_eps(eps_bounds(sys)), None
    if spec.eps == 'scan':
        if uc is None:
            return default_eps(eps_bounds(sys)), None
        return scan_eps(sys, uc, points=spec.scan_points, second_moment_x0=second_moment_x0)
    return float(spec.eps), None


# Commands

def run_stability(cfg: ExperimentConfig) -> ResultEnvelope:
    sys = cfg.lsh_system()
    window = eps_bounds(sys)
    eps, _ = resolve_eps(cfg, sys)
    cert = certificate(sys, eps)
    diagnosis = hurwitz_diagnosis(realize(sys).A)
    outputs = {
        'system': sys.to_dict(),
        'eps_window': {'eps1_bound': window.eps1_bound, 'eps2_bound': window.eps2_bound},
        'eps': eps,
        'certificate': cert.to_dict(),
        'hurwitz': diagnosis.hurwitz,
        'hurwitz_status': diagnosis.status,
    }
    envelope = ResultEnvelope(command='stability', config_digest=cfg.digest(), seed=None, outputs=outputs)
    if not cert.valid:
        envelope.exit_code = EXIT_CONDITIONS_NOT_MET
        envelope.diagnostics['message'] = f"eps={eps:.6g} lies outside the certified window"
    return envelope


def run_invariant(cfg: ExperimentConfig) -> ResultEnvelope:
    sys = cfg.lsh_system()
    meas = invariant_covariance(sys)
    ss = realize(sys)
    residuals = sylvester_residuals(sys, meas)
    bound = controllability_bound(sys)
    ale = ss.A @ meas.Pi + meas.Pi @ ss.A.T + ss.B @ ss.B.T
    outputs = {
        'system': sys.to_dict(),
        'invariant': meas.to_dict(),
        'virial': virial_check(sys, meas).to_dict(),
        'controllability_bound': {'matrix': bound.bound_matrix.tolist(), 'lambda_min': bound.min_eig},
    }
    diagnostics = {
        'ale_residual': float(np.linalg.norm(ale)),
        'sylvester_residuals': residuals._asdict(),
    }
    return ResultEnvelope(command='invariant', config_digest=cfg.digest(), seed=None, outputs=outputs,
                          diagnostics=diagnostics)


def _state_columns(n: int) -> List[str]:
    return [f'q{i + 1}' for i in range(n)] + [f'p{i + 1}' for i in range(n)]


def run_simulate(cfg: ExperimentConfig) -> ResultEnvelope:
    sys = cfg.lsh_system()
    spec = cfg.simulation
    model = build_force(cfg.force, sys, eps=default_eps(eps_bounds(sys)) if cfg.force.delta is not None else None)
    scheme = resolve_scheme(spec, model)
    times = time_grid(spec)
    records = snap_to_grid(times, spec.record_times) if spec.record_times else default_record_times(times)
    x0 = initial_law(spec, sys)
    sample_count = min(spec.sample_paths, spec.paths)

    ensemble = simulate_ensemble(sys, model, x0, times, seed=spec.seed, paths=spec.paths, scheme=scheme,
                                 record_times=records,
                                 reducers={'energy_audit': lambda traj: _energy_columns(traj, sys, model)})

    n = sys.n
    columns = _state_columns(n)
    rows = []
    for path in range(sample_count):
        frame = pd.DataFrame(ensemble.states[path], columns=columns)
        frame.insert(0, 't', ensemble.times)
        frame.insert(1, 'path', path)
        frame[[f'y{i + 1}' for i in range(sys.m)]] = ensemble.states[path][:, :n] @ sys.N.T
        rows.append(frame)
    tables = {}
    if rows:
        tables['trajectory'] = pd.concat(rows, ignore_index=True)

    energy = 0.5 * np.einsum('pri,ij,prj->pr', ensemble.states, energy_matrix(sys), ensemble.states)
    count = ensemble.states.shape[0]
    moments = pd.DataFrame({
        't': ensemble.times,
        'mean_energy': energy.mean(axis=0),
        'sem_energy': energy.std(axis=0, ddof=1) / np.sqrt(count) if count > 1 else 0.0,
        'mean_sq_norm': np.mean(np.sum(ensemble.states ** 2, axis=-1), axis=0),
    })
    tables['moments'] = moments

    virial = virial_empirical(sys, ensemble.states[:, -1])
    residual, work_gap = ensemble.extras['energy_audit'].T
    outputs = {
        'scheme': scheme,
        'dt': float(times[1] - times[0]),
        'steps': int(times.shape[0] - 1),
        'paths': int(spec.paths),
        'force': model.description,
        'final_virial': virial.to_dict(orient='index'),
        'energy_residual': {
            'median_abs': float(np.median(np.abs(residual))),
            'max_abs': float(np.max(np.abs(residual))),
        },
        'work_output_gap': float(np.max(work_gap)),
    }
    return ResultEnvelope(command='simulate', config_digest=cfg.digest(), seed=spec.seed, outputs=outputs,
                          tables=tables)


def _energy_columns(traj: Trajectory, sys: LshSystem, model) -> np.ndarray:
    """Per path energy-balance residual and |work - output work| (two discretisations of one integral)"""
    audit = energy_balance_residual(traj, sys, model)
    return np.column_stack([audit.residual, np.abs(audit.work - audit.work_output)])


def run_filter_command(cfg: ExperimentConfig) -> ResultEnvelope:
    sys = cfg.lsh_system()
    spec = cfg.simulation
    meas = invariant_covariance(sys)
    setup = filter_setup(sys, meas)
    model = standard_wiener(sys.m)
    times = time_grid(spec, horizon=max(spec.probe_times))
    probes = snap_to_grid(times, spec.probe_times)

    def filter_chunk(traj: Trajectory):
        """Probe errors flattened per path, with the chunk's increment gap as the last column"""
        run = run_filter(sys, traj, setup)
        errors = run.error[:, record_indices(traj.times, probes)].reshape(run.error.shape[0], -1)
        gap = np.full((errors.shape[0], 1), error_increment_check(sys, run, traj))
        return np.hstack([errors, gap])

    ensemble = simulate_ensemble(sys, model, GaussianInitial(mean=np.zeros(2 * sys.n), cov=meas.Pi), times,
                                 seed=spec.seed, paths=spec.paths, scheme=resolve_scheme(spec, model),
                                 record_times=probes,
                                 reducers={'filter': filter_chunk})

    covariances = np.stack([covariance_closed_form(setup, sys.K, t) for t in probes])
    reduced = ensemble.extras['filter']
    errors = reduced[:, :-1].reshape(reduced.shape[0], len(probes), sys.n)
    probe_run = FilterRun(times=probes, qhat=ensemble.states[..., :sys.n] - errors, error=errors,
                          innovations=np.empty((errors.shape[0], 0, sys.n)), P=covariances)
    probe_traj = Trajectory(times=probes, states=ensemble.states, outputs=None, force=None, seed=spec.seed,
                            scheme=ensemble.scheme, paths=np.arange(errors.shape[0]))
    error_table = empirical_error_table(probe_run, probes)
    cross_table = orthogonality_table(probe_run, probe_traj, probes)

    K_inv = np.linalg.inv(sys.K)
    limit = K_inv @ setup.D @ K_inv
    horizon = 1e6
    scaled = horizon * covariance_closed_form(setup, sys.K, horizon)
    outputs = {
        'setup': setup.to_dict(),
        'probe_times': probes.tolist(),
        'closed_form_P': covariances.tolist(),
        'information_limit': limit.tolist(),
        'information_limit_gap': float(np.linalg.norm(scaled - limit) / np.linalg.norm(limit)),
        'max_abs_z_cov': float(np.nanmax(np.abs(error_table['z_cov']))),
        'max_abs_z_orthogonality': float(np.nanmax(np.abs(cross_table['z']))),
    }
    diagnostics = {'error_increment_gap': float(np.max(reduced[:, -1]))}
    return ResultEnvelope(command='filter', config_digest=cfg.digest(), seed=spec.seed, outputs=outputs,
                          diagnostics=diagnostics, tables={'filter_errors': error_table,
                                                           'orthogonality': cross_table})


def run_robust(cfg: ExperimentConfig) -> ResultEnvelope:
    sys = cfg.lsh_system()
    spec = cfg.simulation
    window = eps_bounds(sys)
    first_eps = default_eps(window) if isinstance(cfg.robust.eps, str) else float(cfg.robust.eps)
    model = build_force(cfg.force, sys, eps=first_eps)
    x0 = initial_law(spec, sys)
    uc = uncertainty_class(cfg, sys, model)
    eps, scan_table = resolve_eps(cfg, sys, uc, x0.second_moment)

    Q = deformation_matrix(sys, eps)
    bound = robust_bound(sys, eps, uc, x0.second_moment,
                         initial_energy=exact_initial_energy(Q, x0.mean, x0.cov))

    times = time_grid(spec)
    records = snap_to_grid(times, spec.record_times) if spec.record_times else default_record_times(times)
    reducers = {'admissibility_margin': lambda traj: np.min(class_margins(sys, eps, uc, traj), axis=1)}
    ensemble = simulate_ensemble(sys, model, x0, times, seed=spec.seed, paths=spec.paths,
                                 scheme=resolve_scheme(spec, model), record_times=records, reducers=reducers)
    margins = ensemble.extras['admissibility_margin']
    envelope_table = moment_envelope(sys, bound, ensemble)
    final = envelope_table.iloc[-1]

    outputs = {
        'eps_window': {'eps1_bound': window.eps1_bound, 'eps2_bound': window.eps2_bound},
        'uncertainty_class': uc.to_dict(),
        'bound': bound.to_dict(),
        'final_mean_sq_norm': float(final['mean_sq_norm']),
        'final_sem_sq_norm': float(final['sem_sq_norm']),
        'within_envelope': bool(envelope_table['within_envelope'].all()),
        'admissible_paths': int(np.sum(margins >= -1e-9)),
    }
    diagnostics = {'worst_admissibility_margin': float(np.min(margins))}
    envelope = ResultEnvelope(command='robust', config_digest=cfg.digest(), seed=spec.seed, outputs=outputs,
                              diagnostics=diagnostics, tables={'envelope': envelope_table})
    if scan_table is not None:
        envelope.tables['eps_scan'] = scan_table

    if outputs['admissible_paths'] == margins.shape[0]:
        check = supermartingale_check(sys, eps, uc, ensemble, margins=margins)
        outputs['supermartingale'] = {'nonincreasing': check.nonincreasing, 'max_uptick': check.max_uptick,
                                      'low_power': check.low_power}
    else:
        logger.warning("ensemble leaves the uncertainty class; supermartingale check skipped")
        envelope.exit_code = EXIT_CONDITIONS_NOT_MET
        diagnostics['message'] = "sample paths violate the class inequality"
    return envelope


def run_compose(cfg: ExperimentConfig) -> ResultEnvelope:
    s1, s2 = cfg.feedback_pair()
    uc = None
    if cfg.robust.gamma is not None:
        dim = 4 * s1.n
        Delta = cfg.robust.Delta if cfg.robust.Delta is not None else 0.0
        Delta = float(Delta) * np.eye(dim) if isinstance(Delta, (int, float)) else np.asarray(Delta, dtype=float)
        uc = UncertaintyClass(gamma=cfg.robust.gamma, Delta=Delta)
    eps = None if isinstance(cfg.robust.eps, str) else float(cfg.robust.eps)
    report = closed_loop_stability(s1, s2, uc=uc, eps=eps)

    envelope = ResultEnvelope(command='compose', config_digest=cfg.digest(), seed=None, outputs=report)
    if not report['certificate_applicable']:
        envelope.exit_code = EXIT_CONDITIONS_NOT_MET
        envelope.diagnostics['failing'] = report['failing']
    return envelope


def run_transfer(cfg: ExperimentConfig) -> ResultEnvelope:
    sys = cfg.lsh_system()
    points = []
    for re, im in cfg.transfer.points:
        s = complex(re, im)
        try:
            phi = transfer(sys, s)
            chi = char_poly_eval(sys, s)
            points.append({'s': [re, im], 'Phi_real': phi.real.tolist(), 'Phi_imag': phi.imag.tolist(),
                           'chi': [chi.real, chi.imag], 'singular': False})
        except SingularityError as e:
            logger.warning(f"Phi is singular at s={s}: {e}")
            points.append({'s': [re, im], 'singular': True})
    outputs = {'system': sys.to_dict(), 'points': points}
    try:
        outputs['static_gain'] = static_gain(sys).tolist()
    except SingularityError:
        outputs['static_gain'] = None
    return ResultEnvelope(command='transfer', config_digest=cfg.digest(), seed=None, outputs=outputs)


HANDLERS = {
    'stability': run_stability,
    'invariant': run_invariant,
    'simulate': run_simulate,
    'filter': run_filter_command,
    'robust': run_robust,
    'compose': run_compose,
    'transfer': run_transfer,
}


def dispatch(command: str, cfg: ExperimentConfig) -> ResultEnvelope:
    """
    Run one command. A failing sufficient condition gives an envelope with
    exit code 2 instead of an exception; other errors propagate.
    """
    if command not in HANDLERS:
        raise ConfigError(f"unknown command {command!r}; expected one of {COMMANDS}")
    if command in STOCHASTIC_COMMANDS and cfg.simulation.seed is None:
        raise ConfigError(f"seed required for the {command} command")

    start = time.perf_counter()
    try:
        envelope = HANDLERS[command](cfg)
    except ConditionsNotMet as e:
        logger.warning(f"{command}: conditions not met: {e}")
        envelope = ResultEnvelope(command=command, config_digest=cfg.digest(),
                                  seed=cfg.simulation.seed if command in STOCHASTIC_COMMANDS else None,
                                  outputs={}, diagnostics={'message': str(e), 'failing': e.failing},
                                  exit_code=EXIT_CONDITIONS_NOT_MET)
    envelope.wall_time_s = time.perf_counter() - start
    logger.info(f"{command} finished in {envelope.wall_time_s:.3f}s (exit {envelope.exit_code})")
    return envelope
