# Stochastic Hamiltonian systems package initialization
from .exceptions import (LshError, NumericalFailure, NotPositiveDefiniteError, NoUniqueSolutionError,
                         SingularityError, DimensionError, GridError, MissingForcePathError,
                         InadmissibleClassError, ConditionsNotMet, ConfigError)
from .model import LshSystem, realize, normalize_mass, transfer, static_gain, char_poly_eval
from .stability import eps_bounds, certificate, is_hurwitz, deformed_hamiltonian
from .invariant import invariant_covariance, sylvester_residuals, virial_check, controllability_bound
from .forces import ForceModel, standard_wiener, affine_uncertain, bounded_drift, sample_increments
from .simulation import NonlinearHamiltonianSystem, simulate, simulate_ensemble, energy_balance_residual
from .filtering import filter_setup, covariance_closed_form, run_filter
from .robust import UncertaintyClass, robust_bound, admissibility_check, dissipation_audit, supermartingale_check
from .feedback import compose, small_gain_check, closed_loop_stability

__all__ = [
    'LshError', 'NumericalFailure', 'NotPositiveDefiniteError', 'NoUniqueSolutionError', 'SingularityError',
    'DimensionError', 'GridError', 'MissingForcePathError', 'InadmissibleClassError', 'ConditionsNotMet',
    'ConfigError',
    'LshSystem', 'realize', 'normalize_mass', 'transfer', 'static_gain', 'char_poly_eval',
    'eps_bounds', 'certificate', 'is_hurwitz', 'deformed_hamiltonian',
    'invariant_covariance', 'sylvester_residuals', 'virial_check', 'controllability_bound',
    'ForceModel', 'standard_wiener', 'affine_uncertain', 'bounded_drift', 'sample_increments',
    'NonlinearHamiltonianSystem', 'simulate', 'simulate_ensemble', 'energy_balance_residual',
    'filter_setup', 'covariance_closed_form', 'run_filter',
    'UncertaintyClass', 'robust_bound', 'admissibility_check', 'dissipation_audit', 'supermartingale_check',
    'compose', 'small_gain_check', 'closed_loop_stability',
]
