"""
Error hierarchy for the stochastic Hamiltonian toolkit.

Every error raised by the library derives from LshError. The command-line
front end maps ConditionsNotMet to exit code 2 (a sufficient condition is
not met, nothing is wrong with the computation) and every other LshError
to exit code 1.
"""


class LshError(Exception):
    """Base class for all toolkit errors"""


class NumericalFailure(LshError):
    """An eigensolver or factorisation did not converge"""


class NotPositiveDefiniteError(LshError, ValueError):
    """A matrix required to be positive definite is not"""


class NoUniqueSolutionError(LshError):
    """A Lyapunov/Sylvester equation has a singular Kronecker system"""


class SingularityError(LshError):
    """A matrix that must be inverted is singular (pencil, stiffness, Gramian block)"""


class DimensionError(LshError, ValueError):
    """Inconsistent matrix or vector dimensions"""


class GridError(LshError, ValueError):
    """Time grid is not strictly increasing or does not match the data on it"""


class MissingForcePathError(LshError, ValueError):
    """A trajectory lacks the realised force records an audit needs"""


class InadmissibleClassError(LshError):
    """An uncertainty class violates Delta < Psi, or paths leave the class"""


class ConditionsNotMet(LshError):
    """The hypotheses of a sufficient condition do not hold"""

    def __init__(self, message: str, failing: dict = None):
        super().__init__(message)
        self.failing = failing or {}


class ConfigError(LshError, ValueError):
    """Experiment configuration could not be parsed or validated"""
