"""Exception and warning hierarchy.

Every degenerate input that the library can reach maps to one of the named
errors below. All of them derive from :class:`CklsError` so callers can catch
the whole family at once; most also derive from ``ValueError`` because they
signal bad input rather than a bug.
"""

from __future__ import annotations


class CklsError(Exception):
    """Base class for every error raised by this package."""


# parameter validation -------------------------------------------------------


class ParameterError(CklsError, ValueError):
    """A model parameter violates its admissible set."""


class NonPositiveParameter(ParameterError):
    """A parameter that must be strictly positive (and finite) is not."""


class ElasticityOutOfRange(ParameterError):
    """The elasticity lies outside ``[1/2, 1)``."""


class FellerViolation(ParameterError):
    """``k = 1/2`` was requested with ``2a < sigma**2``."""


class DomainError(CklsError, ValueError):
    """A function was evaluated outside its domain."""


class ConfigError(CklsError, ValueError):
    """An experiment, simulation or estimator configuration is invalid."""


# grids and paths -------------------------------------------------------------


class DegenerateGrid(CklsError, ValueError):
    """The requested sampling grid has no increments."""


class StrideMismatch(CklsError, ValueError):
    """A subsampling stride does not divide the number of increments."""


class NonPositivePath(CklsError, ValueError):
    """An operation needing a strictly positive path received a zero."""


class NonFiniteSample(CklsError, FloatingPointError):
    """A simulation produced a non-finite value."""


class PathFormatError(CklsError, ValueError):
    """A serialized path could not be parsed.

    Attributes
    ----------
    line : int or None
        One-based line number of the offending row, when known.
    """

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


# estimation -----------------------------------------------------------------


class TooFewPoints(CklsError, ValueError):
    """Not enough observations for the requested statistic."""


class DegenerateSample(CklsError, ValueError):
    """The empirical variance of the sample is zero."""


class NearUnityLevel(CklsError, ValueError):
    """The level is too close to one for a log-level elasticity estimate."""


class NearUnityRatio(CklsError, ValueError):
    """Two levels are too close for a log-ratio elasticity estimate."""


class NonPositiveIncrement(CklsError, ValueError):
    """A squared increment is zero, so its logarithm is undefined."""


class NoAdmissiblePoints(CklsError, ValueError):
    """Every observation was excluded by the robustness filter."""


class PhiOutOfRange(CklsError, ValueError):
    """The autoregressive coefficient estimate is not in ``(0, 1)``."""


class MomentDoesNotExist(CklsError, ValueError):
    """The requested moment of the stationary law is infinite."""


class QuadratureFailure(CklsError, RuntimeError):
    """Numerical integration did not converge to the requested tolerance."""


# statistics and experiments --------------------------------------------------


class TooFewSamples(CklsError, ValueError):
    """A statistical summary needs more samples than were supplied."""


class DegenerateDesign(CklsError, ValueError):
    """A regression design has no spread in the regressor."""


class FailureBudgetExceeded(CklsError, RuntimeError):
    """Too many Monte Carlo replications failed."""


# warnings -------------------------------------------------------------------


class OutOfModelRangeWarning(UserWarning):
    """An elasticity estimate fell outside the admissible range."""


class WeightDegeneracyWarning(UserWarning):
    """Importance weights have a small effective sample size."""
