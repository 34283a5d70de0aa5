"""Exception hierarchy shared across the package."""


class DiffNasError(Exception):
    """Base class for all package errors."""


class InvalidRangeError(DiffNasError, ValueError):
    """A numeric argument is outside its documented range."""


class InvalidShapeError(DiffNasError, ValueError):
    """An array has a shape the operation cannot accept."""


class ShapeMismatchError(InvalidShapeError):
    """Two arrays that must agree in shape do not."""


class TimestepError(InvalidRangeError):
    """A diffusion timestep is outside [1, T]."""


class NonFiniteError(DiffNasError, FloatingPointError):
    """A loss or activation became NaN/Inf; the caller should abort the run."""


class StaleCacheError(DiffNasError, RuntimeError):
    """backward() called without a matching training-mode forward()."""


class InsufficientSamplesError(DiffNasError, ValueError):
    """Too few samples to estimate the requested statistic."""


class DimensionMismatchError(DiffNasError, ValueError):
    """Gaussian statistics of different dimension were combined."""


class NotPSDError(DiffNasError, ArithmeticError):
    """A covariance product has a significantly negative eigenvalue."""


class DegenerateVarianceError(DiffNasError, ValueError):
    """A correlation input has zero variance (all values tied)."""


class ParseFailureError(DiffNasError, ValueError):
    """No valid machine-readable block could be extracted from a response."""


class RangeViolationError(DiffNasError, ValueError):
    """A syntactically valid proposal lies outside the search space."""


class BackendUnavailableError(DiffNasError, RuntimeError):
    """The remote proposal backend could not be reached."""


class FixtureExhaustedError(DiffNasError, RuntimeError):
    """The scripted backend ran out of canned responses."""


class NoAcceptedCandidatesError(DiffNasError, RuntimeError):
    """A finished search contains no accepted record to select from."""


class ConfigError(DiffNasError, ValueError):
    """A run-configuration file is malformed or contains unknown keys."""
