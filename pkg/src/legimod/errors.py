"""Exception hierarchy shared across the package."""


class LegimodError(Exception):
    """Base class for all package errors."""


class DomainError(LegimodError, ValueError):
    """An argument is outside the documented domain of an operation."""


class DegenerateGeometryError(LegimodError, ValueError):
    """Geometry too degenerate to operate on (zero-length chord or curve)."""


class InsufficientLengthError(LegimodError, ValueError):
    """A trajectory is too short for the requested subsampling."""


class CohortTooSmallError(LegimodError, ValueError):
    """Rank normalization needs at least two scores."""


class ConsistencyError(LegimodError, RuntimeError):
    """A cross-check between two independent score routes failed."""


class TrainingDivergenceError(LegimodError, RuntimeError):
    """Training produced a non-finite loss."""


class SamplingDivergenceError(LegimodError, RuntimeError):
    """Ancestral sampling produced a non-finite intermediate."""


class InfeasibleDemoError(LegimodError, RuntimeError):
    """Inverse-dynamics actions cannot reproduce the demonstration."""


class UsageError(LegimodError, RuntimeError):
    """An API was called in an invalid order (e.g. stepping a finished episode)."""
