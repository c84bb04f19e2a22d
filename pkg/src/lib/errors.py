"""Exception hierarchy shared by the library and the CLI."""


class SageOptError(Exception):
    """Base class for every error raised by sage-opt."""


class ZeroGradient(SageOptError):
    """Raised when a direction is requested from an all-zero gradient."""


class NotPositiveDefinite(SageOptError):
    """Raised when a Cholesky factorization meets a non-positive pivot."""


class NonFiniteValue(SageOptError):
    """Raised when a matrix or vector contains NaN or Inf."""


class NonFiniteLoss(SageOptError):
    """Raised when a loss evaluation returns NaN or Inf."""


class DimensionTooLarge(SageOptError):
    """Raised when an O(d^2) finite-difference oracle is asked for too many coordinates."""


class TooFewEnvironments(SageOptError):
    """Raised when cross-environment statistics need at least two environments."""


class ConfigError(SageOptError):
    """Raised for unknown keys, malformed values or failed config validation."""


class GateFailure(SageOptError):
    """Raised when a verification gate does not pass."""


class SnapshotFormatError(SageOptError):
    """Raised when a parameter snapshot cannot be decoded."""


class OperationCancelled(SageOptError):
    """Raised when a CPU-bound operation is cancelled via a threading.Event."""
