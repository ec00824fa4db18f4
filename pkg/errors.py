"""
Exception hierarchy for hiwave-tst.

Every exception carries the process exit code the CLI reports for it:
0 success, 1 usage/config, 2 data, 3 numeric failure.
"""


class HiWaveError(Exception):
    """Base class for all errors raised by this package."""
    exit_code = 1


class ConfigError(HiWaveError):
    """Invalid configuration value, unknown key or unknown name."""
    exit_code = 1


class DimensionError(HiWaveError, ValueError):
    """Tensor or signal shapes do not agree."""
    exit_code = 1


class AutodiffUsageError(HiWaveError, RuntimeError):
    """The differentiation graph was used incorrectly."""
    exit_code = 1


class DataError(HiWaveError):
    """Problem with the dataset on disk or its statistics."""
    exit_code = 2


class IngestionError(DataError):
    """A required dataset file is missing or unreadable."""


class CorruptionError(DataError):
    """Dataset files are present but inconsistent."""


class NumericError(HiWaveError, ArithmeticError):
    """Numeric failure during a forward or backward pass."""
    exit_code = 3


class NumericDomainError(NumericError):
    """An operation was evaluated outside its mathematical domain."""


class NonFiniteGradientError(NumericError):
    """A gradient contained NaN or Inf."""
