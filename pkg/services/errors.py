"""
Error types for dirac-loc
Each error carries the CLI exit code it maps to
"""


class DiracLocError(Exception):
    """Base error."""
    exit_code = 1


class ConfigError(DiracLocError):
    """Invalid configuration or invalid arguments."""
    exit_code = 2


class DimensionError(ConfigError, ValueError):
    """Matrix shape does not fit the operation."""


class ModelError(ConfigError):
    """Invalid model description."""


class EnumerationError(ConfigError):
    """Too many channels for a 2^N enumeration."""


class CoverageError(ConfigError):
    """Disorder word does not cover the requested interval."""


class NumericalError(DiracLocError):
    """Numerical failure or data-quality failure."""
    exit_code = 3


class MembershipError(NumericalError):
    """Matrix fails a group-membership predicate."""


class RankDeficientFrameError(NumericalError):
    """Frame does not have full column rank."""


class SingularConfigurationError(NumericalError):
    """Green kernel preconditions fail."""

    def __init__(self, message: str, condition: float):
        super().__init__(f"{message} (condition number {condition:.3e})")
        self.condition = condition


class UnclosedBasisError(NumericalError):
    """Classification requested on a basis that is not bracket-closed."""


class DomainError(NumericalError):
    """Integration window does not cover the evaluation window."""


class DataQualityError(NumericalError):
    """Too many samples rejected to report a result."""
