"""Exception hierarchy shared by every module."""


class AuxNASError(Exception):
    """Base class for all package errors."""


class ContractViolation(AuxNASError):
    """A precondition or invariant of an operation does not hold."""


class DimensionError(ContractViolation, ValueError):
    """Tensor shapes do not conform."""


class NonFiniteError(AuxNASError, FloatingPointError):
    """An operation produced NaN or Inf."""


class ConfigurationError(AuxNASError, ValueError):
    """A configuration value or combination is invalid."""


class SchemaError(ConfigurationError):
    """A file or document does not match its declared schema."""


class TrainingDiverged(AuxNASError):
    """Training hit a non-finite loss.

    ``snapshot`` holds the last parameter state that produced finite losses.
    """

    def __init__(self, message, snapshot=None, step=None):
        super().__init__(message)
        self.snapshot = snapshot
        self.step = step


class ParseError(SchemaError):
    """A data file row could not be parsed; ``line`` is 1-based."""

    def __init__(self, message, line=None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line
