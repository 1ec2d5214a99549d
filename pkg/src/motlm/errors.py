"""Exception hierarchy shared across the package."""


class MotlmError(Exception):
    """Base class for all package errors."""


class DomainError(MotlmError, ValueError):
    """An argument lies outside a function's mathematical domain."""


class ContractError(MotlmError, ValueError):
    """Structural preconditions violated (shape mismatch, empty data, ...)."""


class NumericalError(MotlmError, ArithmeticError):
    """A numerical routine failed to converge or produced non-finite values."""


class InputError(MotlmError, ValueError):
    """Malformed external input (files, CLI configuration)."""


class TrainingError(MotlmError, RuntimeError):
    """The training protocol could not produce any usable model."""
