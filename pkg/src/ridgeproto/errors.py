"""Exception types raised across the package."""


class ContractViolation(ValueError):
    """Shapes or arguments do not satisfy an operation's preconditions."""


class DomainError(ValueError):
    """A value lies outside the mathematical domain of an operation."""


class SingularMatrixError(ArithmeticError):
    """Cholesky factorization failed even after the maximum diagonal jitter."""


class DegenerateMaskError(ValueError):
    """A mask has no foreground (or no background) pixels for the requested class."""


class UnknownClassError(KeyError):
    """An attribute vector was requested for a class the table does not know."""


class SamplingExhaustedError(RuntimeError):
    """Not enough usable images to build the requested episode."""


class ParseError(ValueError):
    """Malformed input file; ``line`` is the 1-based offending line when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class SchemaError(ValueError):
    """Well-formed file whose content does not match what the caller expects."""


class TrainingAborted(RuntimeError):
    """Raised when a training step produces a non-finite loss."""
