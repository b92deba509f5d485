"""Exception hierarchy shared by every module."""


class GaussFlowError(Exception):
    pass


class DomainError(GaussFlowError, ValueError):
    """Input outside the mathematical domain of a function (NaN, inf, p outside (0, 1))."""


class ContractError(GaussFlowError, ValueError):
    """Caller broke a precondition: shape mismatch, empty batch, reused tape."""


class NumericError(GaussFlowError, ArithmeticError):
    """A numerical routine failed (bracket expansion, NaN loss)."""

    def __init__(self, message, layer=None):
        super().__init__(message)
        self.layer = layer


class ParseError(GaussFlowError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class CheckpointError(GaussFlowError):
    """Checkpoint unreadable, corrupted, or written by an incompatible version."""
