"""Exception types shared across the toolkit."""


class DdsmcError(Exception):
    """Base class for all toolkit errors."""


class InputError(DdsmcError, ValueError):
    """Array shapes or argument values do not match the model."""


class NumericError(DdsmcError, ArithmeticError):
    """Non-finite values entered or left a computation."""


class CollectionError(DdsmcError):
    """Data collection diverged; ``step`` is the offending sample index."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class DivergenceError(DdsmcError):
    """A closed-loop run left the blow-up bound at ``step``."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class ConfigurationError(DdsmcError, ValueError):
    """Invalid controller/synthesis configuration (e.g. rank-deficient N B)."""


class FormatError(DdsmcError, ValueError):
    """Malformed artifact file; ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
