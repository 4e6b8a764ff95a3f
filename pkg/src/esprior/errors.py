"""Exception hierarchy shared by all modules."""


class EspriorError(Exception):
    """Base class for every error raised by this package."""


class ArgumentError(EspriorError, ValueError):
    """An argument is out of range or has the wrong shape."""


class DegenerateInputError(EspriorError, ValueError):
    """Input is too small or too degenerate for the requested operation."""


class DataError(EspriorError, ValueError):
    """Observed data violates the model's support (non-finite, bad labels, ...)."""


class DomainError(EspriorError, ValueError):
    """A function was evaluated outside its mathematical domain."""


class NumericError(EspriorError, ArithmeticError):
    """A numerical routine failed or produced non-finite values."""

    def __init__(self, message, **context):
        super().__init__(message)
        self.context = context


class ConfigurationError(EspriorError, ValueError):
    """Hyperparameters make the requested computation infeasible."""


class FitError(NumericError):
    """Variational optimization diverged; ``trace`` holds the objective prefix."""

    def __init__(self, message, trace=None, **context):
        super().__init__(message, **context)
        self.trace = list(trace) if trace is not None else []


class ParseError(EspriorError, ValueError):
    """A data file could not be parsed; ``line`` is 1-based when known."""

    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line
