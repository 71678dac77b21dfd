"""Exception and warning types shared across the package."""


class NomaError(Exception):
    exit_code = 1


class ConfigError(NomaError, ValueError):
    """Invalid configuration. ``line`` is set when the error maps to a config file line."""

    exit_code = 2

    def __init__(self, message, line=None, source=None, field=None):
        self.line = line
        self.source = source
        self.field = field
        self.bare_message = message
        where = ""
        if source is not None and line is not None:
            where = f"{source}:{line}: "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)


class NumericalDegeneracyError(NomaError, ArithmeticError):
    exit_code = 3


class InfeasibleError(NomaError):
    exit_code = 4


class DomainError(ValueError):
    """Argument outside the domain of a special function."""


class LossOfPrecisionWarning(RuntimeWarning):
    pass
