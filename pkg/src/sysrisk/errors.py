"""Exception types raised across the package."""


class SysRiskError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(SysRiskError, ValueError):
    pass


class NotPositiveSemidefinite(SysRiskError, ValueError):
    pass


class NonFiniteValue(SysRiskError, FloatingPointError):
    pass


class ParseError(SysRiskError, ValueError):
    """Malformed scenario file; carries the 1-based row/column of the fault."""

    def __init__(self, message, row=None, column=None):
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column}")
        super().__init__(f"{message} ({', '.join(loc)})" if loc else message)
        self.row = row
        self.column = column


class ZeroReference(SysRiskError, ZeroDivisionError):
    pass


class Diverged(SysRiskError, ArithmeticError):
    """Training produced a non-finite objective.

    ``last_state`` holds whatever finite state was reached before the failure.
    """

    def __init__(self, message, last_state=None):
        super().__init__(message)
        self.last_state = last_state


class MissingArtifact(SysRiskError, FileNotFoundError):
    pass


class ConfigError(SysRiskError, ValueError):
    pass
