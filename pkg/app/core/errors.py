class LabError(Exception):
    """Base class for all errors raised by the lab."""
    pass


class ArgumentError(LabError, ValueError):
    """Raised when arguments are structurally incompatible (grids, sizes)."""
    pass


class RangeError(LabError, ValueError):
    """Raised when a time parameter falls outside [0, 1]."""
    pass


class DomainError(LabError, ArithmeticError):
    """Raised when a numerical operation leaves its domain of validity,
    e.g. a group increment outside the principal-logarithm radius."""
    pass


class ContextMismatch(LabError, ValueError):
    """Raised when paths built over different Lie contexts are combined."""
    pass


class ConfigError(LabError):
    """Raised when an experiment config fails validation.

    `diagnostics` holds one human readable line per offending field/line.
    """

    def __init__(self, message: str, diagnostics=None):
        super().__init__(message)
        self.diagnostics = list(diagnostics or [])

    def __str__(self):
        if not self.diagnostics:
            return super().__str__()
        return super().__str__() + "\n  " + "\n  ".join(self.diagnostics)


class ScheduleWarning(UserWarning):
    """Non-fatal: the radius schedule exponent lies outside (1/2, 1)."""
    pass
