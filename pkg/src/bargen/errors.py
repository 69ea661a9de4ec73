"""Exception hierarchy shared across the package.

CLI exit codes: config/domain/shape/schedule errors -> 2, capability
errors -> 3, numeric errors -> 4.
"""


class BargenError(Exception):
    """Base class for all package errors."""

    exit_code = 2


class DomainError(BargenError):
    """An argument is outside its documented domain."""

    exit_code = 2


class ShapeError(BargenError):
    """Incompatible array / grid shapes."""

    exit_code = 2


class ScheduleError(BargenError):
    """An unmasking schedule violates its invariants."""

    exit_code = 2


class ConfigError(BargenError):
    """A config file or config object failed validation."""

    exit_code = 2


class CapabilityError(BargenError):
    """The request is valid but deliberately unsupported at this scale
    (e.g. materializing a 2^32-entry vocabulary)."""

    exit_code = 3


class NumericError(BargenError):
    """NaN/Inf or numerical divergence."""

    exit_code = 4


class TrainingError(NumericError):
    """Training diverged; carries a diagnostics snapshot."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
