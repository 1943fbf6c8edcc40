"""Exception hierarchy.

Every error carries an ``exit_code`` so the command-line front end can map
failures onto its documented return codes without inspecting messages.
"""


class WringError(Exception):
    exit_code = 1


class ValidationError(WringError, ValueError):
    """Inputs violate a documented precondition."""

    exit_code = 2


class GeometryError(ValidationError):
    pass


class ScheduleError(ValidationError):
    pass


class ParityError(ValidationError):
    """Operation requires an odd ring."""


class ConfigError(ValidationError):
    pass


class ShotFileError(ValidationError):
    pass


class CapacityError(WringError):
    """Problem size exceeds the dense / exact-diagonalization limits."""

    exit_code = 3


class NumericalError(WringError, ArithmeticError):
    exit_code = 4


class IntegrationError(NumericalError):
    pass


class SingularModelError(NumericalError):
    pass


class FitError(NumericalError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class DegeneratePosteriorError(NumericalError):
    pass


class SearchExhaustedError(NumericalError):
    pass


class OptimizationError(NumericalError):
    pass
