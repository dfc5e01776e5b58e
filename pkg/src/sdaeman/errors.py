"""Exception hierarchy.

Each error that the command-line front end maps to a specific exit code
carries an ``exit_code`` class attribute.
"""


class SDAEError(Exception):
    """Base class for all library errors."""

    exit_code = 1


class ConfigError(SDAEError, ValueError):
    exit_code = 2


class UnknownProblemError(SDAEError, KeyError):
    exit_code = 2

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class NumericalGuardError(SDAEError):
    """A numerical guard tripped (chart domain, retraction, denominator)."""

    exit_code = 5


class InvalidPointError(NumericalGuardError, ValueError):
    pass


class DegenerateRetractionError(NumericalGuardError):
    pass


class ChartDomainError(NumericalGuardError):
    pass


class UnsupportedMetricError(SDAEError, NotImplementedError):
    pass


class SingularConstraintError(NumericalGuardError):
    def __init__(self, message, condition_number=float("inf")):
        super().__init__(message)
        self.condition_number = condition_number


class DegenerateDirectionError(NumericalGuardError):
    """|D2Y . a| fell below the denominator guard."""


class CutLocusProximityError(NumericalGuardError):
    pass


class StiffnessError(SDAEError):
    """The stiffness parameter b exceeded its cap."""

    exit_code = 3

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class FallbackFailureError(SDAEError):
    """Gradient descent for the algebraic variable did not converge."""

    exit_code = 4

    def __init__(self, message, residual=float("nan"), local_minimum=False):
        super().__init__(message)
        self.residual = residual
        self.local_minimum = local_minimum


class GeneratorError(SDAEError, ValueError):
    """A diffusion generator failed its symbol self-test or lacks data."""
