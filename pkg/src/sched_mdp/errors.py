"""Exception hierarchy shared by all modules.

The CLI maps these onto stable exit codes, so new error types should subclass
one of the existing families rather than ``SchedMdpError`` directly.
"""


class SchedMdpError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(SchedMdpError, ValueError):
    """Invalid model or configuration; ``field`` names the offending entry."""

    def __init__(self, message, field=None):
        self.field = field
        self.reason = message
        super().__init__(f"{field}: {message}" if field else message)


class ParseError(ValidationError):
    """Malformed configuration document."""


class DimensionMismatch(ValidationError):
    pass


class InvalidAction(ValidationError):
    pass


class NonConvergence(SchedMdpError):
    """An iterative procedure hit its iteration cap before meeting tolerance."""

    def __init__(self, message, iterations=None, residual=None):
        self.iterations = iterations
        self.residual = residual
        super().__init__(message)


class MaxIterations(NonConvergence):
    pass


class SingularInnovation(NonConvergence):
    pass


class TruncationTooTight(SchedMdpError):
    """The holding-time cap ``tau_max`` distorts the quantity being computed."""


class StateExplosion(SchedMdpError):
    pass
