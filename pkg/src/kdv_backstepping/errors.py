"""Exception types shared across the package."""


class KdVBackstepError(Exception):
    """Base class for every error raised by this package."""


class InvalidArgumentError(KdVBackstepError, ValueError):
    """An argument violates a documented precondition."""


class ConfigError(KdVBackstepError, ValueError):
    """A scenario configuration is malformed or inconsistent."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class ConvergenceError(KdVBackstepError, RuntimeError):
    """An iterative solver stopped before reaching its tolerance."""

    def __init__(self, message, residual):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual


class StepFailure(KdVBackstepError, RuntimeError):
    """A time step could not be completed."""

    def __init__(self, message, residual, t=None):
        where = "" if t is None else f" at t={t:.6g}"
        super().__init__(f"{message}{where} (residual={residual:.3e})")
        self.message = message
        self.residual = residual
        self.t = t
