"""Exception types used across the solver."""


class FracstepError(Exception):
    """Base class for all solver errors."""


class AccuracyError(FracstepError):
    """A special-function evaluation could not reach its accuracy target."""


class LockingError(FracstepError):
    """The adaptive controller kept forcing minimal steps without progress.

    Raised when more consecutive tau_min cells are forced than the
    configured limit allows and singularity detection is not enabled
    (or cannot help).
    """


class RestartBudgetError(FracstepError):
    """Singularity detection exceeded its restart budget."""


class SingularSystemError(FracstepError):
    """The collocation linear system was (numerically) singular.

    Signals a misconfigured step or operator rather than a solver bug.
    """


class ConfigError(FracstepError):
    """A run configuration failed validation."""
