"""Exception types shared across the package."""


class AsslabError(Exception):
    """Base class for all errors raised by this package."""


class InputError(AsslabError):
    """A caller-supplied value violates an operation's precondition."""


class ConfigError(AsslabError):
    """An experiment, generator, or training configuration is invalid."""


class InternalError(AsslabError):
    """An internal consistency check failed; indicates a bug, not user error."""


class TrainingError(AsslabError):
    """Training produced a non-finite loss or parameters.

    Carries the 1-based training step at which the problem was detected.
    """

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class TrackerError(AsslabError):
    """A tracker update referenced an unknown sample or an invalid value."""


class AcquisitionError(AsslabError):
    """An acquisition strategy's preconditions are not met."""
