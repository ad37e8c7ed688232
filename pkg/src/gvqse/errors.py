"""Exception types shared across the package.

Each class carries the process exit code the command-line front end uses
when the error escapes a command.
"""


class GvqseError(Exception):
    exit_code = 1


class InvalidInputError(GvqseError, ValueError):
    """Arguments violate a documented precondition."""

    exit_code = 3


class DegenerateInputError(InvalidInputError):
    """Input is well-formed but the requested quantity is undefined (e.g. zero power)."""


class ConfigurationError(GvqseError, ValueError):
    """Inconsistent configuration: rate mismatch, wrong group count, bad config file."""

    exit_code = 2


class InsufficientDataError(GvqseError):
    exit_code = 3


class TrainingDivergenceError(GvqseError, FloatingPointError):
    exit_code = 4

    def __init__(self, epoch: int, message: str = "loss became non-finite"):
        super().__init__(f"epoch {epoch}: {message}")
        self.epoch = epoch


class AssetLookupError(GvqseError, LookupError):
    """A degradation stage references a noise source or RIR that does not exist."""

    exit_code = 3


class CorruptModelError(GvqseError):
    exit_code = 3
