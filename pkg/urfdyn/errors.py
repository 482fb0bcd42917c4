"""
Exception hierarchy for urfdyn.

Every error raised on purpose by the package derives from UrfError. The
command-line harness maps the two families onto exit codes:

  - ConfigError / DimensionError (and StorageError) -> exit code 2
  - NumericalError (and DivergenceError)            -> exit code 3

ConfigError and DimensionError also subclass ValueError, and NumericalError
subclasses ArithmeticError, so callers that only know the builtin types can
still catch them.
"""


class UrfError(Exception):
    """Base class for all urfdyn errors."""


class ConfigError(UrfError, ValueError):
    """Invalid configuration value. The message names the field."""


class DimensionError(UrfError, ValueError):
    """Array shapes or CSV columns disagree with what an operation expects."""


class StorageError(ConfigError):
    """A file or directory could not be read or written."""


class NumericalError(UrfError, ArithmeticError):
    """Non-finite values, rank deficiency or a violated numerical postcondition."""


class DivergenceError(NumericalError):
    """A rollout left the finite, bounded region.

    Attributes:
        step: Time index at which the bad state appeared.
        iteration: Outer solver iteration, when raised from inside a solve.
    """

    def __init__(self, message: str, step: int, iteration: int | None = None):
        self.step = step
        self.iteration = iteration
        self.detail = message
        if iteration is not None:
            message = f"{message} (iteration {iteration}, step {step})"
        else:
            message = f"{message} (step {step})"
        super().__init__(message)

    def __reduce__(self):
        # Sweep workers send errors back to the parent process.
        return (type(self), (self.detail, self.step, self.iteration))
