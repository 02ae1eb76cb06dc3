"""Exception hierarchy shared by every gtea module."""


class GteaError(Exception):
    """Base class for all errors raised by the package."""


class ShapeError(GteaError, ValueError):
    """Operand shapes do not conform for an operation."""


class NumericError(GteaError, ArithmeticError):
    """A computation produced NaN or Inf."""


class DataError(GteaError, ValueError):
    """Malformed or inconsistent input data."""


class ConfigError(GteaError, ValueError):
    """Invalid or inconsistent configuration."""


class CheckpointError(GteaError, ValueError):
    """Checkpoint file is corrupt, has the wrong version, or does not match a config."""


class DivergenceError(NumericError):
    """Training hit a non-finite loss or gradient.

    ``model`` holds the parameters from before the failing step and
    ``history`` the completed epochs.
    """

    def __init__(self, message, model=None, history=None):
        super().__init__(message)
        self.model = model
        self.history = history or []
