"""Exception types shared across the package.

The CLI maps these onto exit codes: UsageError -> 1, DataError -> 2,
DivergenceError -> 3.
"""


class HycubeError(Exception):
    """Base class for all package errors."""


class ShapeError(HycubeError):
    """Operands have incompatible or invalid shapes."""


class UsageError(HycubeError):
    """Bad command-line flags or config values."""


class DataError(HycubeError):
    """Dataset files missing, empty or malformed beyond recovery."""


class CheckpointError(HycubeError):
    """Checkpoint file corrupt, truncated or incompatible."""


class UnsupportedArityError(HycubeError):
    """Eval-mode forward hit an arity with no kernel bank entry."""


class DivergenceError(HycubeError):
    """Training produced a non-finite loss or gradient."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch
