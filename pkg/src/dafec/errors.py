"""Exception hierarchy shared by every module.

``ValueError`` subclasses are used for bad inputs so callers that only
know the standard library can still catch them.
"""


class DafecError(Exception):
    """Base class for all package errors."""

    exit_code = 2


class InvalidArgumentError(DafecError, ValueError):
    """An argument violates a documented precondition."""


class CapacityError(DafecError, ValueError):
    """A dataset is too small for the requested sample."""


class InvariantError(DafecError):
    """Internal consistency check failed (collisions, unassigned ids, ...)."""


class NumericError(DafecError, ArithmeticError):
    """A non-finite value showed up where a finite one is required."""

    exit_code = 3


class StageError(DafecError):
    """A pipeline stage failed; wraps the original error with the stage name."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 2)
