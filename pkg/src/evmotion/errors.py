"""Exception families. The CLI maps each family to its own exit code."""


class EvMotionError(Exception):
    exit_code = 70


class InputError(EvMotionError, ValueError):
    """Bad arguments, missing files, or data violating an operation's preconditions."""

    exit_code = 3


class FormatError(EvMotionError, ValueError):
    """A file on disk does not follow its declared layout."""

    exit_code = 4

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class MagicMismatch(FormatError):
    pass


class LengthMismatch(FormatError):
    pass


class CoordinateOutOfRange(FormatError):
    pass


class InvalidPolarity(FormatError):
    pass


class TimestampError(FormatError):
    pass


class NumericError(EvMotionError, ArithmeticError):
    """Non-finite values appeared in a computation."""

    exit_code = 5

    def __init__(self, message, iteration=None):
        if iteration is not None:
            message = f"{message} at iteration {iteration}"
        super().__init__(message)
        self.iteration = iteration
