"""Exception types shared across the package."""


class RsdkError(Exception):
    """Base class for every error raised by rsdk."""


class DimensionError(RsdkError, ValueError):
    """Operand shapes are incompatible with the requested operation."""


class ParameterError(RsdkError, ValueError):
    """A hyperparameter or configuration value is outside its valid range."""


class ContractError(RsdkError, RuntimeError):
    """An API precondition was violated (e.g. backward on a non-scalar)."""


class RangeError(RsdkError, ValueError):
    """Input values fall outside the domain of a conversion."""


class InputError(RsdkError, ValueError):
    """Malformed caller data such as NaN costs or unknown image ids."""


class NumericalError(RsdkError, ArithmeticError):
    """A forward op produced a non-finite value."""


class FormatError(RsdkError, ValueError):
    """A file does not follow the expected on-disk format.

    ``offset`` is the byte offset at which parsing failed, when known.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
