"""Exception types shared across the package."""


class PsldError(Exception):
    """Base class for all package errors."""


class ShapeError(PsldError, ValueError):
    """Operands or stored tensors have incompatible shapes."""


class FormatError(PsldError, ValueError):
    """A file does not follow the expected layout."""


class ParseError(FormatError):
    """A cell or token could not be converted to its expected type."""


class NumericError(PsldError, ArithmeticError):
    """A computation produced non-finite values."""


class CheckpointError(PsldError, ValueError):
    """A checkpoint file is malformed or inconsistent."""
