"""Exception hierarchy shared by every module."""


class CpipsError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class DimensionError(CpipsError, ValueError):
    """Tensor shapes or channel counts do not line up."""


class ContractError(CpipsError, ValueError):
    """A documented precondition was violated by the caller."""


class ConstraintError(CpipsError, ValueError):
    """A constrained parameter is outside its feasible set."""


class ConfigError(CpipsError, ValueError):
    exit_code = 6


class FormatError(CpipsError, ValueError):
    """Malformed bytes. ``offset`` is the byte position of the problem."""

    exit_code = 4

    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class BadMagicError(FormatError):
    pass


class UnsupportedVersionError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class PayloadLengthError(FormatError):
    pass


class DimensionInconsistencyError(FormatError):
    pass


class ImageParseError(FormatError):
    pass


class RangeCoderError(FormatError):
    pass


class SymbolOutOfSupportError(RangeCoderError):
    pass


class ManifestError(CpipsError, ValueError):
    exit_code = 6

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class BindingError(CpipsError):
    """Bitstream was produced by different weights than the ones loaded."""

    exit_code = 5


class TrainingError(CpipsError):
    """Training produced a non-finite loss term."""
