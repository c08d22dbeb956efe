"""Exception hierarchy shared by every module of the package."""


class FcseError(Exception):
    """Base class for all package errors."""


class FormatError(FcseError):
    """Malformed container or file header."""


class UnsupportedFormatError(FormatError):
    """Well-formed file using an encoding this package does not handle."""


class UnsupportedRateError(FcseError):
    pass


class RateMismatchError(FcseError):
    pass


class DegenerateInputError(FcseError, ValueError):
    """Zero power, zero variance, or all-silent input where a ratio is required."""


class TooShortError(FcseError, ValueError):
    pass


class InconsistencyError(FcseError):
    pass


class ShapeError(FcseError, ValueError):
    pass


class SpecError(FcseError, ValueError):
    """Invalid layer list or architecture description."""


class DegenerateBatchError(FcseError, ValueError):
    pass


class TapeError(FcseError):
    """Backward pass attempted with a missing, stale, or already consumed tape."""


class NumericError(FcseError, FloatingPointError):
    pass


class CheckpointError(FcseError):
    pass


class InputError(FcseError, ValueError):
    pass
