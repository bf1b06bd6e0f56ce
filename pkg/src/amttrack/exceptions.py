"""Exception hierarchy shared by every module.

CLI exit codes are attached to the classes so ``amt`` can map failures
without inspecting messages.
"""


class AMTError(Exception):
    """Base class for all library errors."""

    exit_code = 2


class ShapeError(AMTError, ValueError):
    """Operand dimensions are incompatible."""


class ParameterError(AMTError, ValueError):
    """A scalar parameter is outside its admissible range."""


class DegenerateInputError(AMTError, ValueError):
    """Input is well-formed but mathematically degenerate (zero norm, zero area)."""


class ValidationError(AMTError, ValueError):
    """Configuration, spec or attribute validation failed."""


class ParseError(AMTError, ValueError):
    """A text file could not be parsed; carries the 1-based line number."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class OrderingError(ParseError):
    """Event timestamps decrease within a stream."""


class FormatError(AMTError, ValueError):
    """A binary file (PPM, NTW weights) is malformed or truncated."""

    exit_code = 3


class AlignmentError(AMTError, ValueError):
    """Prediction and ground-truth sequences have different lengths."""


class InitError(AMTError, ValueError):
    """Tracking cannot start (first-frame target absent)."""


class VerificationError(AMTError):
    """A verification check failed."""

    exit_code = 4
