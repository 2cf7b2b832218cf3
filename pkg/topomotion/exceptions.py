"""Custom exception classes for topomotion."""


class TopoMotionError(Exception):
    """Base exception for topomotion errors."""
    pass


class ConfigurationError(TopoMotionError):
    """Raised when a run configuration is missing or invalid."""
    pass


class ValidationError(TopoMotionError):
    """Raised when input validation fails."""
    pass


class DimensionError(ValidationError):
    """Raised when tensor shapes do not conform."""
    pass


class ParseError(TopoMotionError):
    """Raised when a BVH file cannot be parsed."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DataFormatError(TopoMotionError):
    """Raised when a container file is corrupt, truncated or of the wrong version."""
    pass


class CheckpointError(TopoMotionError):
    """Raised when a checkpoint is missing or lacks a required section."""
    pass


class NumericalError(TopoMotionError):
    """Raised when a computation produces non-finite values."""
    pass
