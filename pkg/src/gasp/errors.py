"""Exception types shared across the package."""


class GaspError(Exception):
    """Base class for all package errors."""


class DimensionError(GaspError, ValueError):
    """Shapes or dimensions are incompatible."""


class DomainError(GaspError, ValueError):
    """An operation was applied outside its mathematical domain."""


class NumericError(GaspError, ArithmeticError):
    """A non-finite value appeared (NaN/Inf, divergence)."""


class StatisticsError(GaspError, ValueError):
    """Batch statistics cannot be computed (e.g. a batch of one)."""


class DataFormatError(GaspError, ValueError):
    """A data file is malformed. Carries the offending line/offset when known."""

    def __init__(self, message, *, line=None, offset=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"offset {offset}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.line = line
        self.offset = offset


class CheckpointError(GaspError, ValueError):
    """A checkpoint file is unreadable, truncated, or of the wrong version."""


class ConfigError(GaspError, ValueError):
    """Invalid configuration key or value."""
