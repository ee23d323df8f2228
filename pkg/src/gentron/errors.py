"""Exception hierarchy shared across the package."""


class GentronError(Exception):
    """Base class for all package errors."""


class ShapeError(GentronError, ValueError):
    """Operand shapes are incompatible."""


class ConfigError(GentronError, ValueError):
    """Invalid configuration value or combination."""


class NumericsError(GentronError, ArithmeticError):
    """An operation cannot be evaluated (e.g. a fully masked attention row)."""


class ConditionError(GentronError, ValueError):
    """Text conditioning is missing or malformed."""


class ModeError(GentronError, ValueError):
    """Model/checkpoint mode does not match the request (T2I vs T2V)."""


class CheckpointError(GentronError):
    """Base class for checkpoint I/O failures; ``code`` tells the cases apart."""

    code = "checkpoint"


class CheckpointHeaderError(CheckpointError):
    code = "corrupt_header"


class CheckpointTruncatedError(CheckpointError):
    code = "truncated"


class CheckpointShapeError(CheckpointError):
    code = "shape_mismatch"
