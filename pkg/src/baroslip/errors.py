"""Exception hierarchy shared by every subsystem."""


class BaroslipError(Exception):
    """Base class for all package errors."""


class ShapeError(BaroslipError, ValueError):
    pass


class ConfigError(BaroslipError, ValueError):
    pass


class StateError(BaroslipError, RuntimeError):
    pass


class NumericError(BaroslipError, ArithmeticError):
    """Raised when a loss or parameter becomes non-finite."""


class DataError(BaroslipError, ValueError):
    pass


class CheckpointError(BaroslipError):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class TruncatedError(CheckpointError):
    pass


class ChecksumError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError, ShapeError):
    pass
