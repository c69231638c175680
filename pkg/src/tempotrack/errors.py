"""Exception types raised across the package."""


class TrackError(Exception):
    """Base class for every error raised by tempotrack."""


class DimensionError(TrackError, ValueError):
    """Operand shapes are incompatible."""


class NumericError(TrackError, ArithmeticError):
    """A NaN or infinity showed up where only finite values are allowed."""


class StateError(TrackError, RuntimeError):
    """An operation was called in the wrong lifecycle phase."""


class InputError(TrackError, ValueError):
    """Caller-supplied data is malformed (degenerate box, count mismatch, ...)."""


class ArchiveError(TrackError, IOError):
    """A tensor archive is corrupt, truncated or incomplete."""


class ScriptError(TrackError, ValueError):
    """A synthetic-sequence script is invalid or drives the target off-frame."""


class ConfigError(TrackError, ValueError):
    """A configuration file has unknown keys or invalid values."""
