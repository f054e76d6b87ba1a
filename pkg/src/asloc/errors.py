"""Exception hierarchy shared across the toolkit.

Each class maps to a distinct CLI exit code so callers can tell
configuration problems, bad input files and numerical blow-ups apart.
"""


class AslocError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(AslocError):
    """Invalid configuration value or combination."""


class ShapeError(AslocError):
    """Array dimensions do not match the operation's contract."""


class DataError(AslocError):
    """Problem with an input file (manifest, features, proposals)."""


class MissingFileError(DataError):
    """A referenced file does not exist."""


class DimensionError(DataError):
    """A feature file's size disagrees with the declared shape."""


class LabelError(DataError):
    """A label or ground-truth entry is out of range."""


class NumericError(AslocError):
    """Non-finite value encountered where a finite one is required."""
