"""Exception hierarchy shared by all modules.

Each family carries the process exit code the CLI reports for it.
"""


class AbcnnError(Exception):
    exit_code = 1


class ParseError(AbcnnError, ValueError):
    """Malformed header, signal, annotation or container bytes."""

    exit_code = 2


class UnsupportedFormatError(ParseError):
    pass


class ShapeError(AbcnnError, ValueError):
    exit_code = 3


class ConfigError(AbcnnError, ValueError):
    exit_code = 4


class DataIOError(AbcnnError, OSError):
    exit_code = 5


class UnmappedSymbolError(AbcnnError, KeyError):
    exit_code = 2


class UndefinedAUCError(AbcnnError, ValueError):
    exit_code = 3


class SampleRangeError(ParseError):
    """A sample does not fit the 12-bit signed range of format 212."""
