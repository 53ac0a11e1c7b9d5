"""Exception hierarchy shared by every fmtlab module.

The CLI maps ``ConfigError`` to exit status 2 and ``DataError`` to exit status 1.
"""


class FmtlabError(Exception):
    pass


class ConfigError(FmtlabError, ValueError):
    """Bad format name, unsupported layout, invalid parameter."""


class DataError(FmtlabError, ValueError):
    """Non-finite input, all-zero signal, and similar data problems."""


class ShapeError(DataError):
    pass


class TensorIOError(DataError):
    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
