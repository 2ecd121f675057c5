"""Exception types shared across the package."""


class PrismError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(PrismError):
    """A file failed a structural check (magic, version, length, shape).

    Carries enough context to locate the problem: the offending path and,
    where meaningful, the byte offset at which parsing failed.
    """

    def __init__(self, message, path=None, offset=None):
        loc = ""
        if path is not None:
            loc = f" [file={path}" + (f", offset={offset}" if offset is not None else "") + "]"
        super().__init__(message + loc)
        self.path = path
        self.offset = offset


class NumericError(PrismError):
    """A computation produced a non-finite value. Names the failing op."""

    def __init__(self, message, op=None):
        if op is not None:
            message = f"{message} (op={op})"
        super().__init__(message)
        self.op = op
