"""Exception hierarchy.

Everything raised for bad input data derives from :class:`TouchSoundError`
so the CLI can map it to exit code 2.
"""


class TouchSoundError(Exception):
    """Base class for data errors."""


class MalformedWav(TouchSoundError):
    pass


class UnsupportedFormat(TouchSoundError):
    pass


class IoFailure(TouchSoundError):
    pass


class ParseError(TouchSoundError):
    def __init__(self, message, line=None, offset=None):
        self.line = line
        self.offset = offset
        where = ""
        if line is not None:
            where = f" (line {line}, column {offset})"
        super().__init__(message + where)


class UnknownLabel(TouchSoundError):
    def __init__(self, label):
        self.label = label
        super().__init__(f"unknown touch label: {label!r}")


class InvalidCutoff(TouchSoundError):
    pass


class EmptyAfterTrim(TouchSoundError):
    pass


class DegenerateAllZero(TouchSoundError):
    pass


class ShapeMismatch(TouchSoundError):
    pass


class BadMagic(TouchSoundError):
    pass


class VersionMismatch(TouchSoundError):
    pass


class SizeMismatch(TouchSoundError):
    pass


class EmptySplit(TouchSoundError):
    pass


class ClassTooSmall(TouchSoundError):
    pass
