class WxsegError(Exception):
    """Base class for all package errors."""


class FormatError(WxsegError):
    """A file does not follow its documented byte layout."""


class DataError(WxsegError):
    """A file or array is well-formed but its content is invalid."""


class PrerequisiteError(WxsegError):
    """A required earlier-stage artifact is missing."""
