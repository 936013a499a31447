"""Exception types shared across the toolkit.

Everything user-facing derives from :class:`ToolkitError` so the CLI can map
expected failures to exit code 1 and keep tracebacks for genuine bugs.
"""


class ToolkitError(Exception):
    """Base class for all expected, user-facing errors."""


# pcap files
class UnreadableFile(ToolkitError):
    pass


class BadMagic(ToolkitError):
    pass


class TruncatedHeader(ToolkitError):
    pass


class TruncatedRecord(ToolkitError):
    pass


class CorruptRecord(ToolkitError):
    """Record header contradicts itself (e.g. captured length > frame maximum)."""


# binary container formats (datasets, models)
class FormatVersionMismatch(ToolkitError):
    pass


class ChecksumMismatch(ToolkitError):
    pass


# datasets
class EmptyClass(ToolkitError):
    pass


class EmptyDataset(ToolkitError):
    pass


class EmptySplit(ToolkitError):
    pass


class ClassCountMismatch(ToolkitError):
    pass


class ConfigError(ToolkitError):
    pass


# neural-network engine
class ShapeMismatch(ToolkitError):
    pass


class NonFiniteActivation(ToolkitError):
    pass


class NoCachedForward(ToolkitError):
    pass


class InvalidGeometry(ToolkitError):
    pass


class InvalidK(ToolkitError):
    pass
