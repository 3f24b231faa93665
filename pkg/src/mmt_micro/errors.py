"""Exception types shared across the package."""


class MmtError(Exception):
    """Base class for errors raised by this package."""


class ShapeError(MmtError, ValueError):
    """Tensor or array dimensions do not satisfy an operation's contract."""


class ConfigError(MmtError, ValueError):
    """Invalid configuration value, flag, or option combination."""


class FormatError(MmtError, ValueError):
    """A file does not match its expected on-disk format."""


class AlignmentError(MmtError, ValueError):
    """Two resources that must be index-aligned have different sizes."""
