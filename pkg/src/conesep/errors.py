"""Exception taxonomy shared by every module."""


class ConeSepError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(ConeSepError):
    """Operand shapes are inconsistent."""


class NonFiniteError(ConeSepError):
    """A value that must be finite is NaN or Inf."""


class ZeroNormError(ConeSepError):
    """A row that must be normalizable has zero norm."""


class ConfigError(ConeSepError):
    """Invalid or unknown configuration field."""


class InfeasibleMaskError(ConeSepError):
    """The masked transport kernel has an all-zero row or column."""


class FormatError(ConeSepError):
    """Base class for file-format errors."""


class BadMagicError(FormatError):
    """File does not start with the expected magic bytes."""


class VersionError(FormatError):
    """File format version is not supported."""


class TruncatedError(FormatError):
    """File ends before the declared payload is complete."""


class ShapeMismatchError(FormatError):
    """Declared dimensions are inconsistent with the payload."""
