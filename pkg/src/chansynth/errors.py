"""Exceptions raised when reading the binary file formats."""


class FormatError(ValueError):
    """A file does not follow its documented binary layout."""


class VersionError(FormatError):
    """Unrecognised format: unsupported version number or foreign magic bytes."""


class MagicError(VersionError):
    """Leading magic bytes are wrong; the file is not of the expected kind."""


class TruncatedError(FormatError):
    """Payload shorter (or longer) than the header promises."""


class ShapeError(FormatError):
    """Header fields describe an inconsistent or invalid tensor shape."""
