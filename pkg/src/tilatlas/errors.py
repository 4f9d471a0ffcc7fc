"""Exception types shared across the package."""


class TilAtlasError(Exception):
    """Base class for all package-specific errors."""


class GeometryMismatchError(TilAtlasError, ValueError):
    """Two grid-indexed objects do not share the same geometry."""

    def __init__(self, left, right, context=""):
        self.left = left
        self.right = right
        prefix = f"{context}: " if context else ""
        super().__init__(f"{prefix}geometry mismatch: {left} vs {right}")


class PredictionRecordError(TilAtlasError, ValueError):
    """A prediction record is misaligned, out of bounds, duplicated, or has a bad probability."""


class MalformedMapError(TilAtlasError, ValueError):
    """A combined map does not obey its channel encoding."""


class PredictionFileError(TilAtlasError, ValueError):
    """A prediction file cannot be parsed; carries the offending line number."""

    def __init__(self, message, line_no=None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


class UndefinedEstimateError(TilAtlasError, ValueError):
    """A correlation estimate is undefined for the given data (degenerate marginals)."""


class BootstrapFailureError(TilAtlasError, RuntimeError):
    """Too many bootstrap resamples had undefined estimates."""


class NotFoundError(TilAtlasError, KeyError):
    """Catalog lookup failed."""


class ConflictError(TilAtlasError, RuntimeError):
    """Catalog write conflicts with an existing record."""
