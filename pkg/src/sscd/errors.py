"""Exception types shared across the package."""


class SscdError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(SscdError):
    """Invalid configuration value or unsupported parameter combination."""


class ManifestError(SscdError):
    """Malformed fragment manifest record."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class CacheFormatError(SscdError):
    """Corrupt or truncated embedding cache file."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class IndexFormatError(SscdError):
    """Corrupt or incompatible serialized index file."""


class IndexInvariantError(SscdError):
    """A built index violates one of its structural invariants."""


class EmbeddingServiceError(SscdError):
    """Remote embedding service failed or returned a malformed response."""
