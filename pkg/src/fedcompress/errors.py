"""Exception types shared across the package."""


class FedCompressError(Exception):
    """Base class for all package errors."""


class ShapeError(FedCompressError, ValueError):
    """Input whose shape or structure violates an operation's contract."""


class UnsupportedArchitectureError(FedCompressError, ValueError):
    """Model lacks the structure an operation requires (e.g. no hidden layer)."""


class DegenerateEmbeddingError(FedCompressError, ValueError):
    """Embedding spectrum is identically zero; no rank score exists."""


class DecodeError(FedCompressError, ValueError):
    """Corrupt or truncated byte stream. Carries the failing byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class PartitionError(FedCompressError, ValueError):
    """Partition spec cannot be satisfied by the dataset."""


class ConfigError(FedCompressError, ValueError):
    """Invalid or unknown experiment configuration entry."""
