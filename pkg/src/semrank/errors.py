"""Exception types shared across the package."""


class SemrankError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(SemrankError):
    """A run configuration is missing, malformed, or references absent paths."""


class EmbeddingServiceError(SemrankError):
    """The remote encoder failed: transport error, bad status, or bad payload.

    batch_index identifies which request batch failed (0-based).
    """

    def __init__(self, message: str, batch_index: int | None = None,
                 status: int | None = None):
        super().__init__(message)
        self.batch_index = batch_index
        self.status = status


class JudgeServiceError(SemrankError):
    """The judge endpoint failed after the configured retries."""


class DegenerateVectorError(ValueError, SemrankError):
    """A cosine argument has zero norm."""


class CheckpointError(SemrankError):
    """A checkpoint file is missing, truncated, or from an unknown version."""
