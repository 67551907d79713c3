"""
Error hierarchy for Poincare Align
"""

from typing import Optional


class AlignmentError(Exception):
    """Base class for every error raised by the package."""


class InvalidInputError(AlignmentError, ValueError):
    """Non-finite values, shape or curvature mismatches, empty inputs."""


class DataFormatError(AlignmentError, ValueError):
    """A dataset file could not be parsed or references an unknown entity."""


class TrainingDivergedError(AlignmentError, RuntimeError):
    """The training loss became non-finite."""

    def __init__(self, epoch: int, loss: float):
        super().__init__(f"Training diverged at epoch {epoch}: loss = {loss!r}")
        self.epoch = epoch
        self.loss = loss


class CheckpointError(AlignmentError, ValueError):
    """A checkpoint is unreadable or does not match the run configuration."""


class ConfigError(AlignmentError, ValueError):
    """A configuration value is missing or out of range."""

    def __init__(self, field: str, message: str, value: Optional[object] = None):
        text = f"Invalid configuration field '{field}': {message}"
        if value is not None:
            text += f" (got {value!r})"
        super().__init__(text)
        self.field = field
        self.value = value
