"""
Exception types shared across the lab packages.
"""

from typing import Optional


class DimensionError(ValueError):
    """Raised when tensor or image shapes do not fit an operation."""


class SequenceLengthError(ValueError):
    """Raised when prompt plus output exceed the model's max_seq."""


class PoisonConfigError(ValueError):
    """Raised when a poison recipe cannot be applied to a training set."""


class CorpusFormatError(ValueError):
    """Raised for a malformed manifest line."""

    def __init__(self, path: str, line_number: int, reason: str):
        self.path = path
        self.line_number = line_number
        super().__init__(f"{path}:{line_number}: {reason}")


class CorpusIOError(OSError):
    """Raised when a corpus or checkpoint file is missing or corrupt."""

    def __init__(self, path: str, reason: str):
        self.path = path
        super().__init__(f"{path}: {reason}")


class TrainingError(RuntimeError):
    """Raised when the loss becomes non-finite."""

    def __init__(self, phase: str, epoch: int, value: float):
        self.phase = phase
        self.epoch = epoch
        super().__init__(f"{phase} training diverged at epoch {epoch} (loss={value})")


class PipelineError(RuntimeError):
    """Wraps any failure inside a named pipeline stage."""

    def __init__(self, stage: str, cause: Optional[BaseException] = None):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause!r}")
