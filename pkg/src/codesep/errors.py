"""Exception types shared across the package.

Plain argument validation raises :class:`ValueError`; the classes below mark the
failure categories that the CLI maps to distinct exit codes.
"""


class ConfigurationError(Exception):
    """Models, checkpoints or settings are inconsistent with each other."""


class DataError(Exception):
    """A corpus or manifest on disk is malformed or incomplete."""


class BitstreamError(ValueError):
    """A token bitstream could not be parsed; ``offset`` is the failing byte."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class TrainingAborted(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, stage: str, step: int):
        super().__init__(f"{stage} training produced a non-finite loss at step {step}")
        self.stage = stage
        self.step = step


class CheckpointError(ValueError):
    """A checkpoint file is corrupt, truncated, of another format version or stage."""
