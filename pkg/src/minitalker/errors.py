"""Exception hierarchy shared across the pipeline.

Exit-code contract for the CLI: 0 success, 2 config error, 3 data error,
4 numeric error.
"""


class MiniTalkerError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(MiniTalkerError):
    """Invalid configuration: bad hyperparameter, unsupported option, missing client."""

    exit_code = 2


class DataError(MiniTalkerError):
    """Invalid data: out-of-range values, non-finite embeddings, missing records."""

    exit_code = 3


class ShapeError(DataError):
    """Array shape or dimension mismatch."""

    exit_code = 3


class NumericError(MiniTalkerError):
    """Numeric guard tripped: probabilities outside (0,1), overflow, NaN loss."""

    exit_code = 4


class InvariantViolation(MiniTalkerError):
    """A guaranteed invariant failed (e.g. frozen parameters changed)."""

    exit_code = 1


class PipelineError(MiniTalkerError):
    """Per-video processing failure that the batch pipeline may retry or skip."""

    exit_code = 3

    def __init__(self, message, video_id=None, retriable=True):
        super().__init__(message)
        self.video_id = video_id
        self.retriable = retriable

    def __str__(self):
        base = super().__str__()
        if self.video_id is not None:
            return f"[video {self.video_id}] {base}"
        return base
