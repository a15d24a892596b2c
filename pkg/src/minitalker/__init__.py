"""Desk-scale emotionally and artistically stylized talking-head pipeline."""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DataError,
    InvariantViolation,
    MiniTalkerError,
    NumericError,
    PipelineError,
    ShapeError,
)

__all__ = [
    "ConfigError",
    "DataError",
    "InvariantViolation",
    "MiniTalkerError",
    "NumericError",
    "PipelineError",
    "ShapeError",
    "__version__",
]
