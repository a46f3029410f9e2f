"""Exception hierarchy shared by the library, the CLI and the HTTP service."""

from __future__ import annotations

from pathlib import Path
from typing import Optional


class PipelineError(RuntimeError):
    """Raised when a stage of the stereo pipeline cannot proceed."""


class StereoInputError(PipelineError):
    """Images, shapes or numeric arguments are unusable."""


class ConfigError(PipelineError):
    """A run configuration is invalid or cannot be resolved."""


class CheckpointError(PipelineError):
    """A checkpoint is unreadable or incompatible with the requested config."""


class DisparityFormatError(PipelineError):
    """A disparity file has a malformed header or an unsupported layout."""


class TrainingDivergedError(PipelineError):
    """The training loss became non-finite."""

    def __init__(self, message: str, diagnostics_path: Optional[Path] = None) -> None:
        super().__init__(message)
        self.diagnostics_path = diagnostics_path
