"""Stereo matching with a neural Markov random field over pruned candidate labels."""

from .config import RunConfig, resolve_config
from .errors import PipelineError
from .model import NMRFStereo, StereoOutput

__all__ = ["NMRFStereo", "PipelineError", "RunConfig", "StereoOutput", "resolve_config"]
