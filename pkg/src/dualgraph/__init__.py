"""Dual-graph regularized low-rank + sparse moving object detection."""

__version__ = "0.1.0"

from .graph import GraphConfig, build_laplacians
from .solver import SeparationResult, SolverConfig, run
from .synth import SynthSpec, generate
from .video_io import FrameSequence, VideoMatrix, from_matrix, load_frames, to_matrix

__all__ = [
    "FrameSequence",
    "GraphConfig",
    "SeparationResult",
    "SolverConfig",
    "SynthSpec",
    "VideoMatrix",
    "build_laplacians",
    "from_matrix",
    "generate",
    "load_frames",
    "run",
    "to_matrix",
]
