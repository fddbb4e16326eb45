"""Incremental multi-agent structure from motion over a stream of fly-in images."""
from .bundle import BAProblem, LmConfig, solve, solve_weighted_local
from .engine import Engine, EngineConfig, FinalReport, Reconstruction
from .errors import OtfSfmError
from .geometry import CameraIntrinsics, Pose, SimilarityTransform
from .packet import FramePacket
from .retrieval import GlobalDescriptor, HnswIndex, HnswParams
from .synthstream import AgentSpec, SceneSpec, generate, render_packets

__version__ = "0.1.0"

__all__ = [
    "BAProblem", "LmConfig", "solve", "solve_weighted_local", "Engine", "EngineConfig",
    "FinalReport", "Reconstruction", "OtfSfmError", "CameraIntrinsics", "Pose",
    "SimilarityTransform", "FramePacket", "GlobalDescriptor", "HnswIndex", "HnswParams",
    "AgentSpec", "SceneSpec", "generate", "render_packets",
]
