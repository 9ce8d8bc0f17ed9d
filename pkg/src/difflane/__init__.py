"""Lane detection as denoising diffusion over lane-anchor parameters."""

from .config import InferConfig, RunConfig, TrainConfig, load_config
from .diffusion import NoiseSchedule, ScaleConfig, cosine_schedule
from .geometry import LaneAnchor, LaneGrid, Polyline, ScoredLane

__all__ = [
    "InferConfig", "RunConfig", "TrainConfig", "load_config",
    "NoiseSchedule", "ScaleConfig", "cosine_schedule",
    "LaneAnchor", "LaneGrid", "Polyline", "ScoredLane",
]

__version__ = "0.1.0"
