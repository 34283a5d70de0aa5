"""Desk-scale budgeted UNet architecture search for denoising diffusion models."""

from .denoiser import (ArchitectureConfig, ArchSpace, DenoiserParams,
                       StrategySpace, TrainStrategy)
from .diffusion import Dataset, RunSettings
from .schedule import NoiseSchedule, build_cosine, build_linear, respace
from .search import SearchConfig

__all__ = [
    "ArchitectureConfig", "ArchSpace", "DenoiserParams", "StrategySpace",
    "TrainStrategy", "Dataset", "RunSettings", "NoiseSchedule",
    "build_cosine", "build_linear", "respace", "SearchConfig",
]

__version__ = "0.1.0"
