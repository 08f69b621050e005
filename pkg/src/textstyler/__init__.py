"""Text-driven style transfer with portrait-aware losses."""
from .config import (LossRecord, LossWeights, Mode, Patch, PatchLabel, SamplerConfig, TextCondition,
                     ThresholdConfig, TrainRunConfig, WeightPenaltyConfig, validate_config)
from .trainer import Encoders, TrainResult, lr_at, train

__all__ = [
    "Encoders", "LossRecord", "LossWeights", "Mode", "Patch", "PatchLabel", "SamplerConfig",
    "TextCondition", "ThresholdConfig", "TrainResult", "TrainRunConfig", "WeightPenaltyConfig",
    "lr_at", "train", "validate_config",
]
