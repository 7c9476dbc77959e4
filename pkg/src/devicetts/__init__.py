"""DFSMN-based on-device acoustic model: training, streaming synthesis, cost accounting."""

from .config import DfsmnConfig, ModelConfig, load_config, tiny_config
from .model import (
    DeviceTTS, FeatureMatrix, PhonemeSequence, length_regulate, regulate_durations,
)

__all__ = [
    "DfsmnConfig", "ModelConfig", "load_config", "tiny_config",
    "DeviceTTS", "FeatureMatrix", "PhonemeSequence", "length_regulate", "regulate_durations",
]
__version__ = "0.1.0"
