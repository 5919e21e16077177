"""Two-stage (frequency + time) attention for noise-robust speaker recognition."""

from .attention import AttentionConfig, Scenario, compose, cnn_two_stage
from .backbones import ModelConfig, SpeakerModel
from .tensor import Tensor, no_grad

__all__ = ["AttentionConfig", "Scenario", "compose", "cnn_two_stage", "ModelConfig", "SpeakerModel", "Tensor", "no_grad"]
__version__ = "0.1.0"
