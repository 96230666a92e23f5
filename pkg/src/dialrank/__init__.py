"""Multi-turn dialogue generation with a self-supervised utterance-ranking
objective: encoders, ranking losses, decoders, training, and evaluation."""

from .corpus import Dialogue, HistoryResponsePair, Utterance, Vocab
from .model import REGISTRY, DialogueModel, ModelConfig, preset_config
from .trainer import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "Dialogue",
    "DialogueModel",
    "HistoryResponsePair",
    "ModelConfig",
    "REGISTRY",
    "TrainConfig",
    "Utterance",
    "Vocab",
    "preset_config",
    "train",
]
