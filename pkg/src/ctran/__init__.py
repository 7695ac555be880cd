"""CTRAN: CNN + Transformer joint intent detection and slot filling."""

from .config import ModelConfig, TrainConfig
from .data import Batch, Example, LabelMaps, build_label_maps, encode_batch, parse_corpus
from .model import CTRAN

__version__ = "0.1.0"

__all__ = [
    "CTRAN",
    "Batch",
    "Example",
    "LabelMaps",
    "ModelConfig",
    "TrainConfig",
    "build_label_maps",
    "encode_batch",
    "parse_corpus",
]
