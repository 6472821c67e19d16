from .config import DecoderStages, ModelConfig
from .decoder import AxisOutput, StageOutput
from .encoder import EncoderMemory
from .sepformer import SepFormer, build_model, normalize_image, threshold_selector, to_separators

__all__ = [
    "AxisOutput",
    "DecoderStages",
    "EncoderMemory",
    "ModelConfig",
    "SepFormer",
    "StageOutput",
    "build_model",
    "normalize_image",
    "threshold_selector",
    "to_separators",
]
