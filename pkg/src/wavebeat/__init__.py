"""Beat and downbeat tracking directly from raw audio with a strided, dilated TCN."""

from .model import DESK_CONFIG, PAPER_CONFIG, ModelConfig, WaveBeatModel, build, infer, receptive_field
from .trainer import DESK_TRAIN, PAPER_TRAIN, TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "DESK_CONFIG", "PAPER_CONFIG", "ModelConfig", "WaveBeatModel", "build", "infer",
    "receptive_field", "DESK_TRAIN", "PAPER_TRAIN", "TrainConfig", "train",
]
