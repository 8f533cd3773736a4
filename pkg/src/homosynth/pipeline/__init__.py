from .checkpoint import (
    Checkpoint,
    CheckpointError,
    checkpoint_from_model,
    load_checkpoint,
    model_from_checkpoint,
    save_checkpoint,
)
from .config import ConfigError, SystemConfig, load_config, save_config
from .mixing import mix_at_snr
from .model import EnhancementModel, build_model, enhance_clip, forward, forward_graph
from .training import Adam, NonFiniteLossError, PlateauHalver, evaluate, train

__all__ = [
    "Adam",
    "Checkpoint",
    "CheckpointError",
    "ConfigError",
    "EnhancementModel",
    "NonFiniteLossError",
    "PlateauHalver",
    "SystemConfig",
    "build_model",
    "checkpoint_from_model",
    "enhance_clip",
    "evaluate",
    "forward",
    "forward_graph",
    "load_checkpoint",
    "load_config",
    "mix_at_snr",
    "model_from_checkpoint",
    "save_checkpoint",
    "save_config",
    "train",
]
