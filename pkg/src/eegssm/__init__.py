"""Selective state space models for scalp EEG, on a small numpy autodiff engine."""

from .errors import ConfigError, DataError, EegSsmError, NumericalError
from .model import ModelConfig, init_model, load_checkpoint, reduced_config, save_checkpoint

__all__ = [
    "ConfigError", "DataError", "EegSsmError", "NumericalError",
    "ModelConfig", "init_model", "load_checkpoint", "reduced_config", "save_checkpoint",
]
__version__ = "0.1.0"
