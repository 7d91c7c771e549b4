"""Prior-guided street-view image inpainting.

Library layout mirrors the processing stages: ``data`` (background-aware
dataset construction), ``nets`` (prompter, generator, discriminator),
``losses``, ``training``, ``metrics``/``isodata`` (evaluation), and
``cli`` (the ``mfn`` command).
"""

from .config import (
    ABLATION_FLAGS,
    Config,
    LossWeights,
    ModelConfig,
    PipelineConfig,
    PretextConfig,
    TrainConfig,
    toy_model_config,
)
from .errors import DataError, MfnError, NumericError, UsageError

__version__ = "0.1.0"

__all__ = [
    "ABLATION_FLAGS",
    "Config",
    "DataError",
    "LossWeights",
    "MfnError",
    "ModelConfig",
    "NumericError",
    "PipelineConfig",
    "PretextConfig",
    "TrainConfig",
    "UsageError",
    "toy_model_config",
]
