"""Multimodal pedestrian crossing-intention prediction with verified numerics."""

from .errors import (
    ConfigError,
    DataError,
    MetricError,
    NumericsError,
    PmfnetError,
    ShapeError,
)
from .gradcheck import grad_check
from .model import ModelConfig, PMFNet, tiny_config
from .tensor import Tensor, no_grad

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "MetricError",
    "ModelConfig",
    "NumericsError",
    "PMFNet",
    "PmfnetError",
    "ShapeError",
    "Tensor",
    "grad_check",
    "no_grad",
    "tiny_config",
    "__version__",
]
