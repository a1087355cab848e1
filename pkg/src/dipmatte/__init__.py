"""Training-free alpha matting with untrained U-nets (deep image prior)."""

from .engine import (
    DivergenceError,
    EngineConfig,
    MatteResult,
    MattingProblem,
    composite,
    extract_matte,
    extract_video,
    total_loss,
)
from .tensor import Tensor, no_grad
from .trimap import TrimapMasks
from .unet import OutputHead, UNetConfig, build_unet

__version__ = "0.1.0"

__all__ = [
    "DivergenceError",
    "EngineConfig",
    "MatteResult",
    "MattingProblem",
    "OutputHead",
    "Tensor",
    "TrimapMasks",
    "UNetConfig",
    "build_unet",
    "composite",
    "extract_matte",
    "extract_video",
    "no_grad",
    "total_loss",
]
