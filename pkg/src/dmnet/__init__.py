"""Dual-domain modulation network for lightweight image super-resolution."""
from .blocks import AblationToggles
from .checkpoint import Checkpoint
from .config import ConfigError, RunConfig
from .fourier import ComplexField, fft2, frequency_loss, ifft2
from .metrics import EvalReport, bicubic_resize, evaluate, psnr, rgb_to_y, ssim
from .model import (DMNetConfig, DMNetWeights, count_flops, count_params, forward, super_resolve,
                    upscale)
from .tensor import Tape, Tensor, backward
from .training import TrainConfig, total_loss, train_loop
from .wavelet import SubbandQuad, dwt_haar, idwt_haar

__version__ = "0.1.0"

__all__ = [
    "AblationToggles", "Checkpoint", "ComplexField", "ConfigError", "DMNetConfig", "DMNetWeights",
    "EvalReport", "RunConfig", "SubbandQuad", "Tape", "Tensor", "TrainConfig", "backward",
    "bicubic_resize", "count_flops", "count_params", "dwt_haar", "evaluate", "fft2", "forward",
    "frequency_loss", "idwt_haar", "ifft2", "psnr", "rgb_to_y", "ssim", "super_resolve",
    "total_loss", "train_loop", "upscale",
]
