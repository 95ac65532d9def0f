"""Structure-consistency loss learning for MPI system-matrix super-resolution.

The package bundles a field-free-point Lissajous simulator, the patch-based
training losses with analytic gradients, a shifted-window super-resolution
network, interpolation and sparse-recovery baselines, nRMSE/pSNR metrics,
a regularized Kaczmarz reconstructor, and a small CLI (``smforge``).
"""

from .core import (
    ComplexImage, FreqDescriptor, Grid, RimImage, SystemMatrix,
    downsample, downsample_sm, image_to_row, rim_decode, rim_encode, sm_row_to_image,
)
from .errors import (
    ConfigError, DivergenceError, FormatError, InvalidDataError, ShapeError,
    SmforgeError, UndefinedMetricError,
)
from .losses import LossConfig, fsc_loss, l1_loss, l2_loss, ssim, ssim_ad
from .metrics import mean_row_nrmse, nrmse, psnr
from .sim import Phantom, SimConfig, VoltageSpectrum, add_noise, simulate_sm, simulate_voltage

__version__ = "0.1.0"

__all__ = [
    "ComplexImage", "FreqDescriptor", "Grid", "RimImage", "SystemMatrix",
    "downsample", "downsample_sm", "image_to_row", "rim_decode", "rim_encode", "sm_row_to_image",
    "ConfigError", "DivergenceError", "FormatError", "InvalidDataError", "ShapeError",
    "SmforgeError", "UndefinedMetricError",
    "LossConfig", "fsc_loss", "l1_loss", "l2_loss", "ssim", "ssim_ad",
    "mean_row_nrmse", "nrmse", "psnr",
    "Phantom", "SimConfig", "VoltageSpectrum", "add_noise", "simulate_sm", "simulate_voltage",
]
