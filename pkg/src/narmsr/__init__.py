"""Single-image super-resolution by unfolded half-quadratic splitting with a
nonlocal autoregressive (NARM) prior and plug-in classical denoisers."""

from .degradation import DegradationOp, make_gaussian_kernel
from .denoiser import DenoiserSpec
from .metrics import psnr, ssim
from .narm import NarmParams, build_narm_matrix
from .solver import SolverConfig, self_ensemble, solve, superresolve

__version__ = "0.1.0"

__all__ = [
    "DegradationOp",
    "DenoiserSpec",
    "NarmParams",
    "SolverConfig",
    "build_narm_matrix",
    "make_gaussian_kernel",
    "psnr",
    "self_ensemble",
    "solve",
    "ssim",
    "superresolve",
]
