"""Patch-based image denoising with optimal graph Laplacian regularization."""

from .denoiser import OglrParams, denoise_image
from .image_io import NoiseSpec, add_awgn, load_image, psnr, save_image, ssim

__all__ = [
    "NoiseSpec",
    "OglrParams",
    "add_awgn",
    "denoise_image",
    "load_image",
    "psnr",
    "save_image",
    "ssim",
]

__version__ = "0.1.0"
