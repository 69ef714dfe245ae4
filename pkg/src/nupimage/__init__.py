"""Piecewise-smooth image estimation with sparse-input state space models and NUP priors."""

from .augmented import refine_augmented
from .basic import edge_maps, estimate_basic
from .imagefile import load_image, save_image
from .model import ChainScales, ContractError, HyperParams, LatentField, ObservationField
from .tasks import (PhiSpec, add_noise_gaussian, add_noise_poisson_gaussian, contrast_enhance, denoise,
                    denoise_poisson_gaussian, inpaint, psnr)

__all__ = [
    "ChainScales", "ContractError", "HyperParams", "LatentField", "ObservationField", "PhiSpec",
    "add_noise_gaussian", "add_noise_poisson_gaussian", "contrast_enhance", "denoise",
    "denoise_poisson_gaussian", "edge_maps", "estimate_basic", "inpaint", "load_image", "psnr",
    "refine_augmented", "save_image",
]
