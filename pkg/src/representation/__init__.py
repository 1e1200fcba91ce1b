"""VAE-GAN latent representation of single occupancy grids."""
from .model import GaussianPosterior, VaeGan, VaeGanConfig, decode, encode, sample_posterior

__all__ = [
    "GaussianPosterior",
    "VaeGan",
    "VaeGanConfig",
    "decode",
    "encode",
    "sample_posterior",
]
