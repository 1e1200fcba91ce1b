"""Diffusion refinement of decoded prediction windows."""
from .refine import RefineResult, refine
from .schedule import NoiseSchedule, forward_diffuse
from .unet import DenoiseUNet, RefinerConfig

__all__ = [
    "DenoiseUNet",
    "NoiseSchedule",
    "RefineResult",
    "RefinerConfig",
    "forward_diffuse",
    "refine",
]
