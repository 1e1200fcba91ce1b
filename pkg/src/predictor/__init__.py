"""Stochastic transformer prediction over latent-code sequences."""
from .conditioning import Conditioning, ConditioningBundle
from .model import (
    PredictorConfig,
    RolloutMode,
    VariationalPredictor,
    elbo_loss,
    extrapolate,
    predict_step,
    rollout,
)
from .patches import PatchSpec, patchify, positional_encoding, unpatchify
from .schedule import AnnealSchedule

__all__ = [
    "AnnealSchedule",
    "Conditioning",
    "ConditioningBundle",
    "PatchSpec",
    "PredictorConfig",
    "RolloutMode",
    "VariationalPredictor",
    "elbo_loss",
    "extrapolate",
    "patchify",
    "positional_encoding",
    "predict_step",
    "rollout",
    "unpatchify",
]
