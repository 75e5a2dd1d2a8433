"""Contrastive likelihood-to-evidence ratio estimation with a learned latent emulator."""

from .embednet import (
    Network,
    NetworkSpec,
    RatioModel,
    build_model,
    emulate,
    encode,
    load_checkpoint,
    save_checkpoint,
)
from .estimator import RatioEstimator
from .inference import (
    PosteriorEstimate,
    build_posterior,
    estimate_normalizer,
    posterior_density,
    posterior_density_altprior,
    ratio_log,
    sample_posterior,
)
from .losses import LossConfig, loss_intra, loss_phi_y, loss_sym, loss_y_phi
from .training import TrainConfig, lr_schedule, train, validation_score

__all__ = [
    "LossConfig",
    "Network",
    "NetworkSpec",
    "PosteriorEstimate",
    "RatioEstimator",
    "RatioModel",
    "TrainConfig",
    "build_model",
    "build_posterior",
    "emulate",
    "encode",
    "estimate_normalizer",
    "load_checkpoint",
    "loss_intra",
    "loss_phi_y",
    "loss_sym",
    "loss_y_phi",
    "lr_schedule",
    "posterior_density",
    "posterior_density_altprior",
    "ratio_log",
    "sample_posterior",
    "save_checkpoint",
    "train",
    "validation_score",
]
