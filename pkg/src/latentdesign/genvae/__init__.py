"""Multi-headed VAE over (strain-energy condition, density design) pairs."""

from .model import Decoder, Encoder, GaussianPosterior, MultiHeadVAE, VaeArch, VectorQuantizer, as_batch
from .train import (
    VaeLossReport,
    VaeTrainConfig,
    VaeTrainResult,
    kl_divergence,
    load_vae,
    reconstruction_error,
    train_vae,
    vae_loss,
)

__all__ = [
    "Decoder",
    "Encoder",
    "GaussianPosterior",
    "MultiHeadVAE",
    "VaeArch",
    "VaeLossReport",
    "VaeTrainConfig",
    "VaeTrainResult",
    "VectorQuantizer",
    "as_batch",
    "kl_divergence",
    "load_vae",
    "reconstruction_error",
    "train_vae",
    "vae_loss",
]
