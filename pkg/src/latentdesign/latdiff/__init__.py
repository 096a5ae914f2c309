"""Conditional denoising diffusion over design latents, with partial-noise translation."""

from .denoiser import Denoiser, DenoiserArch
from .diffusion import (
    InvalidSchedule,
    NoiseSchedule,
    ddpm_loss,
    generate,
    make_schedule,
    p_sample_step,
    q_sample,
    scaled_linear_schedule,
    start_step,
    translate,
)
from .train import ConditionalLDM, EncodedSet, LdmTrainConfig, LdmTrainResult, encode_dataset, load_ldm, train_ldm

__all__ = [
    "ConditionalLDM",
    "Denoiser",
    "DenoiserArch",
    "EncodedSet",
    "InvalidSchedule",
    "LdmTrainConfig",
    "LdmTrainResult",
    "NoiseSchedule",
    "ddpm_loss",
    "encode_dataset",
    "generate",
    "load_ldm",
    "make_schedule",
    "p_sample_step",
    "q_sample",
    "scaled_linear_schedule",
    "start_step",
    "train_ldm",
    "translate",
]
