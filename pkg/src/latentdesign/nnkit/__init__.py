"""Differentiable operators, optimiser, gradient checks and checkpoint I/O over torch."""

import random

import numpy as np
import torch

from .checkpoint import FormatError, dumps, load_checkpoint, load_into, loads, save_checkpoint
from .gradcheck import check_gradients, numerical_gradient, relative_error
from .layers import (
    Conv3d,
    ResBlock3d,
    ShapeMismatch,
    UpConv3d,
    concat_channels,
    group_norm,
    residual_add,
    timestep_embedding,
)
from .optim import NonFiniteGradient, OptimizerConfig, ParamStore, adam_step, clip_grad_norm


def set_deterministic(seed: int, deterministic: bool = True) -> None:
    """Seed every RNG and pin torch to reproducible kernels."""
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)
    if deterministic:
        torch.use_deterministic_algorithms(True)
        torch.set_num_threads(1)


__all__ = [
    "Conv3d",
    "FormatError",
    "NonFiniteGradient",
    "OptimizerConfig",
    "ParamStore",
    "ResBlock3d",
    "ShapeMismatch",
    "UpConv3d",
    "adam_step",
    "check_gradients",
    "clip_grad_norm",
    "concat_channels",
    "dumps",
    "group_norm",
    "load_checkpoint",
    "load_into",
    "loads",
    "numerical_gradient",
    "relative_error",
    "residual_add",
    "save_checkpoint",
    "set_deterministic",
    "timestep_embedding",
]
