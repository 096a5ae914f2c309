"""3D convolutional building blocks shared by the VAE and the denoiser.

Everything here is fully convolutional over the spatial axes, so a set of
weights trained at one voxel resolution applies unchanged at another.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

NORM_GROUPS = 8


class ShapeMismatch(ValueError):
    def __init__(self, op: str, *shapes):
        shown = ", ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {shown}")
        self.op = op
        self.shapes = shapes


def _expect_channels(op: str, x: torch.Tensor, channels: int):
    if x.dim() != 5 or x.shape[1] != channels:
        raise ShapeMismatch(op, x.shape, (None, channels, None, None, None))


class Conv3d(nn.Conv3d):
    """3D convolution with 'same' padding; stride 2 halves every spatial axis."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 3, stride: int = 1):
        if stride not in (1, 2):
            raise ValueError("stride must be 1 or 2")
        super().__init__(in_channels, out_channels, kernel_size, stride=stride, padding=kernel_size // 2)

    def forward(self, x):
        _expect_channels("conv3d", x, self.in_channels)
        if self.stride[0] == 2 and any(s % 2 for s in x.shape[2:]):
            raise ShapeMismatch("conv3d(stride=2)", x.shape)
        return super().forward(x)


class UpConv3d(nn.Module):
    """Nearest-neighbour x2 upsampling followed by a 3^3 convolution."""

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.conv = Conv3d(in_channels, out_channels, 3)

    def forward(self, x):
        _expect_channels("upsample_conv3d", x, self.conv.in_channels)
        return self.conv(F.interpolate(x, scale_factor=2, mode="nearest"))


def group_norm(channels: int) -> nn.GroupNorm:
    if channels % NORM_GROUPS:
        raise ShapeMismatch("group_norm", (None, channels))
    return nn.GroupNorm(NORM_GROUPS, channels)


def concat_channels(*tensors: torch.Tensor) -> torch.Tensor:
    ref = tensors[0]
    for t in tensors[1:]:
        if t.dim() != ref.dim() or t.shape[0] != ref.shape[0] or t.shape[2:] != ref.shape[2:]:
            raise ShapeMismatch("concat", *(x.shape for x in tensors))
    return torch.cat(tensors, dim=1)


def residual_add(x: torch.Tensor, h: torch.Tensor) -> torch.Tensor:
    if x.shape != h.shape:
        raise ShapeMismatch("residual_add", x.shape, h.shape)
    return x + h


def timestep_embedding(t: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    """Sinusoidal embedding of integer timesteps, shape (batch, dim)."""
    t = torch.as_tensor(t).reshape(-1)
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float64) / half)
    args = t.to(torch.float64)[:, None] * freqs[None]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb.to(torch.get_default_dtype())


class ResBlock3d(nn.Module):
    """GN-SiLU-conv twice with a skip; optional additive time conditioning."""

    def __init__(self, in_channels: int, out_channels: int, emb_dim: int | None = None):
        super().__init__()
        self.norm1 = group_norm(in_channels)
        self.conv1 = Conv3d(in_channels, out_channels)
        self.emb = nn.Linear(emb_dim, out_channels) if emb_dim else None
        self.norm2 = group_norm(out_channels)
        self.conv2 = Conv3d(out_channels, out_channels)
        self.skip = Conv3d(in_channels, out_channels, 1) if in_channels != out_channels else nn.Identity()

    def forward(self, x, emb=None):
        h = self.conv1(F.silu(self.norm1(x)))
        if self.emb is not None:
            h = h + self.emb(F.silu(emb))[:, :, None, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return residual_add(self.skip(x), h)
