"""Timestep-conditioned 3D noise predictor on concatenated (condition, noisy design) latents."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F
from torch import nn

from ..nnkit import Conv3d, ResBlock3d, ShapeMismatch, concat_channels, group_norm, timestep_embedding


@dataclass(frozen=True)
class DenoiserArch:
    latent_channels: int = 4
    channels: int = 64
    n_blocks: int = 3
    time_dim: int = 64

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class Denoiser(nn.Module):
    def __init__(self, arch: DenoiserArch = DenoiserArch()):
        super().__init__()
        self.arch = arch
        c, emb = arch.channels, 4 * arch.time_dim
        self.time_mlp = nn.Sequential(nn.Linear(arch.time_dim, emb), nn.SiLU(), nn.Linear(emb, emb))
        self.conv_in = Conv3d(2 * arch.latent_channels, c)
        self.blocks = nn.ModuleList(ResBlock3d(c, c, emb_dim=emb) for _ in range(arch.n_blocks))
        self.norm_out = group_norm(c)
        self.conv_out = Conv3d(c, arch.latent_channels)

    def forward(self, x_t: torch.Tensor, cond: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        if x_t.shape != cond.shape:
            raise ShapeMismatch("denoiser input", cond.shape, x_t.shape)
        t = torch.as_tensor(t).reshape(-1).expand(x_t.shape[0])
        emb = self.time_mlp(timestep_embedding(t, self.arch.time_dim).to(x_t.dtype))
        h = self.conv_in(concat_channels(cond, x_t))
        for block in self.blocks:
            h = block(h, emb)
        return self.conv_out(F.silu(self.norm_out(h)))
