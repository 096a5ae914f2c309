"""Multi-headed VAE: VQ condition encoder, Gaussian design encoder, shared decoder."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F
from torch import nn

from ..nnkit import Conv3d, ResBlock3d, ShapeMismatch, UpConv3d, concat_channels, group_norm

LOGVAR_RANGE = (-30.0, 20.0)


@dataclass(frozen=True)
class VaeArch:
    channels: tuple[int, int, int] = (16, 32, 64)
    latent_channels: int = 4
    codebook_size: int = 512
    beta_kl: float = 1e-4
    commitment: float = 0.25

    def to_dict(self):
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["channels"] = tuple(d["channels"])
        return cls(**d)


class Encoder(nn.Module):
    """Two stride-2 stages: spatial size / 4."""

    def __init__(self, in_channels: int, channels, out_channels: int):
        super().__init__()
        c0, c1, c2 = channels
        self.conv_in = Conv3d(in_channels, c0)
        self.res0 = ResBlock3d(c0, c0)
        self.down1 = Conv3d(c0, c1, stride=2)
        self.res1 = ResBlock3d(c1, c1)
        self.down2 = Conv3d(c1, c2, stride=2)
        self.res2 = ResBlock3d(c2, c2)
        self.norm_out = group_norm(c2)
        self.conv_out = Conv3d(c2, out_channels)

    def forward(self, x):
        h = self.res0(self.conv_in(x))
        h = self.res1(self.down1(h))
        h = self.res2(self.down2(h))
        return self.conv_out(F.silu(self.norm_out(h)))


class Decoder(nn.Module):
    """Mirror of the encoder with nearest-upsample convolutions and a sigmoid head."""

    def __init__(self, in_channels: int, channels):
        super().__init__()
        c0, c1, c2 = channels
        self.conv_in = Conv3d(in_channels, c2)
        self.res2 = ResBlock3d(c2, c2)
        self.up1 = UpConv3d(c2, c1)
        self.res1 = ResBlock3d(c1, c1)
        self.up0 = UpConv3d(c1, c0)
        self.res0 = ResBlock3d(c0, c0)
        self.norm_out = group_norm(c0)
        self.conv_out = Conv3d(c0, 1)

    def forward(self, z):
        h = self.res2(self.conv_in(z))
        h = self.res1(self.up1(h))
        h = self.res0(self.up0(h))
        return torch.sigmoid(self.conv_out(F.silu(self.norm_out(h))))


class GaussianPosterior:
    """Diagonal Gaussian q(z|x) with reparameterised sampling."""

    def __init__(self, mu: torch.Tensor, logvar: torch.Tensor):
        self.mu = mu
        self.logvar = logvar.clamp(*LOGVAR_RANGE)

    @property
    def std(self) -> torch.Tensor:
        return torch.exp(0.5 * self.logvar)

    def sample(self, eps: torch.Tensor | None = None, generator: torch.Generator | None = None) -> torch.Tensor:
        if eps is None:
            eps = torch.randn(self.mu.shape, generator=generator, dtype=self.mu.dtype)
        return self.mu + self.std * eps

    def mode(self) -> torch.Tensor:
        return self.mu

    def kl(self) -> torch.Tensor:
        """KL(q || N(0, I)) summed over latent elements, one value per batch item."""
        per_element = 0.5 * (self.mu**2 + torch.expm1(self.logvar) - self.logvar)
        return per_element.flatten(1).sum(dim=1)


class VectorQuantizer(nn.Module):
    """Nearest-codebook quantisation with a straight-through gradient."""

    def __init__(self, num_codes: int, dim: int, commitment: float = 0.25):
        super().__init__()
        if num_codes < 2:
            raise ValueError("codebook needs at least 2 entries")
        self.dim = dim
        self.commitment = commitment
        self.codebook = nn.Parameter(torch.empty(num_codes, dim).uniform_(-1.0 / num_codes, 1.0 / num_codes))
        self.register_buffer("usage", torch.zeros(num_codes, dtype=torch.int64), persistent=False)
        self.register_buffer("idle_epochs", torch.zeros(num_codes, dtype=torch.int64), persistent=False)

    @property
    def num_codes(self) -> int:
        return self.codebook.shape[0]

    def nearest(self, flat: torch.Tensor) -> torch.Tensor:
        """Index of the closest code (Euclidean) for each row of ``flat``."""
        d = torch.cdist(flat, self.codebook.detach().to(flat.dtype), compute_mode="donot_use_mm_for_euclid_dist")
        return d.argmin(dim=1)

    def forward(self, z_e: torch.Tensor):
        """Returns (z_q with straight-through gradient, indices, codebook loss, commitment loss)."""
        if z_e.dim() != 5 or z_e.shape[1] != self.dim:
            raise ShapeMismatch("vector_quantize", z_e.shape, (None, self.dim, None, None, None))
        flat = z_e.movedim(1, -1).reshape(-1, self.dim)
        idx = self.nearest(flat.detach())
        if self.training:
            self.usage += torch.bincount(idx, minlength=self.num_codes)
        zq_flat = self.codebook[idx]
        z_q = zq_flat.reshape(*z_e.shape[:1], *z_e.shape[2:], self.dim).movedim(-1, 1)
        codebook_loss = F.mse_loss(z_q, z_e.detach())
        commit_loss = self.commitment * F.mse_loss(z_e, z_q.detach())
        z_st = z_e + (z_q - z_e).detach()
        return z_st, idx.reshape(z_e.shape[0], *z_e.shape[2:]), codebook_loss, commit_loss

    @torch.no_grad()
    def end_epoch(self, encoder_outputs: torch.Tensor, generator: torch.Generator, patience: int = 2) -> int:
        """Re-seed codes idle for ``patience`` epochs from random encoder outputs.

        ``encoder_outputs`` is an (N, dim) pool of recent pre-quantisation
        vectors. Returns the number of codes used this epoch.
        """
        used = self.usage > 0
        self.idle_epochs[used] = 0
        self.idle_epochs[~used] += 1
        dead = torch.nonzero(self.idle_epochs >= patience).flatten()
        if dead.numel() and encoder_outputs.numel():
            pick = torch.randint(encoder_outputs.shape[0], (dead.numel(),), generator=generator)
            self.codebook[dead] = encoder_outputs[pick].to(self.codebook.dtype)
            self.idle_epochs[dead] = 0
        n_used = int(used.sum())
        self.usage.zero_()
        return n_used


class MultiHeadVAE(nn.Module):
    def __init__(self, arch: VaeArch = VaeArch()):
        super().__init__()
        self.arch = arch
        c = arch.latent_channels
        self.cond_encoder = Encoder(1, arch.channels, c)
        self.quantizer = VectorQuantizer(arch.codebook_size, c, arch.commitment)
        self.design_encoder = Encoder(1, arch.channels, 2 * c)
        self.decoder = Decoder(2 * c, arch.channels)

    def encode_condition(self, field: torch.Tensor):
        """(z_q, code indices, codebook loss, commitment loss, pre-quantisation z_e)."""
        z_e = self.cond_encoder(field)
        z_q, idx, cb, cm = self.quantizer(z_e)
        return z_q, idx, cb, cm, z_e

    def encode_design(self, density: torch.Tensor) -> GaussianPosterior:
        mu, logvar = self.design_encoder(density).chunk(2, dim=1)
        return GaussianPosterior(mu, logvar)

    def decode(self, cond_latent: torch.Tensor, design_latent: torch.Tensor) -> torch.Tensor:
        if cond_latent.shape[1] != self.arch.latent_channels or design_latent.shape[1] != self.arch.latent_channels:
            raise ShapeMismatch("decode", cond_latent.shape, design_latent.shape)
        return self.decoder(concat_channels(cond_latent, design_latent))


def as_batch(fields) -> torch.Tensor:
    """(B, nx, ny, nz) array-like -> float tensor (B, 1, nx, ny, nz)."""
    t = torch.as_tensor(fields, dtype=torch.get_default_dtype())
    if t.dim() == 3:
        t = t[None]
    return t[:, None]
