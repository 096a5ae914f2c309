"""Training the latent denoiser against a frozen VAE, and a sampling bundle around it."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from ..genvae import MultiHeadVAE, as_batch
from ..genvae.train import write_log
from ..nnkit import (
    FormatError,
    OptimizerConfig,
    ParamStore,
    adam_step,
    load_checkpoint,
    load_into,
    save_checkpoint,
    set_deterministic,
)
from .denoiser import Denoiser, DenoiserArch
from .diffusion import NoiseSchedule, ddpm_loss, generate, scaled_linear_schedule, start_step, translate

CHECKPOINT_KIND = "latent_ddpm"


@dataclass(frozen=True)
class LdmTrainConfig:
    epochs: int = 200
    batch_size: int = 16
    lr: float = 1e-4
    grad_clip: float | None = 1.0
    seed: int = 0
    deterministic: bool = True
    T: int = 200
    arch: DenoiserArch = field(default_factory=DenoiserArch)
    max_seconds: float | None = None

    def to_dict(self):
        d = asdict(self)
        d["arch"] = self.arch.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "arch" in d:
            d["arch"] = DenoiserArch.from_dict(d["arch"])
        return cls(**d)


@dataclass
class EncodedSet:
    cond: torch.Tensor
    mu: torch.Tensor
    logvar: torch.Tensor


@torch.no_grad()
def encode_dataset(vae: MultiHeadVAE, conditions, densities, batch_size: int = 16) -> EncodedSet:
    """Quantised condition latents and design posteriors for every sample."""
    vae.eval()
    cs, mus, lvs = [], [], []
    for s in range(0, len(conditions), batch_size):
        cs.append(vae.encode_condition(as_batch(conditions[s : s + batch_size]))[0])
        post = vae.encode_design(as_batch(densities[s : s + batch_size]))
        mus.append(post.mu)
        lvs.append(post.logvar)
    return EncodedSet(torch.cat(cs), torch.cat(mus), torch.cat(lvs))


class ConditionalLDM:
    """Denoiser + schedule + latent scale; works in VAE latent units.

    The diffusion runs on design latents multiplied by ``latent_scale`` so
    that the data the denoiser sees has roughly unit variance.
    """

    def __init__(self, denoiser: Denoiser, schedule: NoiseSchedule, latent_scale: float = 1.0):
        self.denoiser = denoiser
        self.schedule = schedule
        self.latent_scale = float(latent_scale)

    def sample(self, cond: torch.Tensor, n: int, seed: int, snapshots: bool = False):
        self.denoiser.eval()
        out = generate(self.denoiser, cond, n, seed, self.schedule, snapshots=snapshots)
        if snapshots:
            x, traj = out
            return x / self.latent_scale, [s / self.latent_scale for s in traj]
        return out / self.latent_scale

    def translate(self, latent: torch.Tensor, cond: torch.Tensor, strength: float, seed: int) -> torch.Tensor:
        if start_step(strength, self.schedule.T) == 0:
            return latent.clone()
        self.denoiser.eval()
        x = translate(self.denoiser, latent * self.latent_scale, cond, strength, seed, self.schedule)
        return x / self.latent_scale


@dataclass
class LdmTrainResult:
    ldm: ConditionalLDM
    store: ParamStore
    log: list[dict]
    epoch_seconds: list[float]


def train_ldm(
    train_set,
    vae: MultiHeadVAE,
    config: LdmTrainConfig = LdmTrainConfig(),
    log_path=None,
    checkpoint_path=None,
) -> LdmTrainResult:
    """Fit the noise predictor on latents of ``train_set`` encoded by the frozen ``vae``.

    A fresh design latent is drawn from each sample's posterior at every
    step; condition latents are the quantised ones, used as is.
    """
    set_deterministic(config.seed, config.deterministic)
    for p in vae.parameters():
        p.requires_grad_(False)
    enc = encode_dataset(vae, np.asarray(train_set.conditions), np.asarray(train_set.densities))
    n = enc.mu.shape[0]
    if n == 0:
        raise ValueError("training set is empty")
    spread = float(torch.sqrt((enc.mu**2).mean() + torch.exp(enc.logvar).mean()))
    latent_scale = 1.0 / max(spread, 1e-8)

    schedule = scaled_linear_schedule(config.T)
    denoiser = Denoiser(config.arch)
    store = ParamStore.from_module(
        denoiser,
        meta={
            "kind": CHECKPOINT_KIND,
            "arch": config.arch.to_dict(),
            "schedule": schedule.to_dict(),
            "latent_scale": latent_scale,
        },
    )
    opt = OptimizerConfig(lr=config.lr, grad_clip=config.grad_clip)
    gen = torch.Generator().manual_seed(config.seed)
    log, seconds = [], []
    start = time.perf_counter()
    denoiser.train()
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        total, steps = 0.0, 0
        order = torch.randperm(n, generator=gen)
        for s in range(0, n, config.batch_size):
            idx = order[s : s + config.batch_size]
            eps = torch.randn(enc.mu[idx].shape, generator=gen)
            x0 = (enc.mu[idx] + torch.exp(0.5 * enc.logvar[idx]) * eps) * latent_scale
            loss = ddpm_loss(denoiser, x0, enc.cond[idx], schedule, generator=gen)
            for p in store.params.values():
                p.grad = None
            loss.backward()
            adam_step(store, store.grads(), opt)
            total += float(loss.detach())
            steps += 1
        seconds.append(time.perf_counter() - t0)
        log.append({"epoch": epoch + 1, "loss": total / steps})
        if config.max_seconds is not None and time.perf_counter() - start >= config.max_seconds:
            break
    store.meta["epochs"] = len(log)
    if log_path is not None:
        write_log(log_path, log)
    if checkpoint_path is not None:
        save_checkpoint(store, checkpoint_path)
    return LdmTrainResult(ConditionalLDM(denoiser, schedule, latent_scale), store, log, seconds)


def load_ldm(path) -> ConditionalLDM:
    store = load_checkpoint(path)
    if store.meta.get("kind") != CHECKPOINT_KIND:
        raise FormatError(f"{path} is not a diffusion checkpoint (kind={store.meta.get('kind')!r})", "kind")
    denoiser = Denoiser(DenoiserArch.from_dict(store.meta["arch"]))
    load_into(denoiser, store)
    return ConditionalLDM(denoiser, NoiseSchedule.from_dict(store.meta["schedule"]), store.meta["latent_scale"])
