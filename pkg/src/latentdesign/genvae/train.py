"""VAE objective, training loop and reconstruction metrics."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch

from ..nnkit import FormatError, OptimizerConfig, ParamStore, adam_step, load_checkpoint, load_into, save_checkpoint, set_deterministic
from .model import MultiHeadVAE, VaeArch, as_batch

CHECKPOINT_KIND = "multihead_vae"
REPLAY_POOL = 4096


@dataclass
class VaeLossReport:
    recon: torch.Tensor
    kl: torch.Tensor
    vq_codebook: torch.Tensor
    vq_commit: torch.Tensor
    total: torch.Tensor

    def as_floats(self) -> dict[str, float]:
        return {f.name: float(getattr(self, f.name).detach()) for f in fields(self)}


def kl_divergence(mu: torch.Tensor, logvar: torch.Tensor) -> torch.Tensor:
    """Closed-form KL to the standard normal, summed over latent elements and averaged over the batch."""
    per_element = 0.5 * (mu**2 + torch.expm1(logvar) - logvar)
    return per_element.flatten(1).sum(dim=1).mean()


def vae_loss(
    model: MultiHeadVAE,
    condition: torch.Tensor,
    density: torch.Tensor,
    beta_kl: float | None = None,
    eps: torch.Tensor | None = None,
    generator: torch.Generator | None = None,
    return_outputs: bool = False,
):
    """L1 reconstruction + beta_kl * KL + VQ codebook + VQ commitment.

    ``condition`` and ``density`` are (B, 1, nx, ny, nz). ``eps`` fixes the
    reparameterisation noise; otherwise it is drawn from ``generator``.
    """
    beta_kl = model.arch.beta_kl if beta_kl is None else beta_kl
    z_q, idx, cb, cm, z_e = model.encode_condition(condition)
    post = model.encode_design(density)
    z = post.sample(eps=eps, generator=generator)
    recon_field = model.decode(z_q, z)
    recon = (recon_field - density).abs().mean()
    kl = kl_divergence(post.mu, post.logvar)
    total = recon + beta_kl * kl + cb + cm
    report = VaeLossReport(recon, kl, cb, cm, total)
    if return_outputs:
        return report, {"reconstruction": recon_field, "indices": idx, "z_e": z_e, "posterior": post}
    return report


@dataclass(frozen=True)
class VaeTrainConfig:
    epochs: int = 10
    batch_size: int = 8
    lr: float = 1e-4
    grad_clip: float | None = 1.0
    seed: int = 0
    deterministic: bool = True
    dead_code_patience: int = 2
    arch: VaeArch = field(default_factory=VaeArch)
    max_seconds: float | None = None

    def to_dict(self):
        d = asdict(self)
        d["arch"] = self.arch.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "arch" in d:
            d["arch"] = VaeArch.from_dict(d["arch"])
        return cls(**d)


@dataclass
class VaeTrainResult:
    model: MultiHeadVAE
    store: ParamStore
    log: list[dict]
    epoch_seconds: list[float]


def _batches(n: int, batch_size: int, gen: torch.Generator):
    order = torch.randperm(n, generator=gen).tolist()
    for s in range(0, n, batch_size):
        yield order[s : s + batch_size]


@torch.no_grad()
def reconstruction_error(model: MultiHeadVAE, conditions, densities, batch_size: int = 16) -> float:
    """Mean absolute error of decode(z_q, mu) against the densities."""
    was_training = model.training
    model.eval()
    total, count = 0.0, 0
    for s in range(0, len(conditions), batch_size):
        c = as_batch(conditions[s : s + batch_size])
        d = as_batch(densities[s : s + batch_size])
        z_q = model.encode_condition(c)[0]
        out = model.decode(z_q, model.encode_design(d).mu)
        total += float((out - d).abs().sum())
        count += d.numel()
    model.train(was_training)
    return total / max(count, 1)


def train_vae(
    train_set,
    config: VaeTrainConfig = VaeTrainConfig(),
    model: MultiHeadVAE | None = None,
    store: ParamStore | None = None,
    val_set=None,
    log_path=None,
    checkpoint_path=None,
    log_prefix: dict | None = None,
) -> VaeTrainResult:
    """Adam over ``vae_loss`` for ``config.epochs`` epochs.

    ``train_set``/``val_set`` expose ``conditions`` and ``densities`` arrays of
    shape (N, nx, ny, nz). Passing an existing ``model``/``store`` continues
    training (multigrid fine-tuning), keeping Adam moments.
    """
    set_deterministic(config.seed, config.deterministic)
    if model is None:
        model = MultiHeadVAE(config.arch)
    if store is None:
        store = ParamStore.from_module(model)
    store.meta.update({"kind": CHECKPOINT_KIND, "arch": model.arch.to_dict()})
    opt = OptimizerConfig(lr=config.lr, grad_clip=config.grad_clip)
    gen = torch.Generator().manual_seed(config.seed)
    conditions = np.asarray(train_set.conditions, dtype=np.float32)
    densities = np.asarray(train_set.densities, dtype=np.float32)
    n = len(conditions)
    if n == 0:
        raise ValueError("training set is empty")

    log: list[dict] = []
    seconds: list[float] = []
    start = time.perf_counter()
    model.train()
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        sums: dict[str, float] = {}
        pool: list[torch.Tensor] = []
        steps = 0
        for idx in _batches(n, config.batch_size, gen):
            c = as_batch(conditions[idx])
            d = as_batch(densities[idx])
            report, outs = vae_loss(model, c, d, beta_kl=config.arch.beta_kl, generator=gen, return_outputs=True)
            for p in store.params.values():
                p.grad = None
            report.total.backward()
            adam_step(store, store.grads(), opt)
            for k, v in report.as_floats().items():
                sums[k] = sums.get(k, 0.0) + v
            steps += 1
            pool.append(outs["z_e"].detach().movedim(1, -1).reshape(-1, model.arch.latent_channels))
        replay = torch.cat(pool)[-REPLAY_POOL:]
        usage = model.quantizer.end_epoch(replay, gen, patience=config.dead_code_patience)
        seconds.append(time.perf_counter() - t0)
        entry = dict(log_prefix or {})
        entry.update({"epoch": epoch + 1, **{k: v / steps for k, v in sums.items()}, "codebook_usage": usage})
        if val_set is not None and len(val_set.conditions):
            entry["val_recon"] = reconstruction_error(model, val_set.conditions, val_set.densities)
        log.append(entry)
        if config.max_seconds is not None and time.perf_counter() - start >= config.max_seconds:
            break

    store.meta["epochs"] = store.meta.get("epochs", 0) + len(log)
    store.meta["resolution"] = list(conditions.shape[1:])
    if log_path is not None:
        write_log(log_path, log)
    if checkpoint_path is not None:
        save_checkpoint(store, checkpoint_path)
    return VaeTrainResult(model, store, log, seconds)


def write_log(path, entries: list[dict]) -> None:
    """Training logs are JSON lists of per-epoch records."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(entries, indent=1, sort_keys=True) + "\n")


def load_vae(path) -> tuple[MultiHeadVAE, ParamStore]:
    """Rebuild the VAE described by a checkpoint's metadata and load its weights."""
    store = load_checkpoint(path)
    if store.meta.get("kind") != CHECKPOINT_KIND:
        raise FormatError(f"{path} is not a VAE checkpoint (kind={store.meta.get('kind')!r})", "kind")
    model = MultiHeadVAE(VaeArch.from_dict(store.meta["arch"]))
    load_into(model, store)
    store.params = type(store.params)((n, p) for n, p in model.named_parameters())
    return model, store
