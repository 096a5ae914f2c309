"""Named parameter store and a bias-corrected Adam step."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import torch
from torch import nn


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip: float | None = 1.0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")


class ParamStore:
    """Ordered named tensors plus per-parameter Adam moments.

    When built from a module the tensors are the module's own parameters,
    so updates are visible to the model immediately.
    """

    def __init__(self, params: "OrderedDict[str, torch.Tensor] | None" = None, meta: dict | None = None):
        self.params: OrderedDict[str, torch.Tensor] = OrderedDict(params or {})
        self.exp_avg: dict[str, torch.Tensor] = {}
        self.exp_avg_sq: dict[str, torch.Tensor] = {}
        self.step = 0
        self.meta = dict(meta or {})

    @classmethod
    def from_module(cls, module: nn.Module, prefix: str = "", meta: dict | None = None) -> "ParamStore":
        return cls(OrderedDict((prefix + n, p) for n, p in module.named_parameters()), meta)

    def __contains__(self, name):
        return name in self.params

    def __getitem__(self, name):
        return self.params[name]

    def __len__(self):
        return len(self.params)

    def names(self):
        return list(self.params)

    def grads(self) -> dict[str, torch.Tensor]:
        return {n: p.grad for n, p in self.params.items() if p.grad is not None}


def clip_grad_norm(grads: dict[str, torch.Tensor], max_norm: float) -> float:
    total = torch.sqrt(sum((g.detach().double() ** 2).sum() for g in grads.values()))
    total = float(total)
    if max_norm is not None and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for g in grads.values():
            g.mul_(scale)
    return total


@torch.no_grad()
def adam_step(store: ParamStore, grads: dict[str, torch.Tensor], cfg: OptimizerConfig) -> ParamStore:
    """One Adam update in place; returns the store for chaining.

    Parameters without a gradient entry are left untouched (their moments
    do not decay either).
    """
    for name, g in grads.items():
        if name not in store.params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if g.shape != store.params[name].shape:
            raise ValueError(f"gradient shape {tuple(g.shape)} != parameter {name!r} shape {tuple(store.params[name].shape)}")
        if not torch.isfinite(g).all():
            raise NonFiniteGradient(f"non-finite gradient for {name!r}")
    if cfg.grad_clip is not None:
        clip_grad_norm(grads, cfg.grad_clip)
    store.step += 1
    bc1 = 1.0 - cfg.beta1**store.step
    bc2 = 1.0 - cfg.beta2**store.step
    for name, g in grads.items():
        p = store.params[name]
        m = store.exp_avg.get(name)
        if m is None:
            m = store.exp_avg[name] = torch.zeros_like(p)
            store.exp_avg_sq[name] = torch.zeros_like(p)
        v = store.exp_avg_sq[name]
        m.mul_(cfg.beta1).add_(g, alpha=1.0 - cfg.beta1)
        v.mul_(cfg.beta2).addcmul_(g, g, value=1.0 - cfg.beta2)
        denom = (v / bc2).sqrt_().add_(cfg.eps)
        p.addcdiv_(m, denom, value=-cfg.lr / bc1)
    return store
