"""Noise schedule, forward noising, the denoising objective and ancestral sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from ..nnkit import ShapeMismatch


class InvalidSchedule(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Arrays are indexed by step ``t`` in 1..T via :meth:`at` (position t-1)."""

    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    @property
    def T(self) -> int:
        return len(self.beta)

    def at(self, t: int) -> tuple[float, float, float]:
        if not 1 <= t <= self.T:
            raise ValueError(f"step {t} outside [1, {self.T}]")
        return float(self.beta[t - 1]), float(self.alpha[t - 1]), float(self.alpha_bar[t - 1])

    def to_dict(self) -> dict:
        return {"T": self.T, "beta_start": float(self.beta[0]), "beta_end": float(self.beta[-1])}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSchedule":
        return make_schedule(d["T"], d["beta_start"], d["beta_end"])


def make_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Linear betas from ``beta_start`` to ``beta_end``; alpha_bar by cumulative product."""
    if int(T) != T or T < 1:
        raise InvalidSchedule(f"T must be a positive integer, got {T}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise InvalidSchedule(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    beta = np.linspace(beta_start, beta_end, int(T), dtype=np.float64)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    for a in (beta, alpha, alpha_bar):
        a.setflags(write=False)
    return NoiseSchedule(beta, alpha, alpha_bar)


def scaled_linear_schedule(T: int = 200) -> NoiseSchedule:
    """Linear schedule whose endpoints are the 1000-step constants scaled by 1000/T.

    Keeps the total noise (and so alpha_bar_T close to zero) when T is
    shortened; plain 1e-4..0.02 over 200 steps stops at alpha_bar ~ 0.13.
    """
    k = 1000.0 / T
    return make_schedule(T, 1e-4 * k, min(0.02 * k, 0.999))


def _coef(values, t, like: torch.Tensor) -> torch.Tensor:
    """Gather per-sample coefficients for (B,) or scalar ``t`` and broadcast over ``like``."""
    t = torch.as_tensor(t)
    c = torch.tensor(np.asarray(values), dtype=torch.float64)[t.long() - 1].to(like.dtype)
    if c.dim() == 0:
        return c
    return c.reshape(-1, *([1] * (like.dim() - 1)))


def q_sample(x0: torch.Tensor, t, z: torch.Tensor, schedule: NoiseSchedule) -> torch.Tensor:
    """sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) z; ``t`` is an int or a (B,) tensor."""
    if z.shape != x0.shape:
        raise ShapeMismatch("q_sample", x0.shape, z.shape)
    t_arr = torch.as_tensor(t)
    if bool((t_arr < 1).any()) or bool((t_arr > schedule.T).any()):
        raise ValueError(f"step outside [1, {schedule.T}]")
    ab = _coef(schedule.alpha_bar, t, x0)
    return ab.sqrt() * x0 + (1.0 - ab).sqrt() * z


def ddpm_loss(
    denoiser,
    x0: torch.Tensor,
    cond: torch.Tensor,
    schedule: NoiseSchedule,
    generator: torch.Generator | None = None,
    t: torch.Tensor | None = None,
    z: torch.Tensor | None = None,
) -> torch.Tensor:
    """Per-element mean squared error between the injected noise and its prediction.

    ``t`` (B,) and ``z`` are drawn (uniform over 1..T, standard normal) unless given.
    """
    b = x0.shape[0]
    if t is None:
        t = torch.randint(1, schedule.T + 1, (b,), generator=generator)
    if z is None:
        z = torch.randn(x0.shape, generator=generator, dtype=x0.dtype)
    x_t = q_sample(x0, t, z, schedule)
    return ((z - denoiser(x_t, cond, t)) ** 2).mean()


def p_sample_step(
    denoiser,
    x_t: torch.Tensor,
    cond: torch.Tensor,
    t: int,
    schedule: NoiseSchedule,
    generator: torch.Generator | None = None,
    noise: torch.Tensor | None = None,
) -> torch.Tensor:
    """One ancestral step x_t -> x_{t-1} with reverse variance beta_t (no noise at t = 1)."""
    beta, alpha, alpha_bar = schedule.at(int(t))
    tt = torch.full((x_t.shape[0],), int(t), dtype=torch.long)
    eps = denoiser(x_t, cond, tt)
    mean = (x_t - (beta / np.sqrt(1.0 - alpha_bar)) * eps) / np.sqrt(alpha)
    if t == 1:
        return mean
    if noise is None:
        noise = torch.randn(x_t.shape, generator=generator, dtype=x_t.dtype)
    return mean + np.sqrt(beta) * noise


class _PerSampleNoise:
    """Independent noise stream per candidate so results do not depend on batch size.

    Each candidate's draws for the whole trajectory are made in one call to
    its own generator; ``next()`` hands them out one step at a time.
    """

    def __init__(self, seed: int, n: int, steps: int, shape, dtype):
        gens = [torch.Generator().manual_seed(int(seed) * 1_000_003 + i) for i in range(n)]
        self.draws = torch.stack([torch.randn((steps, *shape), generator=g, dtype=dtype) for g in gens])
        self.k = 0

    def next(self) -> torch.Tensor:
        out = self.draws[:, self.k]
        self.k += 1
        return out


def _expand_cond(cond: torch.Tensor, n: int) -> torch.Tensor:
    if cond.dim() == 4:
        cond = cond[None]
    if cond.shape[0] == 1:
        return cond.expand(n, *cond.shape[1:])
    if cond.shape[0] != n:
        raise ShapeMismatch("condition batch", cond.shape, (n,))
    return cond


@torch.no_grad()
def generate(
    denoiser,
    cond: torch.Tensor,
    n: int,
    seed: int,
    schedule: NoiseSchedule,
    snapshots: bool = False,
):
    """Draw ``n`` latents by ancestral sampling from pure noise.

    With ``snapshots`` also returns 8 intermediate latents, one every T/8
    steps, the last being the final sample.
    """
    cond = _expand_cond(cond, n)
    shape = cond.shape[1:]
    # one draw for x_T plus one per step above t = 1
    noise = _PerSampleNoise(seed, n, schedule.T, shape, cond.dtype)
    x = noise.next()
    marks = {int(round(schedule.T - k * schedule.T / 8)) for k in range(1, 9)}
    traj = []
    for t in range(schedule.T, 0, -1):
        step_noise = noise.next() if t > 1 else None
        x = p_sample_step(denoiser, x, cond, t, schedule, noise=step_noise)
        if snapshots and t - 1 in marks:
            traj.append(x.clone())
    return (x, traj) if snapshots else x


def start_step(strength: float, T: int) -> int:
    if not 0.0 <= strength <= 1.0:
        raise ValueError(f"strength must lie in [0, 1], got {strength}")
    return int(round(strength * T))


@torch.no_grad()
def translate(
    denoiser,
    latent: torch.Tensor,
    cond: torch.Tensor,
    strength: float,
    seed: int,
    schedule: NoiseSchedule,
) -> torch.Tensor:
    """Noise ``latent`` to step round(strength*T) and denoise back to step 0."""
    t0 = start_step(strength, schedule.T)
    if t0 == 0:
        return latent.clone()
    single = latent.dim() == 4
    x0 = latent[None] if single else latent
    cond = _expand_cond(cond, x0.shape[0])
    noise = _PerSampleNoise(seed, x0.shape[0], t0, x0.shape[1:], x0.dtype)
    x = q_sample(x0, t0, noise.next(), schedule)
    for t in range(t0, 0, -1):
        step_noise = noise.next() if t > 1 else None
        x = p_sample_step(denoiser, x, cond, t, schedule, noise=step_noise)
    return x[0] if single else x
