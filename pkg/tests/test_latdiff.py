import math
from types import SimpleNamespace

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from latentdesign.genvae import MultiHeadVAE, VaeArch
from latentdesign.latdiff import (
    ConditionalLDM,
    Denoiser,
    DenoiserArch,
    InvalidSchedule,
    LdmTrainConfig,
    NoiseSchedule,
    ddpm_loss,
    generate,
    load_ldm,
    make_schedule,
    p_sample_step,
    q_sample,
    scaled_linear_schedule,
    start_step,
    train_ldm,
    translate,
)
from latentdesign.nnkit import ShapeMismatch

SMALL_DENOISER = DenoiserArch(channels=16, n_blocks=1, time_dim=16)


def alpha_bar_of(schedule, t):
    return torch.tensor(schedule.alpha_bar, dtype=torch.float64)[torch.as_tensor(t) - 1]


def point_mass_denoiser(x0, schedule):
    """Exact noise prediction when every data point equals ``x0``."""

    def fn(x_t, cond, t):
        ab = alpha_bar_of(schedule, t).reshape(-1, *([1] * (x_t.dim() - 1))).to(x_t.dtype)
        return (x_t - ab.sqrt() * x0) / (1 - ab).sqrt()

    return fn


def gaussian_denoiser(mean, std, schedule):
    """Exact E[noise | x_t] for scalar data ~ N(mean, std^2)."""

    def fn(x_t, cond, t):
        ab = alpha_bar_of(schedule, t).reshape(-1, *([1] * (x_t.dim() - 1)))
        var = ab * std**2 + 1 - ab
        return (1 - ab).sqrt() * (x_t - ab.sqrt() * mean) / var

    return fn


def mixture_denoiser(means, std, schedule):
    """Exact E[noise | x_t] for an equal-weight 1D Gaussian mixture."""
    means = torch.tensor(means, dtype=torch.float64)

    def fn(x_t, cond, t):
        ab = alpha_bar_of(schedule, t).reshape(-1, *([1] * (x_t.dim() - 1)))
        x = x_t[..., None]
        var = ab[..., None] * std**2 + 1 - ab[..., None]
        logw = -((x - ab[..., None].sqrt() * means) ** 2) / (2 * var)
        w = torch.softmax(logw, dim=-1)
        eps_k = (1 - ab[..., None]).sqrt() * (x - ab[..., None].sqrt() * means) / var
        return (w * eps_k).sum(-1)

    return fn


class TestSchedule:
    def test_single_step(self):
        s = make_schedule(1, 0.01, 0.01)
        assert s.T == 1 and s.at(1) == pytest.approx((0.01, 0.99, 0.99))

    def test_constant_beta(self):
        s = make_schedule(2, 0.1, 0.1)
        assert s.at(2)[2] == pytest.approx(0.81)

    @pytest.mark.parametrize("args", [(0,), (10, 0.0, 0.02), (10, 0.03, 0.02), (10, 1e-4, 1.0), (2.5,)])
    def test_invalid(self, args):
        with pytest.raises(InvalidSchedule):
            make_schedule(*args)

    @settings(max_examples=50, deadline=None)
    @given(T=st.integers(1, 1500), b0=st.floats(1e-5, 0.05), span=st.floats(0, 0.1))
    def test_identities(self, T, b0, span):
        s = make_schedule(T, b0, b0 + span)
        assert np.allclose(s.alpha, 1 - s.beta)
        assert np.allclose(s.alpha_bar, np.cumprod(s.alpha), rtol=1e-12)
        assert np.all(np.diff(s.alpha_bar) < 0) and np.all((s.alpha_bar > 0) & (s.alpha_bar < 1))

    def test_read_only(self):
        with pytest.raises(ValueError):
            make_schedule(4).beta[0] = 0.5

    def test_scaled_default_reaches_noise(self):
        s = scaled_linear_schedule(200)
        assert s.beta[0] == pytest.approx(5e-4) and s.beta[-1] == pytest.approx(0.1)
        assert s.alpha_bar[-1] < 0.01
        assert make_schedule(1000).alpha_bar[-1] < 0.01

    def test_dict_round_trip(self):
        s = scaled_linear_schedule(50)
        back = NoiseSchedule.from_dict(s.to_dict())
        assert np.array_equal(back.beta, s.beta) and np.array_equal(back.alpha_bar, s.alpha_bar)

    def test_step_range(self):
        with pytest.raises(ValueError):
            make_schedule(5).at(0)


class TestForward:
    s = make_schedule(10, 0.1, 0.1)

    def test_examples(self):
        x0, z = torch.full((1, 3), 2.0, dtype=torch.float64), torch.ones(1, 3, dtype=torch.float64)
        ab = 0.9
        assert torch.allclose(q_sample(x0, 1, z, self.s), torch.full((1, 3), math.sqrt(ab) * 2 + math.sqrt(1 - ab), dtype=torch.float64))
        assert torch.allclose(q_sample(x0, 3, torch.zeros_like(x0), self.s), x0 * 0.9**1.5)

    def test_per_item_steps(self):
        x0, z = torch.ones(2, 1, dtype=torch.float64), torch.zeros(2, 1, dtype=torch.float64)
        out = q_sample(x0, torch.tensor([1, 2]), z, self.s)
        assert out[:, 0].tolist() == pytest.approx([math.sqrt(0.9), 0.9])

    def test_errors(self):
        with pytest.raises(ShapeMismatch):
            q_sample(torch.zeros(2, 3), 1, torch.zeros(2, 4), self.s)
        with pytest.raises(ValueError):
            q_sample(torch.zeros(2), 11, torch.zeros(2), self.s)

    def test_marginal_moments(self):
        s = scaled_linear_schedule(200)
        g = torch.Generator().manual_seed(0)
        n = 200_000
        x0 = torch.full((n,), 1.5, dtype=torch.float64)
        for t in (1, 50, 200):
            x = q_sample(x0, t, torch.randn(n, generator=g, dtype=torch.float64), s)
            ab = s.alpha_bar[t - 1]
            sd = math.sqrt(1 - ab)
            assert abs(x.mean().item() - 1.5 * math.sqrt(ab)) < 5 * sd / math.sqrt(n)
            assert abs(x.std().item() - sd) < 5 * sd / math.sqrt(2 * n)


class TestLoss:
    s = scaled_linear_schedule(50)

    def test_oracle_gives_zero(self):
        x0 = torch.randn(4, 2, 2, 2, 2, dtype=torch.float64)
        loss = ddpm_loss(point_mass_denoiser(x0, self.s), x0, None, self.s, generator=torch.Generator().manual_seed(0))
        assert loss.item() < 1e-20

    def test_zero_predictor_sees_unit_noise(self):
        x0 = torch.randn(64, 4, 4, 4, 4)
        loss = ddpm_loss(lambda x, c, t: torch.zeros_like(x), x0, None, self.s, generator=torch.Generator().manual_seed(1))
        assert loss.item() == pytest.approx(1.0, abs=0.02)

    def test_batch_permutation(self):
        torch.manual_seed(2)
        den = Denoiser(SMALL_DENOISER)
        x0, cond = torch.randn(5, 4, 2, 2, 2), torch.randn(5, 4, 2, 2, 2)
        t, z = torch.randint(1, 51, (5,)), torch.randn(5, 4, 2, 2, 2)
        perm = torch.tensor([3, 0, 4, 1, 2])
        a = ddpm_loss(den, x0, cond, self.s, t=t, z=z)
        b = ddpm_loss(den, x0[perm], cond[perm], self.s, t=t[perm], z=z[perm])
        assert a.item() == pytest.approx(b.item(), rel=1e-5)


class TestReverse:
    s = scaled_linear_schedule(40)

    def test_last_step_is_noiseless(self):
        x = torch.randn(3, 4, dtype=torch.float64)
        den = point_mass_denoiser(torch.zeros(3, 4, dtype=torch.float64), self.s)
        a = p_sample_step(den, x, None, 1, self.s, generator=torch.Generator().manual_seed(0))
        b = p_sample_step(den, x, None, 1, self.s, generator=torch.Generator().manual_seed(1))
        assert torch.equal(a, b)

    @pytest.mark.parametrize("t", [2, 17, 40])
    def test_mean_matches_posterior(self, t):
        x0 = torch.randn(2, 3, dtype=torch.float64)
        x_t = torch.randn(2, 3, dtype=torch.float64)
        beta, alpha, ab = self.s.at(t)
        ab_prev = self.s.at(t - 1)[2]
        mean = p_sample_step(point_mass_denoiser(x0, self.s), x_t, None, t, self.s, noise=torch.zeros_like(x_t))
        posterior = (math.sqrt(ab_prev) * beta * x0 + math.sqrt(alpha) * (1 - ab_prev) * x_t) / (1 - ab)
        assert torch.allclose(mean, posterior, atol=1e-12)

    def test_noise_scale(self):
        x = torch.zeros(1, 1, dtype=torch.float64)
        den = point_mass_denoiser(torch.zeros(1, 1, dtype=torch.float64), self.s)
        a = p_sample_step(den, x, None, 10, self.s, noise=torch.ones_like(x))
        assert a.item() == pytest.approx(math.sqrt(self.s.at(10)[0]))

    def test_point_mass_recovered(self):
        x0 = torch.tensor([[0.3, -1.2]], dtype=torch.float64)
        out = generate(point_mass_denoiser(x0, self.s), torch.zeros(1, 2, dtype=torch.float64), 6, 3, self.s)
        assert torch.allclose(out, x0.expand(6, 2), atol=1e-10)


def _scalar_samples(denoiser, schedule, n, seed):
    cond = torch.zeros(1, 1, dtype=torch.float64)
    return generate(denoiser, cond, n, seed, schedule)[:, 0].numpy()


class TestSamplingDistribution:
    s = scaled_linear_schedule(200)

    def test_gaussian_data_ks(self):
        x = _scalar_samples(gaussian_denoiser(0.8, 0.5, self.s), self.s, 2000, 11)
        assert stats.kstest(x, stats.norm(0.8, 0.5).cdf).pvalue > 0.01

    def test_mixture_mode_coverage(self):
        n = 2000
        x = _scalar_samples(mixture_denoiser([-2.0, 2.0], 0.2, self.s), self.s, n, 12)
        right = np.mean(x > 0)
        assert abs(right - 0.5) <= 3 * math.sqrt(0.25 / n)
        assert np.mean(np.minimum(np.abs(x - 2), np.abs(x + 2)) < 0.8) > 0.99


class TestGenerate:
    s = scaled_linear_schedule(16)

    def test_snapshots(self):
        torch.manual_seed(0)
        den = Denoiser(SMALL_DENOISER).eval()
        cond = torch.randn(1, 4, 2, 2, 2)
        x, traj = generate(den, cond, 2, 5, self.s, snapshots=True)
        assert len(traj) == 8 and torch.equal(traj[-1], x)
        assert x.shape == (2, 4, 2, 2, 2)

    def test_seed_determinism_and_batch_independence(self):
        torch.manual_seed(0)
        den = Denoiser(SMALL_DENOISER).eval()
        cond = torch.randn(1, 4, 2, 2, 2)
        keep = cond.clone()
        a = generate(den, cond, 3, 9, self.s)
        b = generate(den, cond, 3, 9, self.s)
        c = generate(den, cond, 5, 9, self.s)
        assert torch.equal(a, b)
        assert torch.allclose(a, c[:3], atol=1e-6)
        assert not torch.equal(a, generate(den, cond, 3, 10, self.s))
        assert torch.equal(cond, keep)

    def test_condition_batch_checked(self):
        den = Denoiser(SMALL_DENOISER)
        with pytest.raises(ShapeMismatch):
            generate(den, torch.zeros(2, 4, 2, 2, 2), 3, 0, self.s)


class TestTranslate:
    s = scaled_linear_schedule(20)

    def test_zero_strength_is_identity(self):
        den = Denoiser(SMALL_DENOISER)
        z = torch.randn(2, 4, 2, 2, 2)
        out = translate(den, z, torch.zeros(1, 4, 2, 2, 2), 0.0, 1, self.s)
        assert torch.equal(out, z) and out is not z

    def test_start_step(self):
        assert [start_step(s, 200) for s in (0, 0.25, 0.5, 1.0)] == [0, 50, 100, 200]
        with pytest.raises(ValueError):
            start_step(1.5, 200)

    def test_point_mass_pulls_back(self):
        x0 = torch.tensor([[1.0, -1.0]], dtype=torch.float64)
        src = torch.tensor([[5.0, 5.0]], dtype=torch.float64)
        out = translate(point_mass_denoiser(x0, self.s), src, torch.zeros(1, 2, dtype=torch.float64), 0.5, 0, self.s)
        assert torch.allclose(out, x0, atol=1e-10)

    def test_deterministic(self):
        torch.manual_seed(1)
        den = Denoiser(SMALL_DENOISER).eval()
        z, cond = torch.randn(2, 4, 2, 2, 2), torch.randn(1, 4, 2, 2, 2)
        assert torch.equal(translate(den, z, cond, 0.5, 4, self.s), translate(den, z, cond, 0.5, 4, self.s))


class TestDenoiser:
    def test_shape_and_default_size(self):
        den = Denoiser()
        out = den(torch.randn(2, 4, 4, 4, 4), torch.randn(2, 4, 4, 4, 4), torch.tensor([1, 200]))
        assert out.shape == (2, 4, 4, 4, 4)
        assert 500_000 < sum(p.numel() for p in den.parameters()) < 2_000_000

    def test_time_changes_output(self):
        torch.manual_seed(0)
        den = Denoiser(SMALL_DENOISER)
        x, c = torch.randn(1, 4, 2, 2, 2), torch.randn(1, 4, 2, 2, 2)
        assert not torch.allclose(den(x, c, torch.tensor([1])), den(x, c, torch.tensor([150])))


def _tiny_data(n=6, size=8):
    rng = np.random.default_rng(0)
    return SimpleNamespace(
        conditions=rng.uniform(0, 1, (n, size, size, size)).astype(np.float32),
        densities=(rng.uniform(0, 1, (n, size, size, size)) > 0.5).astype(np.float32),
    )


class TestTraining:
    cfg = LdmTrainConfig(epochs=2, batch_size=4, lr=1e-3, seed=3, T=20, arch=SMALL_DENOISER)

    def _vae(self):
        torch.manual_seed(0)
        return MultiHeadVAE(VaeArch(channels=(8, 8, 8), codebook_size=16))

    def test_vae_frozen_and_reproducible(self, tmp_path):
        vae = self._vae()
        before = {n: p.detach().clone() for n, p in vae.named_parameters()}
        data = _tiny_data()
        a = train_ldm(data, vae, self.cfg, log_path=tmp_path / "a.json", checkpoint_path=tmp_path / "a.ckpt")
        train_ldm(data, vae, self.cfg, checkpoint_path=tmp_path / "b.ckpt")
        for n, p in vae.named_parameters():
            assert torch.equal(p, before[n]) and not p.requires_grad
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
        assert len(a.log) == 2 and all(math.isfinite(e["loss"]) for e in a.log)

    def test_checkpoint_round_trip(self, tmp_path):
        vae = self._vae()
        res = train_ldm(_tiny_data(), vae, self.cfg, checkpoint_path=tmp_path / "l.ckpt")
        ldm = load_ldm(tmp_path / "l.ckpt")
        assert isinstance(ldm, ConditionalLDM)
        assert ldm.latent_scale == res.ldm.latent_scale and ldm.schedule.T == 20
        cond = torch.randn(1, 4, 2, 2, 2)
        assert torch.equal(ldm.sample(cond, 2, 1), res.ldm.sample(cond, 2, 1))
        z = torch.randn(2, 4, 2, 2, 2)
        assert torch.equal(ldm.translate(z, cond, 0.0, 1), z)
