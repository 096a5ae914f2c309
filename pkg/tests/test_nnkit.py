import math

import pytest
import torch
import torch.nn.functional as F
from torch import nn

from latentdesign.genvae import MultiHeadVAE, VaeArch
from latentdesign.nnkit import (
    Conv3d,
    FormatError,
    NonFiniteGradient,
    OptimizerConfig,
    ParamStore,
    ResBlock3d,
    ShapeMismatch,
    UpConv3d,
    adam_step,
    check_gradients,
    concat_channels,
    dumps,
    group_norm,
    load_checkpoint,
    load_into,
    loads,
    numerical_gradient,
    residual_add,
    save_checkpoint,
    timestep_embedding,
)

TOL = 1e-4


def x5(channels=4, seed=10, size=4):
    # seed differs from the projection seed of check_gradients: with x equal to the
    # projection the normalised output is stationary and every gradient vanishes
    return torch.randn(2, channels, size, size, size, generator=torch.Generator().manual_seed(seed), dtype=torch.float64)


class Lambda(nn.Module):
    def __init__(self, fn):
        super().__init__()
        self.fn = fn

    def forward(self, *xs):
        return self.fn(*xs)


def _timestep_module():
    # the embedding of a continuous t is smooth; check it in float64 throughout
    def fn(t):
        old = torch.get_default_dtype()
        torch.set_default_dtype(torch.float64)
        try:
            return timestep_embedding(t, 16, max_period=100.0)
        finally:
            torch.set_default_dtype(old)

    return Lambda(fn)


OPERATORS = {
    "conv3d": lambda: (Conv3d(4, 4), [x5()]),
    "conv3d_stride2": lambda: (Conv3d(4, 4, stride=2), [x5()]),
    "conv3d_1x1": lambda: (Conv3d(4, 3, kernel_size=1), [x5()]),
    "upsample_conv3d": lambda: (UpConv3d(4, 2), [x5(size=2)]),
    "group_norm": lambda: (group_norm(8), [x5(channels=8)]),
    "silu": lambda: (nn.SiLU(), [x5()]),
    "sigmoid": lambda: (nn.Sigmoid(), [x5()]),
    "linear": lambda: (nn.Linear(6, 5), [torch.randn(3, 6, dtype=torch.float64)]),
    "residual_add": lambda: (Lambda(residual_add), [x5(seed=1), x5(seed=2)]),
    "concat": lambda: (Lambda(lambda a, b: concat_channels(a, b) * torch.arange(1.0, 9.0, dtype=torch.float64)[:, None, None, None]), [x5(seed=3), x5(seed=4)]),
    "timestep_embedding": lambda: (_timestep_module(), [torch.tensor([0.5, 3.0, 7.25], dtype=torch.float64)]),
    "resblock": lambda: (ResBlock3d(8, 16), [x5(channels=8, size=2)]),
    # 16 channels so each norm group spans two channels and the time shift survives normalisation
    "resblock_time": lambda: (ResBlock3d(16, 16, emb_dim=6), [x5(channels=16, size=2), torch.randn(2, 6, dtype=torch.float64)]),
}


@pytest.mark.parametrize("name", sorted(OPERATORS))
def test_gradients_match_finite_differences(name):
    torch.manual_seed(0)
    module, inputs = OPERATORS[name]()
    errors = check_gradients(module, inputs, h=1e-4)
    assert errors, "nothing was checked"
    worst = max(errors, key=errors.get)
    assert errors[worst] < TOL, f"{name}: {worst} relative error {errors[worst]:.2e}"


def test_numerical_gradient_of_known_function():
    x = torch.tensor([0.3, -1.2, 2.0], dtype=torch.float64)
    g = numerical_gradient(lambda v: (v**3).sum(), x)
    assert torch.allclose(g, 3 * x**2, atol=1e-7)


def test_identity_kernel():
    conv = Conv3d(3, 3, kernel_size=1)
    with torch.no_grad():
        conv.weight.zero_()
        conv.weight[:, :, 0, 0, 0] = torch.eye(3)
        conv.bias.zero_()
    x = torch.randn(2, 3, 4, 4, 4)
    assert torch.equal(conv(x), x)


def test_same_padding_and_stride_shapes():
    x = torch.randn(1, 4, 8, 6, 4)
    assert Conv3d(4, 5)(x).shape == (1, 5, 8, 6, 4)
    assert Conv3d(4, 5, stride=2)(x).shape == (1, 5, 4, 3, 2)
    assert UpConv3d(4, 2)(x).shape == (1, 2, 16, 12, 8)


def test_concat_then_slice():
    a, b = torch.randn(2, 3, 2, 2, 2), torch.randn(2, 5, 2, 2, 2)
    c = concat_channels(a, b)
    assert torch.equal(c[:, :3], a) and torch.equal(c[:, 3:], b)


@pytest.mark.parametrize(
    "call, op",
    [
        (lambda: Conv3d(4, 4)(torch.randn(1, 3, 4, 4, 4)), "conv3d"),
        (lambda: Conv3d(4, 4, stride=2)(torch.randn(1, 4, 5, 4, 4)), "conv3d(stride=2)"),
        (lambda: concat_channels(torch.randn(1, 2, 4, 4, 4), torch.randn(1, 2, 2, 4, 4)), "concat"),
        (lambda: residual_add(torch.randn(1, 2, 4, 4, 4), torch.randn(1, 3, 4, 4, 4)), "residual_add"),
        (lambda: group_norm(12), "group_norm"),
    ],
)
def test_shape_mismatch_names_operator(call, op):
    with pytest.raises(ShapeMismatch) as err:
        call()
    assert err.value.op == op
    assert op in str(err.value) and "(" in str(err.value)


def test_timestep_embedding_layout():
    e = timestep_embedding(torch.tensor([0, 5]), 8)
    assert e.shape == (2, 8)
    assert torch.allclose(e[0], torch.tensor([1.0, 1, 1, 1, 0, 0, 0, 0]))
    assert e[1, 0] == pytest.approx(math.cos(5.0))


def test_forward_is_deterministic():
    torch.manual_seed(3)
    block = ResBlock3d(8, 8, emb_dim=4)
    x, emb = torch.randn(2, 8, 4, 4, 4), torch.randn(2, 4)
    assert torch.equal(block(x, emb), block(x, emb))


class TestAdam:
    def _store(self, value):
        return ParamStore({"x": torch.tensor(value, dtype=torch.float64)})

    def test_zero_gradient_keeps_params(self):
        s = self._store([1.0, -2.0])
        adam_step(s, {"x": torch.zeros(2, dtype=torch.float64)}, OptimizerConfig(lr=0.1))
        assert torch.equal(s["x"], torch.tensor([1.0, -2.0], dtype=torch.float64))

    def test_first_step_on_square(self):
        s = self._store([1.0])
        adam_step(s, {"x": 2 * s["x"].clone()}, OptimizerConfig(lr=0.1, grad_clip=None))
        # bias-corrected first step: m_hat / sqrt(v_hat) = sign(g)
        assert s["x"].item() == pytest.approx(0.9, abs=1e-7)

    def test_quadratic_matches_scalar_reference(self):
        cfg = OptimizerConfig(lr=0.05, grad_clip=None)
        scale = (1.0, 3.0)
        s = self._store([1.0, -1.0])
        ref, m, v = [1.0, -1.0], [0.0, 0.0], [0.0, 0.0]
        for t in range(1, 201):
            x = s["x"]
            adam_step(s, {"x": 2 * torch.tensor(scale, dtype=torch.float64) * x}, cfg)
            for i in range(2):
                g = 2 * scale[i] * ref[i]
                m[i] = 0.9 * m[i] + 0.1 * g
                v[i] = 0.999 * v[i] + 0.001 * g * g
                ref[i] -= 0.05 * (m[i] / (1 - 0.9**t)) / (math.sqrt(v[i] / (1 - 0.999**t)) + 1e-8)
        assert torch.allclose(s["x"], torch.tensor(ref, dtype=torch.float64), atol=1e-12)
        assert torch.linalg.norm(s["x"]) < 1e-3

    def test_non_finite_gradient(self):
        s = self._store([1.0])
        with pytest.raises(NonFiniteGradient):
            adam_step(s, {"x": torch.tensor([float("nan")], dtype=torch.float64)}, OptimizerConfig())
        assert s.step == 0

    def test_gradient_clipping(self):
        s = self._store([0.0, 0.0])
        g = {"x": torch.tensor([30.0, 40.0], dtype=torch.float64)}
        adam_step(s, g, OptimizerConfig(grad_clip=1.0))
        assert torch.allclose(g["x"], torch.tensor([0.6, 0.8], dtype=torch.float64))

    def test_shape_and_name_checks(self):
        s = self._store([0.0, 0.0])
        with pytest.raises(ValueError):
            adam_step(s, {"x": torch.zeros(3, dtype=torch.float64)}, OptimizerConfig())
        with pytest.raises(KeyError):
            adam_step(s, {"y": torch.zeros(2, dtype=torch.float64)}, OptimizerConfig())

    @pytest.mark.parametrize("kw", [dict(lr=0), dict(beta1=1.0), dict(beta2=-0.1)])
    def test_config_invariants(self, kw):
        with pytest.raises(ValueError):
            OptimizerConfig(**kw)


def _trained_store():
    torch.manual_seed(0)
    model = nn.Sequential(Conv3d(1, 8), nn.SiLU(), Conv3d(8, 1))
    store = ParamStore.from_module(model, meta={"note": "unit", "n": 3})
    out = model(torch.randn(2, 1, 4, 4, 4)).square().mean()
    out.backward()
    adam_step(store, store.grads(), OptimizerConfig())
    return model, store


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        _, store = _trained_store()
        save_checkpoint(store, tmp_path / "a.ckpt")
        again = load_checkpoint(tmp_path / "a.ckpt")
        save_checkpoint(again, tmp_path / "b.ckpt")
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
        assert again.meta == {"note": "unit", "n": 3} and again.step == 1
        for name, p in store.params.items():
            assert torch.equal(again.params[name], p.detach())
            assert torch.equal(again.exp_avg[name], store.exp_avg[name])
            assert torch.equal(again.exp_avg_sq[name], store.exp_avg_sq[name])

    def test_header_layout(self):
        _, store = _trained_store()
        raw = dumps(store)
        assert raw[:4] == b"VXCK"
        assert int.from_bytes(raw[4:6], "little") == 1
        # meta, 4 params, step, 2 moments per param
        assert int.from_bytes(raw[6:10], "little") == 1 + 4 + 1 + 8

    def test_shape_mismatch_names_parameter(self):
        _, store = _trained_store()
        other = nn.Sequential(Conv3d(1, 16), nn.SiLU(), Conv3d(16, 1))
        with pytest.raises(FormatError) as err:
            load_into(other, store)
        assert err.value.field == "0.weight" and "0.weight" in str(err.value)

    def test_missing_parameter(self):
        _, store = _trained_store()
        bigger = nn.Sequential(Conv3d(1, 8), nn.SiLU(), Conv3d(8, 1), Conv3d(1, 1))
        with pytest.raises(FormatError, match="3.weight"):
            load_into(bigger, store)

    @pytest.mark.parametrize(
        "mutate, field",
        [
            (lambda b: b"XXXX" + b[4:], "magic"),
            (lambda b: b[:4] + (9).to_bytes(2, "little") + b[6:], "version"),
            (lambda b: b + b"\x00", "trailer"),
            (lambda b: b[:5], "header"),
        ],
    )
    def test_corrupt_files(self, mutate, field):
        _, store = _trained_store()
        with pytest.raises(FormatError) as err:
            loads(mutate(dumps(store)))
        assert err.value.field == field

    def test_truncated_payload(self):
        _, store = _trained_store()
        with pytest.raises(FormatError):
            loads(dumps(store)[:-3])

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="gone.ckpt"):
            load_checkpoint(tmp_path / "gone.ckpt")

    def test_resolution_independent_shapes(self, tmp_path):
        torch.manual_seed(0)
        arch = VaeArch(channels=(8, 8, 16))
        small = MultiHeadVAE(arch)
        save_checkpoint(ParamStore.from_module(small), tmp_path / "v.ckpt")
        big = MultiHeadVAE(arch)
        load_into(big, load_checkpoint(tmp_path / "v.ckpt"))
        x32 = torch.rand(1, 1, 32, 32, 32)
        z_q = big.encode_condition(x32)[0]
        post = big.encode_design(x32)
        assert z_q.shape == (1, 4, 8, 8, 8) and post.mu.shape == (1, 4, 8, 8, 8)
        assert big.decode(z_q, post.mu).shape == x32.shape
        for (n, a), (_, b) in zip(small.named_parameters(), big.named_parameters()):
            assert torch.equal(a, b), n


def test_silu_sigmoid_reference():
    x = torch.linspace(-4, 4, 9, dtype=torch.float64)
    assert torch.allclose(F.silu(x), x / (1 + torch.exp(-x)))
    assert torch.allclose(torch.sigmoid(x), 1 / (1 + torch.exp(-x)))
