import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from aslgan.errors import ConfigError, GeometryError
from aslgan.losses import (
    GaussianFilterSpec, LossWeights, critic_loss, critic_terms, gaussian_lowpass,
    generator_adv_loss, gradient_penalty, lowpass_loss, mse_loss, total_generator_loss,
)
from aslgan.networks import DiscriminatorSpec, build_discriminator

F64 = torch.float64


def rand(*shape, seed=0):
    return torch.randn(shape, generator=torch.Generator().manual_seed(seed), dtype=F64)


def mean_critic(v):
    return v.mean(dim=(1, 2, 3, 4), keepdim=True)


def zero_critic(v):
    return torch.zeros((v.shape[0], 1, 1, 1, 1), dtype=v.dtype)


def checkerboard(n):
    i, j, k = np.indices((n, n, n))
    return torch.tensor((-1.0) ** (i + j + k), dtype=F64)


# -- filter ------------------------------------------------------------------

def test_kernel_normalized_and_radius():
    spec = GaussianFilterSpec()
    k = spec.kernel()
    assert spec.effective_radius == 15 and k.size == 31
    assert abs(k.sum() - 1) <= 1e-12
    assert GaussianFilterSpec(sigma=1.2).effective_radius == 4


def test_filter_rejects_bad_sigma():
    with pytest.raises(ConfigError):
        GaussianFilterSpec(sigma=0)


@pytest.mark.parametrize("sigma", [0.7, 2.0, 5.0])
def test_constant_passes(sigma):
    out = gaussian_lowpass(torch.full((9, 10, 11), 3.5, dtype=F64), GaussianFilterSpec(sigma))
    assert torch.allclose(out, torch.full_like(out, 3.5), atol=1e-12)


def test_impulse_response():
    spec = GaussianFilterSpec(sigma=2.0)
    x = np.arange(-6, 7)
    k1 = np.exp(-x ** 2 / 8.0)
    k1 /= k1.sum()
    v = torch.zeros((31, 31, 31), dtype=F64)
    v[15, 15, 15] = 1
    out = gaussian_lowpass(v, spec)
    assert abs(out[15, 15, 15].item() - k1[6] ** 3) <= 1e-12
    assert abs(out[16, 15, 15].item() - k1[7] * k1[6] ** 2) <= 1e-12


def test_white_noise_variance_reduction():
    v = rand(48, 48, 48)
    out = gaussian_lowpass(v)
    k = GaussianFilterSpec().kernel()
    predicted = (k ** 2).sum() ** 3
    assert out[15:-15, 15:-15, 15:-15].var().item() < 0.02 * v.var().item()
    assert predicted < 0.02


def test_checkerboard_energy_attenuation():
    k = GaussianFilterSpec().kernel()
    nyquist_gain = abs(np.sum(k * (-1.0) ** np.arange(k.size))) ** 3
    cb = checkerboard(32)
    out = gaussian_lowpass(cb)
    ratio = (out ** 2).sum().item() / (cb ** 2).sum().item()
    assert nyquist_gain ** 2 <= 0.02
    assert ratio <= 0.02


def test_filter_is_linear():
    u, w = rand(12, 12, 12), rand(12, 12, 12, seed=1)
    lhs = gaussian_lowpass(2.5 * u - 0.75 * w)
    rhs = 2.5 * gaussian_lowpass(u) - 0.75 * gaussian_lowpass(w)
    assert torch.max(torch.abs(lhs - rhs)) <= 1e-6


def test_filter_accepts_batched():
    v = rand(2, 1, 8, 8, 8)
    out = gaussian_lowpass(v)
    assert out.shape == v.shape
    assert torch.allclose(out[1, 0], gaussian_lowpass(v[1, 0]))


# -- reconstruction losses ---------------------------------------------------

def test_mse_examples():
    t = rand(4, 4, 4)
    assert mse_loss(t, t).item() == 0
    assert mse_loss(t + 1, t).item() == pytest.approx(1.0, abs=1e-12)
    g = rand(4, 4, 4, seed=2)
    brute = sum((a - b) ** 2 for a, b in zip(g.flatten().tolist(), t.flatten().tolist())) / 64
    assert abs(mse_loss(g, t).item() - brute) <= 1e-7


def test_shape_mismatch():
    with pytest.raises(GeometryError):
        mse_loss(rand(4, 4, 4), rand(4, 4, 5))
    with pytest.raises(GeometryError):
        lowpass_loss(rand(4, 4, 4), rand(4, 4, 5))
    with pytest.raises(GeometryError):
        critic_loss(mean_critic, rand(1, 1, 4, 4, 4), rand(1, 1, 4, 4, 5))


def test_lowpass_examples():
    t = rand(16, 16, 16)
    assert lowpass_loss(t, t).item() == 0
    assert abs(lowpass_loss(t + 1, t).item() - 1.0) <= 1e-6
    assert abs(lowpass_loss(t + 0.3, t).item() - 0.09) <= 1e-6
    g = t + checkerboard(16)
    assert lowpass_loss(g, t).item() < 0.02 * mse_loss(g, t).item()


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.5, 6.0))
def test_lowpass_bounded_by_mse(seed, sigma):
    g, t = rand(10, 9, 8, seed=seed), rand(10, 9, 8, seed=seed + 1)
    assert lowpass_loss(g, t, GaussianFilterSpec(sigma)) <= mse_loss(g, t) + 1e-12


# -- adversarial terms -------------------------------------------------------

def test_linear_critic_penalty_matches_analytic():
    real = rand(1, 1, 4, 4, 4)
    expected = 10 * (1 / math.sqrt(64) - 1) ** 2
    assert expected == pytest.approx(7.65625)
    terms = critic_terms(mean_critic, real, real.clone(), 10.0)
    assert terms["wasserstein"].item() == 0
    assert abs(terms["total"].item() - expected) <= 1e-5


def test_zero_critic_penalty_is_lambda():
    real = rand(1, 1, 4, 4, 4)
    terms = critic_terms(zero_critic, real, rand(1, 1, 4, 4, 4, seed=1), 10.0)
    assert terms["wasserstein"].item() == 0
    assert terms["penalty"].item() == 1.0
    assert terms["total"].item() == 10.0


def test_unit_gradient_critic_gives_zero():
    # sum(v) / sqrt(V) has gradient norm exactly 1 everywhere
    def unit(v):
        return v.sum(dim=(1, 2, 3, 4), keepdim=True) / math.sqrt(v[0].numel())

    real = rand(1, 1, 4, 4, 4)
    assert abs(critic_loss(unit, real, real.clone())) <= 1e-6


def test_penalty_is_seeded():
    D = build_discriminator(DiscriminatorSpec(base_width=4), seed=0).double()
    real, fake = rand(1, 1, 8, 8, 8), rand(1, 1, 8, 8, 8, seed=1)
    a = critic_loss(D, real, fake, rng=torch.Generator().manual_seed(3))
    b = critic_loss(D, real, fake, rng=torch.Generator().manual_seed(3))
    assert a.item() == b.item()
    assert gradient_penalty(D, real, fake, torch.Generator().manual_seed(3)) >= 0


def test_critic_loss_blocks_generator_gradient():
    D = build_discriminator(DiscriminatorSpec(base_width=4), seed=0).double()
    fake = rand(1, 1, 8, 8, 8).requires_grad_(True)
    critic_loss(D, rand(1, 1, 8, 8, 8, seed=1), fake * 2).backward()
    assert fake.grad is None
    assert all(p.grad is not None for p in D.parameters())


def test_generator_adv_examples():
    assert generator_adv_loss(zero_critic, rand(1, 1, 4, 4, 4)).item() == 0
    assert generator_adv_loss(mean_critic, torch.full((4, 4, 4), 2.0, dtype=F64)).item() == -2.0


def test_generator_adv_gradient():
    fake = rand(1, 1, 4, 4, 4).requires_grad_(True)
    generator_adv_loss(mean_critic, fake).backward()
    assert torch.allclose(fake.grad, torch.full_like(fake, -1 / 64), atol=1e-12)


def test_total_generator_loss_examples():
    D = build_discriminator(DiscriminatorSpec(base_width=4), seed=0).double()
    g, t = rand(1, 1, 8, 8, 8), rand(1, 1, 8, 8, 8, seed=1)
    none = LossWeights(alpha=0, beta=0)
    assert total_generator_loss(D, g, t, none).item() == generator_adv_loss(D, g).item()
    assert total_generator_loss(zero_critic, t, t).item() == 0
    w = LossWeights(alpha=1, beta=1)
    assert abs(total_generator_loss(zero_critic, t + 1, t, w).item() - 2.0) <= 1e-6


def test_loss_weights_validation():
    with pytest.raises(ConfigError):
        LossWeights(alpha=-1)
    with pytest.raises(ConfigError):
        LossWeights(d_steps_per_g=0)


# -- finite-difference oracles -----------------------------------------------

def _input_fd(loss_fn, x, idxs, eps=1e-3, rtol=1e-3):
    x = x.detach().clone().requires_grad_(True)
    (g,) = torch.autograd.grad(loss_fn(x), x)
    for idx in idxs:
        xp, xm = x.detach().clone(), x.detach().clone()
        xp[idx] += eps
        xm[idx] -= eps
        num = (loss_fn(xp) - loss_fn(xm)).item() / (2 * eps)
        assert abs(num - g[idx].item()) <= rtol * max(abs(num), abs(g[idx].item()), 1e-6), idx


IDXS = [(0, 0, 0, 0, 0), (0, 0, 3, 5, 1), (0, 0, 7, 7, 7), (0, 0, 4, 0, 6)]


def test_mse_and_lowpass_input_gradients():
    t = rand(1, 1, 8, 8, 8, seed=1)
    _input_fd(lambda x: mse_loss(x, t), rand(1, 1, 8, 8, 8), IDXS)
    _input_fd(lambda x: lowpass_loss(x, t), rand(1, 1, 8, 8, 8), IDXS)


def test_adversarial_input_gradients():
    D = build_discriminator(DiscriminatorSpec(base_width=4), seed=2).double()
    real = rand(1, 1, 8, 8, 8, seed=1)
    _input_fd(lambda x: generator_adv_loss(D, x), rand(1, 1, 8, 8, 8), IDXS)
    _input_fd(lambda x: critic_loss(D, x, rand(1, 1, 8, 8, 8, seed=5),
                                    rng=torch.Generator().manual_seed(0)),
              real, IDXS)


def test_penalty_value_independent_of_grad_mode():
    D = build_discriminator(DiscriminatorSpec(base_width=4), seed=3).double()
    real = torch.randn(1, 1, 8, 8, 8, dtype=torch.float64, generator=torch.Generator().manual_seed(0))
    fake = torch.randn(1, 1, 8, 8, 8, dtype=torch.float64, generator=torch.Generator().manual_seed(1))
    live = critic_loss(D, real, fake, 10.0, torch.Generator().manual_seed(2))
    with torch.no_grad():
        frozen = critic_loss(D, real, fake, 10.0, torch.Generator().manual_seed(2))
    assert not frozen.requires_grad
    assert frozen.item() == pytest.approx(live.item(), rel=1e-12)
