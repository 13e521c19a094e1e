"""Training objective: WGAN-GP adversarial term, MSE, and Gaussian low-pass MSE.

All functions take torch tensors shaped (X, Y, Z) or (B, C, X, Y, Z) and
stay differentiable. Squared norms are means over voxels, so the weights
do not depend on the volume size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ConfigError, GeometryError

Critic = Callable[[torch.Tensor], torch.Tensor]


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 10.0
    beta: float = 10.0
    lambda_gp: float = 10.0
    d_steps_per_g: int = 1

    def __post_init__(self):
        for name in ("alpha", "beta", "lambda_gp"):
            val = getattr(self, name)
            if not (math.isfinite(val) and val >= 0):
                raise ConfigError(f"loss.{name} must be finite and >= 0, got {val}")
        if int(self.d_steps_per_g) < 1:
            raise ConfigError(f"loss.d_steps_per_g must be >= 1, got {self.d_steps_per_g}")


@dataclass(frozen=True)
class GaussianFilterSpec:
    sigma: float = 5.0
    radius: Optional[int] = None

    def __post_init__(self):
        if not self.sigma > 0:
            raise ConfigError(f"filter.sigma must be > 0, got {self.sigma}")
        if self.radius is not None and self.radius < 0:
            raise ConfigError(f"filter.radius must be >= 0, got {self.radius}")

    @property
    def effective_radius(self) -> int:
        return int(math.ceil(3 * self.sigma)) if self.radius is None else int(self.radius)

    def kernel(self) -> np.ndarray:
        """Normalized sampled 1D Gaussian, length ``2 * radius + 1``."""
        r = self.effective_radius
        k = np.arange(-r, r + 1, dtype=np.float64)
        w = np.exp(-0.5 * (k / self.sigma) ** 2)
        return w / w.sum()


def _as5d(t: torch.Tensor) -> torch.Tensor:
    if t.dim() == 3:
        return t[None, None]
    if t.dim() == 5:
        return t
    raise GeometryError(f"expected a (X,Y,Z) or (B,C,X,Y,Z) tensor, got shape {tuple(t.shape)}")


def _same_shape(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise GeometryError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def gaussian_lowpass(v: torch.Tensor, spec: GaussianFilterSpec = GaussianFilterSpec()) -> torch.Tensor:
    """Separable Gaussian blur with replicate borders (DC gain exactly 1)."""
    shape = v.shape
    h = _as5d(v)
    b, c = h.shape[:2]
    h = h.reshape(b * c, 1, *h.shape[2:])
    r = spec.effective_radius
    w = torch.as_tensor(spec.kernel(), dtype=h.dtype, device=h.device)
    for axis in range(3):
        kshape = [1, 1, 1, 1, 1]
        kshape[2 + axis] = 2 * r + 1
        pad = [0] * 6
        # F.pad lists the last axis first
        pad[2 * (2 - axis)] = pad[2 * (2 - axis) + 1] = r
        h = F.conv3d(F.pad(h, pad, mode="replicate"), w.view(kshape))
    return h.reshape(shape)


def mse_loss(gen: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    _same_shape(gen, target)
    return ((gen - target) ** 2).mean()


def lowpass_loss(gen: torch.Tensor, target: torch.Tensor,
                 spec: GaussianFilterSpec = GaussianFilterSpec()) -> torch.Tensor:
    _same_shape(gen, target)
    return mse_loss(gaussian_lowpass(gen, spec), gaussian_lowpass(target, spec))


def _per_sample_mean(scores: torch.Tensor) -> torch.Tensor:
    return scores.reshape(scores.shape[0], -1).mean(dim=1)


def gradient_penalty(D: Critic, real: torch.Tensor, fake: torch.Tensor,
                     rng: Optional[torch.Generator] = None) -> torch.Tensor:
    """``E[(||grad D(x_hat)||_2 - 1)^2]`` on random interpolates, one epsilon per sample."""
    real, fake = _as5d(real), _as5d(fake)
    eps = torch.rand((real.shape[0], 1, 1, 1, 1), generator=rng, dtype=real.dtype,
                     device=real.device)
    # the penalty needs d D / d x_hat even when called under no_grad
    outer = torch.is_grad_enabled()
    with torch.enable_grad():
        x_hat = (eps * real + (1 - eps) * fake).detach().requires_grad_(True)
        score = _per_sample_mean(D(x_hat)).sum()
        if score.requires_grad:
            (grad,) = torch.autograd.grad(score, x_hat, create_graph=outer,
                                          allow_unused=True)
        else:
            grad = None
    if grad is None:
        grad = torch.zeros_like(x_hat)
    norms = grad.reshape(grad.shape[0], -1).norm(dim=1)
    return ((norms - 1) ** 2).mean()


def critic_terms(D: Critic, real: torch.Tensor, fake: torch.Tensor, lambda_gp: float = 10.0,
                 rng: Optional[torch.Generator] = None) -> dict[str, torch.Tensor]:
    _same_shape(real, fake)
    real, fake = _as5d(real), _as5d(fake.detach())
    wasserstein = _per_sample_mean(D(fake)).mean() - _per_sample_mean(D(real)).mean()
    penalty = gradient_penalty(D, real, fake, rng)
    return {
        "wasserstein": wasserstein,
        "penalty": penalty,
        "total": wasserstein + lambda_gp * penalty,
    }


def critic_loss(D: Critic, real: torch.Tensor, fake: torch.Tensor, lambda_gp: float = 10.0,
                rng: Optional[torch.Generator] = None) -> torch.Tensor:
    """WGAN-GP critic objective, minimized by the critic.

    ``mean D(fake) - mean D(real) + lambda_gp * penalty``; ``fake`` is
    detached so no gradient reaches the generator.
    """
    return critic_terms(D, real, fake, lambda_gp, rng)["total"]


def generator_adv_loss(D: Critic, fake: torch.Tensor) -> torch.Tensor:
    return -_per_sample_mean(D(_as5d(fake))).mean()


def generator_terms(D: Critic, gen: torch.Tensor, target: torch.Tensor,
                    weights: LossWeights = LossWeights(),
                    filter_spec: GaussianFilterSpec = GaussianFilterSpec()) -> dict[str, torch.Tensor]:
    _same_shape(gen, target)
    adv = generator_adv_loss(D, gen)
    mse = mse_loss(gen, target)
    lp = lowpass_loss(gen, target, filter_spec)
    return {
        "adv": adv,
        "mse": mse,
        "lowpass": lp,
        "total": adv + weights.alpha * mse + weights.beta * lp,
    }


def total_generator_loss(D: Critic, gen: torch.Tensor, target: torch.Tensor,
                         weights: LossWeights = LossWeights(),
                         filter_spec: GaussianFilterSpec = GaussianFilterSpec()) -> torch.Tensor:
    return generator_terms(D, gen, target, weights, filter_spec)["total"]
