"""Synthetic paired signal / anatomical-prior volumes built from ellipsoids.

The signal ("HR ASL") and prior ("T1") share label maps, so their edges
coincide while per-region intensities differ. In ``partial_overlap`` mode
some ellipsoids are painted into the prior only, which lets a run measure
how much prior-only structure leaks into the super-resolved signal.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import ConfigError
from .volume import Volume3D, downsample, scaled_shape

MIN_PHANTOM_AXIS = 16


class ContrastMode(str, enum.Enum):
    SHARED = "shared_structure"
    PARTIAL = "partial_overlap"


class NoiseKind(str, enum.Enum):
    GAUSSIAN = "gaussian"
    RICIAN = "rician"


@dataclass(frozen=True)
class PhantomSpec:
    shape: tuple[int, int, int] = (64, 48, 48)
    seed: int = 0
    n_ellipsoids: int = 8
    contrast_mode: ContrastMode = ContrastMode.SHARED
    noise_sigma: float = 0.0
    noise_kind: NoiseKind = NoiseKind.GAUSSIAN
    downsample_factor: tuple[float, float, float] = (2.0, 2.0, 1.0)
    prior_only_fraction: float = 0.25
    spacing: tuple[float, float, float] = (1.875, 1.875, 2.5)

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "shape", tuple(int(s) for s in self.shape))
        set_(self, "downsample_factor", tuple(float(f) for f in self.downsample_factor))
        set_(self, "spacing", tuple(float(s) for s in self.spacing))
        set_(self, "contrast_mode", ContrastMode(self.contrast_mode))
        set_(self, "noise_kind", NoiseKind(self.noise_kind))
        if len(self.shape) != 3 or min(self.shape) < MIN_PHANTOM_AXIS:
            raise ConfigError(
                f"phantom shape must have 3 axes of at least {MIN_PHANTOM_AXIS}, got {self.shape}"
            )
        if self.n_ellipsoids < 0:
            raise ConfigError("phantom n_ellipsoids must be >= 0")
        if self.noise_sigma < 0:
            raise ConfigError(f"phantom noise_sigma must be >= 0, got {self.noise_sigma}")
        if len(self.downsample_factor) != 3 or min(self.downsample_factor) < 1:
            raise ConfigError(f"downsample factor must be >= 1 per axis, got {self.downsample_factor}")
        if not 0 <= self.prior_only_fraction <= 1:
            raise ConfigError("prior_only_fraction must lie in [0, 1]")


def _ellipsoid_mask(grid, center, radii, rot: np.ndarray) -> np.ndarray:
    # rotate the offsets into the ellipsoid frame, then test the quadric
    offs = np.stack([g - c for g, c in zip(grid, center)], axis=-1)
    local = offs @ rot
    return np.sum((local / radii) ** 2, axis=-1) <= 1.0


def _distinct_levels(rng, count: int, lo: float, hi: float) -> np.ndarray:
    """``count`` distinct intensities drawn from an evenly spaced ladder."""
    ladder = np.linspace(lo, hi, max(count, 2) * 4)
    return rng.choice(ladder, size=count, replace=False)


def make_phantom(spec: PhantomSpec = PhantomSpec()):
    """Return ``(hr_asl, t1)`` on the same grid, intensities in [0, 1]."""
    rng = np.random.default_rng(spec.seed)
    axes = [np.linspace(-1.0, 1.0, n) for n in spec.shape]
    grid = np.meshgrid(*axes, indexing="ij")
    asl_label = np.zeros(spec.shape, dtype=np.int32)
    t1_label = np.zeros(spec.shape, dtype=np.int32)

    n = spec.n_ellipsoids
    prior_only = np.zeros(n, dtype=bool)
    if spec.contrast_mode is ContrastMode.PARTIAL and n > 0:
        k = int(round(spec.prior_only_fraction * n))
        prior_only[rng.choice(n, size=k, replace=False)] = True

    for i in range(n):
        center = rng.uniform(-0.45, 0.45, size=3)
        radii = rng.uniform(0.15, 0.5, size=3)
        rot = Rotation.random(random_state=rng).as_matrix()
        inside = _ellipsoid_mask(grid, center, radii, rot)
        t1_label[inside] = i + 1
        if not prior_only[i]:
            asl_label[inside] = i + 1

    asl_values = np.concatenate([[0.0], rng.uniform(0.1, 1.0, size=n)])
    t1_values = _distinct_levels(rng, n + 1, 0.1, 1.0)
    hr = Volume3D(asl_values[asl_label], spec.spacing)
    t1 = Volume3D(t1_values[t1_label], spec.spacing)
    return hr, t1


def add_noise(v: Volume3D, sigma: float, rng: np.random.Generator,
              kind: NoiseKind | str = NoiseKind.GAUSSIAN) -> Volume3D:
    if sigma == 0:
        return v
    kind = NoiseKind(kind)
    n1 = rng.normal(0.0, sigma, size=v.shape)
    if kind is NoiseKind.GAUSSIAN:
        return v.with_data(v.data + n1)
    n2 = rng.normal(0.0, sigma, size=v.shape)
    return v.with_data(np.sqrt((v.data + n1) ** 2 + n2 ** 2))


def degrade(hr: Volume3D, factor: float | Sequence[float] = (2, 2, 1), noise_sigma: float = 0.0,
            rng: Optional[np.random.Generator] = None,
            noise_kind: NoiseKind | str = NoiseKind.GAUSSIAN) -> Volume3D:
    """Anti-aliased downsample by ``factor`` per axis, then i.i.d. noise."""
    if np.isscalar(factor):
        factor = (factor,) * 3
    if min(factor) < 1:
        raise ConfigError(f"degrade factor must be >= 1 per axis, got {factor}")
    if noise_sigma < 0:
        raise ConfigError(f"noise_sigma must be >= 0, got {noise_sigma}")
    lr = downsample(hr, scaled_shape(hr.shape, factor))
    if noise_sigma > 0:
        rng = rng if rng is not None else np.random.default_rng()
        lr = add_noise(lr, noise_sigma, rng, noise_kind)
    return lr


def make_triple(spec: PhantomSpec = PhantomSpec()):
    """``(hr_asl, t1, lr_asl)``; the low-resolution noise stream is seeded from ``spec.seed``."""
    hr, t1 = make_phantom(spec)
    rng = np.random.default_rng([spec.seed, 1])
    lr = degrade(hr, spec.downsample_factor, spec.noise_sigma, rng, spec.noise_kind)
    return hr, t1, lr
