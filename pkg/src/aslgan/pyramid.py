"""Scale planning and the aligned (signal, prior) training pyramid."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, GeometryError
from .volume import MIN_AXIS, Shape3, Volume3D, downsample, resample

AXES = "xyz"


@dataclass(frozen=True)
class PyramidConfig:
    """Per-level zoom ``r`` and the number of levels (N + 1).

    With ``num_scales=None`` the depth is chosen as the largest N whose
    coarsest level keeps every axis at or above ``min_extent``.
    """

    r: float = 4.0 / 3.0
    num_scales: Optional[int] = None
    min_extent: int = 12

    def __post_init__(self):
        if not self.r > 1:
            raise ConfigError(f"pyramid.r must be > 1, got {self.r}")
        if self.num_scales is not None and self.num_scales < 2:
            raise ConfigError(f"pyramid.num_scales must be >= 2, got {self.num_scales}")
        if self.min_extent < MIN_AXIS:
            raise ConfigError(f"pyramid.min_extent must be >= {MIN_AXIS}, got {self.min_extent}")


def _level_shape(base_shape, r, k) -> Shape3:
    return tuple(max(MIN_AXIS, int(round(n / r ** k))) for n in base_shape)


def _raw_coarsest(base_shape, r, k):
    return [int(round(n / r ** k)) for n in base_shape]


def auto_num_scales(base_shape: Sequence[int], r: float, min_extent: int) -> int:
    n = 0
    while all(s >= min_extent for s in _raw_coarsest(base_shape, r, n + 1)):
        n += 1
    if n < 1:
        raise ConfigError(
            f"base shape {tuple(base_shape)} cannot hold two scales with r={r} "
            f"and min_extent={min_extent}"
        )
    return n + 1


def plan_scales(base_shape: Sequence[int], config: PyramidConfig) -> list[Shape3]:
    """Shapes for levels 0..N: ``round(base / r**(N - n))`` per axis."""
    base = tuple(int(s) for s in base_shape)
    for ax, s in zip(AXES, base):
        if s < config.min_extent:
            raise ConfigError(
                f"axis {ax} of base shape {base} is {s}, below min_extent={config.min_extent}"
            )
    count = config.num_scales or auto_num_scales(base, config.r, config.min_extent)
    top = count - 1
    coarsest = _raw_coarsest(base, config.r, top)
    for ax, s in zip(AXES, coarsest):
        if s < MIN_AXIS:
            raise ConfigError(
                f"axis {ax} shrinks to {s} voxels at scale 0 (minimum {MIN_AXIS}); "
                f"lower num_scales or r"
            )
        if s < config.min_extent:
            raise ConfigError(
                f"axis {ax} shrinks to {s} voxels at scale 0, below min_extent={config.min_extent}"
            )
    return [_level_shape(base, config.r, top - n) for n in range(count)]


@dataclass(frozen=True)
class PyramidLevel:
    x: Volume3D
    a: Volume3D

    @property
    def shape(self) -> Shape3:
        return self.x.shape


@dataclass(frozen=True)
class ScalePyramid:
    levels: list[PyramidLevel]
    base_x: Volume3D
    base_a: Volume3D
    config: PyramidConfig = field(default_factory=PyramidConfig)

    @property
    def shapes(self) -> list[Shape3]:
        return [lvl.shape for lvl in self.levels]

    @property
    def num_scales(self) -> int:
        return len(self.levels)

    def __getitem__(self, n: int) -> PyramidLevel:
        return self.levels[n]


def align_prior(x: Volume3D, a: Volume3D) -> Volume3D:
    """Bring the prior onto the signal's grid.

    The prior must be pre-registered. A prior on an equal or finer grid is
    linearly resampled onto ``x``'s grid; an equal-shape prior with a
    different spacing, or a coarser prior, is rejected.
    """
    if a.shape == x.shape:
        if not np.allclose(a.spacing, x.spacing, rtol=1e-4):
            raise GeometryError(
                f"prior has the signal's shape {x.shape} but spacing {a.spacing} "
                f"instead of {x.spacing}; inputs are not registered to the same grid"
            )
        return Volume3D(a.data, x.spacing, x.origin)
    coarse = [ax for ax, na, nx in zip(AXES, a.shape, x.shape) if na < nx]
    if coarse:
        raise GeometryError(
            f"prior grid {a.shape} is coarser than signal grid {x.shape} on axes {coarse}"
        )
    out = resample(a, x.shape, "linear")
    return Volume3D(out.data, x.spacing, x.origin)


def build_pyramid(x: Volume3D, a: Volume3D, config: PyramidConfig | None = None) -> ScalePyramid:
    config = config or PyramidConfig()
    a_on_x = align_prior(x, a)
    shapes = plan_scales(x.shape, config)
    levels = []
    for shape in shapes:
        if shape == x.shape:
            levels.append(PyramidLevel(x, a_on_x))
        else:
            levels.append(PyramidLevel(downsample(x, shape), downsample(a_on_x, shape)))
    for n, lvl in enumerate(levels):
        if lvl.x.shape != lvl.a.shape:
            raise GeometryError(f"level {n}: signal {lvl.x.shape} != prior {lvl.a.shape}")
    return ScalePyramid(levels, x, a_on_x, config)
