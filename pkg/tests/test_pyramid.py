import numpy as np
import pytest

from aslgan.errors import ConfigError, GeometryError
from aslgan.pyramid import PyramidConfig, auto_num_scales, build_pyramid, plan_scales
from aslgan.volume import Volume3D


def brute_force_plan(base, r, n_top):
    shapes = []
    for n in range(n_top + 1):
        k = n_top - n
        shapes.append(tuple(max(4, int(round(b / r ** k))) for b in base))
    return shapes


@pytest.mark.parametrize("base,r,count,expected", [
    ((64, 64, 64), 2.0, 3, [(16, 16, 16), (32, 32, 32), (64, 64, 64)]),
    ((64, 48, 48), 2.0, 2, [(32, 24, 24), (64, 48, 48)]),
    ((50, 50, 50), 4 / 3, 4, [(21, 21, 21), (28, 28, 28), (38, 38, 38), (50, 50, 50)]),
])
def test_plan_examples(base, r, count, expected):
    assert plan_scales(base, PyramidConfig(r=r, num_scales=count, min_extent=4)) == expected


def test_plan_matches_brute_force_on_derived_case():
    # round(50 / (4/3)**k) for k = 3..0, computed independently
    assert [round(50 / (4 / 3) ** k) for k in (3, 2, 1, 0)] == [21, 28, 38, 50]
    assert brute_force_plan((50, 50, 50), 4 / 3, 3) == plan_scales(
        (50, 50, 50), PyramidConfig(r=4 / 3, num_scales=4, min_extent=4))


def test_plan_is_monotone_and_ends_at_base():
    shapes = plan_scales((128, 96, 48), PyramidConfig())
    assert shapes[-1] == (128, 96, 48)
    for a, b in zip(shapes, shapes[1:]):
        assert all(x <= y for x, y in zip(a, b))
    assert min(shapes[0]) >= 12


def test_auto_depth_is_largest_valid():
    count = auto_num_scales((128, 96, 48), 4 / 3, 12)
    assert round(48 / (4 / 3) ** (count - 1)) >= 12
    assert round(48 / (4 / 3) ** count) < 12


def test_too_deep_names_axis():
    with pytest.raises(ConfigError, match="axis z"):
        plan_scales((64, 64, 12), PyramidConfig(r=2, num_scales=3, min_extent=4))


def test_base_below_min_extent():
    with pytest.raises(ConfigError, match="axis y"):
        plan_scales((64, 8, 64), PyramidConfig(r=2, min_extent=12))


def test_invalid_config():
    with pytest.raises(ConfigError):
        PyramidConfig(r=1.0)
    with pytest.raises(ConfigError):
        PyramidConfig(num_scales=1)


def test_constant_levels():
    x = Volume3D(np.ones((32, 24, 24)))
    a = Volume3D(np.full((32, 24, 24), 2.0))
    pyr = build_pyramid(x, a, PyramidConfig(r=2, num_scales=3, min_extent=4))
    for lvl in pyr.levels:
        np.testing.assert_allclose(lvl.x.data, 1.0, atol=1e-12)
        np.testing.assert_allclose(lvl.a.data, 2.0, atol=1e-12)


def test_level_shapes_match():
    rng = np.random.default_rng(0)
    x = Volume3D(rng.normal(size=(64, 48, 48)), spacing=(3.75, 3.75, 2.5))
    a = Volume3D(rng.normal(size=(64, 48, 48)), spacing=(3.75, 3.75, 2.5))
    pyr = build_pyramid(x, a, PyramidConfig(r=2, num_scales=2))
    assert pyr.levels[0].x.shape == pyr.levels[0].a.shape == (32, 24, 24)
    assert pyr.levels[1].x is x
    assert pyr.levels[0].x.spacing == (7.5, 7.5, 5.0)


def test_finer_prior_is_resampled_to_signal_grid():
    x = Volume3D(np.zeros((128, 96, 48)), spacing=(1.875, 1.875, 2.5))
    a = Volume3D(np.ones((224, 176, 256)), spacing=(0.9766, 0.9766, 1.0))
    pyr = build_pyramid(x, a, PyramidConfig(r=2, num_scales=2))
    assert pyr.base_a.shape == (128, 96, 48)
    assert pyr.base_a.spacing == x.spacing
    assert pyr.shapes == [(64, 48, 24), (128, 96, 48)]


def test_unregistered_prior_rejected():
    x = Volume3D(np.zeros((32, 32, 32)), spacing=(2, 2, 2))
    with pytest.raises(GeometryError):
        build_pyramid(x, Volume3D(np.zeros((32, 32, 32)), spacing=(1, 1, 1)))
    with pytest.raises(GeometryError, match="coarser"):
        build_pyramid(x, Volume3D(np.zeros((16, 32, 32))))


def test_mean_preserved_on_smooth_phantom():
    grids = np.meshgrid(*[np.linspace(-1, 1, n) for n in (48, 48, 40)], indexing="ij")
    blob = 1.0 + np.exp(-sum(g ** 2 for g in grids) / 0.3)
    x = Volume3D(blob)
    pyr = build_pyramid(x, x, PyramidConfig(r=4 / 3))
    for lvl in pyr.levels:
        assert abs(lvl.x.data.mean() - blob.mean()) <= 0.02 * blob.mean()


def test_plan_is_pure():
    cfg = PyramidConfig(r=1.5, num_scales=3, min_extent=8)
    assert plan_scales((40, 30, 20), cfg) == plan_scales((40, 30, 20), cfg)
