import logging

import numpy as np
import pytest
import torch

from aslgan.errors import ConfigError
from aslgan.networks import GeneratorSpec, build_generator
from aslgan.pyramid import PyramidConfig
from aslgan.superres import SRRequest, output_grid, super_resolve
from aslgan.trainer import TrainedPyramid
from aslgan.volume import Volume3D, normalize, resample

SPEC = GeneratorSpec(base_width=4, zero_init_output=False)


def lr_volume(shape=(16, 12, 12), spacing=(3.75, 3.75, 2.5), seed=0):
    rng = np.random.default_rng(seed)
    return Volume3D(rng.uniform(10, 60, size=shape), spacing=spacing, origin=(-30, -20, 5))


def prior_for(x, shape):
    spacing = tuple(n * s / t for n, s, t in zip(x.shape, x.spacing, shape))
    rng = np.random.default_rng(1)
    return Volume3D(rng.uniform(0, 1000, size=shape), spacing=spacing, origin=x.origin)


def trained_with(G, x, a, r=2.0):
    return TrainedPyramid([G, G], PyramidConfig(r=r, num_scales=2), [(8, 6, 6), x.shape],
                          normalize(x)[1], normalize(a)[1], seed=0, spacing=x.spacing)


def test_identity_generator_gives_linear_upsample():
    x = lr_volume()
    a = prior_for(x, (32, 24, 24))
    G = build_generator(GeneratorSpec(base_width=4), seed=0, use_residual=True)
    out = super_resolve(SRRequest(trained_with(G, x, a), x, a, (32, 24, 24)))
    expected = resample(x, (32, 24, 24), "linear")
    assert np.max(np.abs(out.data - expected.data)) <= 1e-5 * np.abs(expected.data).max()


def test_explicit_target_spacing_and_origin():
    x = lr_volume(shape=(64, 48, 48))
    a = prior_for(x, (128, 96, 48))
    G = build_generator(GeneratorSpec(base_width=4), seed=0, use_residual=True)
    out = super_resolve(SRRequest(trained_with(G, x, a), x, a, (128, 96, 48)))
    assert out.shape == (128, 96, 48)
    assert out.spacing == (1.875, 1.875, 2.5)
    assert out.origin == x.origin
    extent = np.array(out.shape) * np.array(out.spacing)
    assert np.all(np.abs(extent - np.array(x.extent)) <= np.array(out.spacing))


def test_match_prior_adopts_prior_grid():
    x = lr_volume()
    a = Volume3D(np.ones((40, 30, 36)), spacing=(1.5, 1.5, 0.8), origin=(1, 2, 3))
    shape, spacing, origin = output_grid(x, a, "match-prior")
    assert (shape, spacing, origin) == ((40, 30, 36), (1.5, 1.5, 0.8), (1, 2, 3))
    assert output_grid(x, a, "match-t1") == (shape, spacing, origin)


@pytest.mark.parametrize("target", [(16, 12, 12), (17, 13, 29), (31, 12, 40)])
def test_arbitrary_zoom(target):
    x = lr_volume()
    a = prior_for(x, target)
    G = build_generator(SPEC, seed=2, use_residual=True)
    out = super_resolve(SRRequest(trained_with(G, x, a), x, a, target))
    assert out.shape == target
    assert np.all(np.isfinite(out.data))


def test_target_smaller_than_input():
    x = lr_volume()
    G = build_generator(SPEC)
    with pytest.raises(ConfigError, match="y: 10 < 12"):
        super_resolve(SRRequest(trained_with(G, x, x), x, x, (16, 10, 12)))


def test_unknown_target_keyword():
    x = lr_volume()
    with pytest.raises(ConfigError):
        output_grid(x, x, "match-everything")


def test_repeated_calls_bit_identical_and_rng_free():
    x = lr_volume()
    a = prior_for(x, (24, 20, 18))
    G = build_generator(SPEC, seed=4, use_residual=True)
    req = SRRequest(trained_with(G, x, a), x, a, (24, 20, 18))
    torch.manual_seed(0)
    first = super_resolve(req)
    state = torch.get_rng_state()
    second = super_resolve(req)
    assert torch.equal(state, torch.get_rng_state())
    assert np.array_equal(first.data, second.data)


def test_generator_not_mutated():
    x = lr_volume()
    G = build_generator(SPEC, seed=4, use_residual=True)
    before = {k: v.clone() for k, v in G.state_dict().items()}
    super_resolve(SRRequest(trained_with(G, x, x), x, x, (20, 16, 16)))
    assert all(torch.equal(before[k], v) for k, v in G.state_dict().items())


def test_large_zoom_warns(caplog):
    x = lr_volume(shape=(8, 8, 8))
    a = prior_for(x, (40, 8, 8))
    G = build_generator(SPEC, use_residual=True)
    with caplog.at_level(logging.WARNING, logger="aslgan.superres"):
        super_resolve(SRRequest(trained_with(G, x, a), x, a, (40, 8, 8)))
    assert "exceeds the trained refinement ratio" in caplog.text


def test_incomplete_pyramid():
    x = lr_volume()
    tp = trained_with(build_generator(SPEC), x, x)
    tp.generators.pop()
    with pytest.raises(ConfigError, match="incomplete"):
        super_resolve(SRRequest(tp, x, x, x.shape))
