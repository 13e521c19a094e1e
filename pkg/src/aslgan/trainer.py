"""Progressive coarse-to-fine training of the generator/critic pyramid.

Scale 0 maps Gaussian noise plus the coarsest prior to a volume; every
finer scale refines the linearly upsampled output of the frozen scales
below it. One epoch is one generator update on the single training volume.
"""

from __future__ import annotations

import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import torch
import torch.nn.functional as F

from . import __version__
from .errors import ConfigError, GeometryError, NumericError, VolumeIOError
from .losses import GaussianFilterSpec, LossWeights, critic_terms, generator_terms
from .networks import (
    Discriminator, DiscriminatorSpec, Generator, GeneratorSpec, build_discriminator,
    build_generator, inherit_params, load_checkpoint, param_set, save_checkpoint,
)
from .pyramid import PyramidConfig, ScalePyramid, build_pyramid
from .volume import NormParams, Volume3D, normalize

log = logging.getLogger(__name__)

DEVICE_ENV = "ASLGAN_DEVICE"
MANIFEST = "pyramid.json"
LOG_NAME = "train_log.jsonl"


def default_device() -> str:
    return os.environ.get(DEVICE_ENV, "cpu")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    epochs_per_scale: int = 2000
    adam_betas: tuple[float, float] = (0.5, 0.999)
    seed: int = 0
    noise_sigma0: float = 1.0
    checkpoint_every: int = 0
    inherit_discriminator: bool = True
    log_every: int = 100
    device: str = field(default_factory=default_device)

    def __post_init__(self):
        object.__setattr__(self, "adam_betas", tuple(float(b) for b in self.adam_betas))
        if not self.lr > 0:
            raise ConfigError(f"train.lr must be > 0, got {self.lr}")
        if int(self.epochs_per_scale) < 1:
            raise ConfigError(f"train.epochs_per_scale must be >= 1, got {self.epochs_per_scale}")
        if not self.noise_sigma0 > 0:
            raise ConfigError(f"train.noise_sigma0 must be > 0, got {self.noise_sigma0}")
        if self.checkpoint_every < 0:
            raise ConfigError("train.checkpoint_every must be >= 0")


@dataclass
class TrainLog:
    """One record per (scale, epoch) plus a header echoing the run configuration."""

    header: dict = field(default_factory=dict)
    records: list[dict] = field(default_factory=list)

    def for_scale(self, n: int) -> list[dict]:
        return [r for r in self.records if r["scale"] == n]

    def column(self, key: str, scale: Optional[int] = None) -> np.ndarray:
        rows = self.records if scale is None else self.for_scale(scale)
        return np.array([r[key] for r in rows], dtype=float)

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(json.dumps({"header": self.header}) + "\n")
            for rec in self.records:
                fh.write(json.dumps(rec) + "\n")

    @classmethod
    def read(cls, path) -> "TrainLog":
        with open(path) as fh:
            lines = [json.loads(line) for line in fh if line.strip()]
        return cls(lines[0]["header"], lines[1:])


def sample_noise(shape: Sequence[int], sigma: float = 1.0,
                 rng: Optional[torch.Generator] = None, dtype=torch.float32) -> torch.Tensor:
    """I.i.d. zero-mean Gaussian voxels with standard deviation ``sigma``."""
    if not sigma > 0:
        raise ValueError(f"noise sigma must be > 0, got {sigma}")
    return sigma * torch.randn(tuple(int(s) for s in shape), generator=rng, dtype=dtype)


@dataclass
class TensorPyramid:
    """Normalized per-scale labels and priors as (1, 1, X, Y, Z) tensors."""

    x: list[torch.Tensor]
    a: list[torch.Tensor]

    @property
    def shapes(self):
        return [tuple(t.shape[2:]) for t in self.x]

    @classmethod
    def from_pyramid(cls, pyr: ScalePyramid, device="cpu", dtype=torch.float32) -> "TensorPyramid":
        def t(v: Volume3D):
            return torch.tensor(np.array(v.data), dtype=dtype, device=device)[None, None]
        return cls([t(lvl.x) for lvl in pyr.levels], [t(lvl.a) for lvl in pyr.levels])


def upsample(t: torch.Tensor, shape: Sequence[int]) -> torch.Tensor:
    """Linear (align-corners) interpolation of a (B, C, X, Y, Z) tensor."""
    if tuple(t.shape[2:]) == tuple(shape):
        return t
    return F.interpolate(t, size=tuple(shape), mode="trilinear", align_corners=True)


def forward_cascade(generators: Sequence[Generator], pyramid: Union[TensorPyramid, ScalePyramid],
                    rng: Optional[torch.Generator] = None, noise_sigma: float = 1.0) -> torch.Tensor:
    """Run scales ``0..len(generators)-1`` and return the finest output.

    ``G_0`` sees fresh noise; scale ``k`` sees the upsampled output of
    scale ``k-1``. Gradients flow only if the caller enables them.
    """
    if isinstance(pyramid, ScalePyramid):
        pyramid = TensorPyramid.from_pyramid(pyramid)
    if not generators:
        raise ValueError("need at least one generator")
    if len(generators) > len(pyramid.a):
        raise GeometryError(
            f"{len(generators)} generators but the pyramid has {len(pyramid.a)} scales"
        )
    a0 = pyramid.a[0]
    z0 = sample_noise(a0.shape, noise_sigma, rng, a0.dtype).to(a0.device)
    out = generators[0](z0, a0)
    for G, prior in zip(generators[1:], pyramid.a[1:]):
        out = G(upsample(out, prior.shape[2:]), prior)
    return out


def _scale_input(n: int, frozen: Sequence[Generator], tp: TensorPyramid,
                 rng: torch.Generator, sigma: float) -> torch.Tensor:
    if n == 0:
        return sample_noise(tp.a[0].shape, sigma, rng, tp.a[0].dtype).to(tp.a[0].device)
    with torch.no_grad():
        prev = forward_cascade(frozen, tp, rng, sigma)
    return upsample(prev, tp.shapes[n])


def init_scale_networks(n: int, gen_spec: GeneratorSpec = GeneratorSpec(),
                        disc_spec: DiscriminatorSpec = DiscriminatorSpec(), seed: int = 0,
                        inherited_G=None, inherited_D=None):
    """Fresh seeded (G_n, D_n), optionally initialized from the scale below.

    ``inherited_*`` may be modules or parameter sets.
    """
    G = build_generator(gen_spec, seed=seed * 1009 + 2 * n, use_residual=gen_spec.residual and n > 0)
    D = build_discriminator(disc_spec, seed=seed * 1009 + 2 * n + 1)
    if inherited_G is not None:
        inherit_params(G, _params(inherited_G))
    if inherited_D is not None:
        inherit_params(D, _params(inherited_D))
    return G, D


def _params(src):
    return param_set(src) if isinstance(src, torch.nn.Module) else src


def _check_finite(values: dict, n: int, epoch: int) -> None:
    for key, val in values.items():
        if not math.isfinite(val):
            raise NumericError(f"non-finite {key} loss ({val}) at scale {n}, epoch {epoch}")


def train_scale(n: int, pyramid: Union[TensorPyramid, ScalePyramid],
                lower: Sequence[Generator] = (), config: TrainConfig = TrainConfig(),
                weights: LossWeights = LossWeights(),
                filter_spec: GaussianFilterSpec = GaussianFilterSpec(),
                gen_spec: GeneratorSpec = GeneratorSpec(),
                disc_spec: DiscriminatorSpec = DiscriminatorSpec(),
                inherited_G=None, inherited_D=None,
                rng: Optional[torch.Generator] = None,
                networks=None, on_epoch=None):
    """Train the scale-``n`` pair against label ``x_n``.

    ``lower`` holds the frozen generators of scales ``0..n-1``. Returns
    ``(G_n, D_n, records)`` with ``G_n`` frozen. Pass ``networks=(G, D)``
    to train pre-built modules instead of building them here.
    """
    if isinstance(pyramid, ScalePyramid):
        pyramid = TensorPyramid.from_pyramid(pyramid, config.device)
    if len(lower) != n:
        raise ValueError(f"scale {n} needs {n} frozen lower generators, got {len(lower)}")
    if rng is None:
        rng = torch.Generator().manual_seed(config.seed)
    device = pyramid.x[n].device
    if networks is None:
        networks = init_scale_networks(n, gen_spec, disc_spec, config.seed, inherited_G, inherited_D)
    G, D = (m.to(device).train() for m in networks)
    for g in lower:
        g.eval().requires_grad_(False)

    opt_g = torch.optim.Adam(G.parameters(), lr=config.lr, betas=config.adam_betas)
    opt_d = torch.optim.Adam(D.parameters(), lr=config.lr, betas=config.adam_betas)
    label, prior = pyramid.x[n], pyramid.a[n]
    records = []
    t0 = time.perf_counter()
    for epoch in range(1, int(config.epochs_per_scale) + 1):
        inp = _scale_input(n, lower, pyramid, rng, config.noise_sigma0)
        fake = G(inp, prior)

        D.requires_grad_(True)
        for _ in range(int(weights.d_steps_per_g)):
            c = critic_terms(D, label, fake.detach(), weights.lambda_gp, rng)
            opt_d.zero_grad(set_to_none=True)
            c["total"].backward()
            opt_d.step()

        D.requires_grad_(False)
        g = generator_terms(D, fake, label, weights, filter_spec)
        opt_g.zero_grad(set_to_none=True)
        g["total"].backward()
        opt_g.step()

        rec = {
            "scale": n,
            "epoch": epoch,
            "critic": c["total"].item(),
            "wasserstein": c["wasserstein"].item(),
            "penalty": c["penalty"].item(),
            "adv": g["adv"].item(),
            "mse": g["mse"].item(),
            "lowpass": g["lowpass"].item(),
            "total": g["total"].item(),
        }
        _check_finite({k: v for k, v in rec.items() if k not in ("scale", "epoch")}, n, epoch)
        rec["wall_s"] = time.perf_counter() - t0
        records.append(rec)
        if on_epoch is not None:
            on_epoch(G, D, rec)
        if config.log_every and (epoch % config.log_every == 0 or epoch == 1):
            log.info("scale %d epoch %d/%d  critic %.4g  adv %.4g  mse %.4g  lowpass %.4g",
                     n, epoch, config.epochs_per_scale, rec["critic"], rec["adv"],
                     rec["mse"], rec["lowpass"])
    D.requires_grad_(True)
    G.eval().requires_grad_(False)
    D.eval()
    return G, D, records


@dataclass
class TrainedPyramid:
    generators: list[Generator]
    pyramid_config: PyramidConfig
    shapes: list[tuple[int, int, int]]
    asl_norm: NormParams
    prior_norm: NormParams
    seed: int
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    @property
    def finest(self) -> Generator:
        return self.generators[-1]

    def manifest(self) -> dict:
        return {
            "version": __version__,
            "num_scales": len(self.shapes),
            "shapes": [list(s) for s in self.shapes],
            "pyramid": asdict(self.pyramid_config),
            "asl_norm": self.asl_norm.to_dict(),
            "prior_norm": self.prior_norm.to_dict(),
            "seed": self.seed,
            "spacing": list(self.spacing),
            "generator_spec": asdict(self.generators[0].spec) if self.generators else None,
        }


def _write_manifest(out_dir: Path, manifest: dict) -> None:
    (out_dir / MANIFEST).write_text(json.dumps(manifest, indent=2) + "\n")


def generator_path(ckpt_dir, n: int) -> Path:
    return Path(ckpt_dir) / f"G_{n}.pt"


def discriminator_path(ckpt_dir, n: int) -> Path:
    return Path(ckpt_dir) / f"D_{n}.pt"


def load_trained(ckpt_dir) -> TrainedPyramid:
    """Reload a checkpoint directory written by :func:`train_pyramid`."""
    ckpt_dir = Path(ckpt_dir)
    mpath = ckpt_dir / MANIFEST
    if not mpath.exists():
        raise VolumeIOError(f"no {MANIFEST} in checkpoint directory {ckpt_dir}")
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise VolumeIOError(f"corrupt manifest {mpath}: {exc}") from exc
    count = int(manifest["num_scales"])
    missing = [n for n in range(count) if not generator_path(ckpt_dir, n).exists()]
    if missing:
        raise VolumeIOError(f"incomplete checkpoints in {ckpt_dir}: missing scales {missing}")
    gens = [load_checkpoint(generator_path(ckpt_dir, n))[0] for n in range(count)]
    for g in gens:
        g.requires_grad_(False)
    return TrainedPyramid(
        generators=gens,
        pyramid_config=PyramidConfig(**manifest["pyramid"]),
        shapes=[tuple(s) for s in manifest["shapes"]],
        asl_norm=NormParams.from_dict(manifest["asl_norm"]),
        prior_norm=NormParams.from_dict(manifest["prior_norm"]),
        seed=int(manifest["seed"]),
        spacing=tuple(manifest["spacing"]),
    )


def prepare_inputs(x: Volume3D, a: Volume3D, pyr_config: PyramidConfig):
    """Normalize signal and prior independently, then build the pyramid."""
    xn, x_params = normalize(x)
    an, a_params = normalize(a)
    return build_pyramid(xn, an, pyr_config), x_params, a_params


def train_pyramid(x: Volume3D, a: Volume3D, pyr_config: PyramidConfig = PyramidConfig(),
                  config: TrainConfig = TrainConfig(), weights: LossWeights = LossWeights(),
                  filter_spec: GaussianFilterSpec = GaussianFilterSpec(),
                  gen_spec: GeneratorSpec = GeneratorSpec(),
                  disc_spec: DiscriminatorSpec = DiscriminatorSpec(),
                  out_dir=None, header: Optional[dict] = None):
    """Train every scale coarse to fine; returns ``(TrainedPyramid, TrainLog)``.

    With ``out_dir`` set, ``G_n.pt``/``D_n.pt`` are written as each scale
    finishes, next to a ``pyramid.json`` manifest and the JSON-lines log.
    A failure mid-run leaves the finished scales' checkpoints in place.
    """
    pyr, x_params, a_params = prepare_inputs(x, a, pyr_config)
    tp = TensorPyramid.from_pyramid(pyr, config.device)
    rng = torch.Generator().manual_seed(int(config.seed))

    echo = {
        "pyramid": asdict(pyr_config),
        "train": asdict(config),
        "loss": asdict(weights),
        "filter": asdict(filter_spec),
        "generator": asdict(gen_spec),
        "discriminator": asdict(disc_spec),
        "shapes": [list(s) for s in pyr.shapes],
    }
    train_log = TrainLog(header={**(header or {}), "run": echo})
    trained = TrainedPyramid([], pyr_config, pyr.shapes, x_params, a_params,
                             int(config.seed), x.spacing)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        manifest = trained.manifest()
        manifest["generator_spec"] = asdict(gen_spec)
        _write_manifest(out_dir, manifest)

    prev_G = prev_D = None
    try:
        for n in range(pyr.num_scales):
            log.info("training scale %d/%d at %s", n, pyr.num_scales - 1, pyr.shapes[n])
            on_epoch = None
            if out_dir is not None and config.checkpoint_every:
                on_epoch = _partial_saver(out_dir, n, config)
            G, D, records = train_scale(
                n, tp, trained.generators, config, weights, filter_spec, gen_spec, disc_spec,
                inherited_G=prev_G,
                inherited_D=prev_D if config.inherit_discriminator else None,
                rng=rng, on_epoch=on_epoch,
            )
            train_log.records.extend(records)
            trained.generators.append(G)
            if out_dir is not None:
                save_checkpoint(generator_path(out_dir, n), G, config.seed, scale=n)
                save_checkpoint(discriminator_path(out_dir, n), D, config.seed, scale=n)
                partial = out_dir / f"G_{n}.partial.pt"
                if partial.exists():
                    partial.unlink()
            prev_G, prev_D = param_set(G), param_set(D)
    finally:
        if out_dir is not None:
            train_log.write(out_dir / LOG_NAME)
    return trained, train_log


def _partial_saver(out_dir: Path, n: int, config: TrainConfig):
    def save(G, D, rec):
        if rec["epoch"] % config.checkpoint_every == 0:
            save_checkpoint(out_dir / f"G_{n}.partial.pt", G, config.seed, scale=n,
                            epoch=rec["epoch"])
    return save
