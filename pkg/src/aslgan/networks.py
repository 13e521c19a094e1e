"""Per-scale generator (3-level 3D U-Net) and Markovian patch critic."""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, GeometryError, SpecError, VolumeIOError


@dataclass(frozen=True)
class GeneratorSpec:
    in_channels: int = 2
    out_channels: int = 1
    levels: int = 3
    base_width: int = 16
    kernel: int = 3
    slope: float = 0.2
    residual: bool = True
    zero_init_output: bool = True

    def __post_init__(self):
        if self.levels < 1 or self.base_width < 1 or self.kernel % 2 != 1:
            raise ConfigError(f"invalid generator spec: {self}")
        if self.in_channels != 2 or self.out_channels != 1:
            raise ConfigError("generator takes (signal, prior) channels and returns one channel")

    @property
    def multiple(self) -> int:
        return 2 ** (self.levels - 1)


@dataclass(frozen=True)
class DiscriminatorSpec:
    in_channels: int = 1
    layers: int = 4
    base_width: int = 16
    kernel: int = 3
    strides: tuple[int, ...] = (2, 2, 1, 1)
    slope: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "strides", tuple(int(s) for s in self.strides))
        if len(self.strides) != self.layers:
            raise ConfigError(f"discriminator needs one stride per layer, got {self.strides}")
        if self.layers < 2 or self.kernel % 2 != 1 or min(self.strides) < 1:
            raise ConfigError(f"invalid discriminator spec: {self}")

    @property
    def widths(self) -> list[int]:
        w = [self.base_width * 2 ** min(i, 1) for i in range(self.layers - 1)]
        return w + [1]

    @property
    def receptive_field(self) -> int:
        rf, jump = 1, 1
        for s in self.strides:
            rf += (self.kernel - 1) * jump
            jump *= s
        return rf

    @property
    def total_stride(self) -> int:
        return math.prod(self.strides)

    @property
    def min_input_extent(self) -> int:
        """Smallest axis that still yields a score map at least 2 cells wide."""
        return 2 * self.total_stride

    def output_extent(self, n: int) -> int:
        pad = self.kernel // 2
        for s in self.strides:
            n = (n + 2 * pad - self.kernel) // s + 1
        return n


def _conv(cin, cout, k, stride=1):
    return nn.Conv3d(cin, cout, k, stride=stride, padding=k // 2, padding_mode="replicate")


class _EncoderBlock(nn.Sequential):
    def __init__(self, cin, cout, k, slope):
        super().__init__(
            _conv(cin, cout, k), nn.InstanceNorm3d(cout, affine=True), nn.LeakyReLU(slope, inplace=True),
            _conv(cout, cout, k), nn.InstanceNorm3d(cout, affine=True), nn.LeakyReLU(slope, inplace=True),
        )


class _DecoderBlock(nn.Sequential):
    """Two convs over ``cat(skip, up)``.

    The first conv is applied to the two halves with the matching weight
    slices and summed, which equals the conv of the concatenation but never
    materializes it. ``forward`` takes a ``[skip, up]`` list and empties it
    so the caller holds no reference while the block runs; at full SR
    resolution this keeps peak memory to a few activations.
    """

    def __init__(self, cin, cout, k, slope):
        super().__init__(
            _conv(cin, cout, k), nn.LeakyReLU(slope, inplace=True),
            _conv(cout, cout, k), nn.LeakyReLU(slope, inplace=True),
        )

    def forward(self, parts: list):
        conv = self[0]
        pad = [conv.kernel_size[0] // 2] * 6
        h, start = None, 0
        while parts:
            t = parts.pop(0)
            stop = start + t.shape[1]
            y = F.conv3d(F.pad(t, pad, mode="replicate"), conv.weight[:, start:stop])
            del t
            h = y if h is None else h.add_(y)
            start = stop
        h = h + conv.bias.view(1, -1, 1, 1, 1)
        for m in list(self)[1:]:
            h = m(h)
        return h


class Generator(nn.Module):
    """U-Net mapping (signal, prior) -> refined signal.

    Inputs of any size are replicate-padded up to a multiple of
    ``2**(levels-1)`` (and at least twice that, so the bottleneck keeps
    more than one voxel for instance norm); the result is cropped back. ``use_residual``
    adds the signal channel to the network output; it is a per-scale
    switch and not part of the parameter set.
    """

    def __init__(self, spec: GeneratorSpec = GeneratorSpec(), use_residual: bool | None = None):
        super().__init__()
        self.spec = spec
        self.use_residual = spec.residual if use_residual is None else use_residual
        widths = [spec.base_width * 2 ** i for i in range(spec.levels)]
        k, slope = spec.kernel, spec.slope
        self.encoders = nn.ModuleList()
        cin = spec.in_channels
        for w in widths:
            self.encoders.append(_EncoderBlock(cin, w, k, slope))
            cin = w
        self.ups = nn.ModuleList()
        self.decoders = nn.ModuleList()
        for lo, hi in zip(reversed(widths[:-1]), reversed(widths[1:])):
            self.ups.append(nn.ConvTranspose3d(hi, lo, 2, stride=2))
            self.decoders.append(_DecoderBlock(2 * lo, lo, k, slope))
        self.head = nn.Conv3d(widths[0], spec.out_channels, 1)
        if spec.zero_init_output:
            nn.init.zeros_(self.head.weight)
            nn.init.zeros_(self.head.bias)

    def forward(self, signal: torch.Tensor, prior: torch.Tensor) -> torch.Tensor:
        """``signal`` and ``prior`` are (B, 1, X, Y, Z); returns (B, 1, X, Y, Z)."""
        if signal.shape != prior.shape:
            raise GeometryError(f"signal {tuple(signal.shape)} and prior {tuple(prior.shape)} differ")
        size = signal.shape[2:]
        m = self.spec.multiple
        extra = [max(2 * m, s + (-s) % m) - s for s in size]
        h = torch.cat([signal, prior], dim=1)
        if any(extra):
            # F.pad takes (z_lo, z_hi, y_lo, y_hi, x_lo, x_hi)
            h = F.pad(h, [p for e in reversed(extra) for p in (0, e)], mode="replicate")
        skips = []
        for i, enc in enumerate(self.encoders):
            h = enc(h)
            if i < len(self.encoders) - 1:
                skips.append(h)
                h = F.max_pool3d(h, 2)
        for up, dec in zip(self.ups, self.decoders):
            parts = [skips.pop(), up(h)]
            del h
            h = dec(parts)
        out = self.head(h)[..., : size[0], : size[1], : size[2]]
        if self.use_residual:
            out = out + signal
        return out


class Discriminator(nn.Module):
    """Fully convolutional critic; one unbounded score per receptive-field patch."""

    def __init__(self, spec: DiscriminatorSpec = DiscriminatorSpec()):
        super().__init__()
        self.spec = spec
        layers = []
        cin = spec.in_channels
        for i, (w, s) in enumerate(zip(spec.widths, spec.strides)):
            layers.append(_conv(cin, w, spec.kernel, stride=s))
            if i < spec.layers - 1:
                layers.append(nn.LeakyReLU(spec.slope))
            cin = w
        self.body = nn.Sequential(*layers)

    def forward(self, v: torch.Tensor) -> torch.Tensor:
        small = [n for n in v.shape[2:] if n < self.spec.min_input_extent]
        if small:
            raise GeometryError(
                f"critic input {tuple(v.shape[2:])} has axes below the minimum "
                f"extent {self.spec.min_input_extent}"
            )
        return self.body(v)


def _seeded(factory, seed: int):
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(int(seed))
        return factory()


def build_generator(spec: GeneratorSpec = GeneratorSpec(), seed: int = 0,
                    use_residual: bool | None = None) -> Generator:
    """Deterministic given ``seed``; the global torch RNG is left untouched."""
    return _seeded(lambda: Generator(spec, use_residual), seed)


def build_discriminator(spec: DiscriminatorSpec = DiscriminatorSpec(), seed: int = 0) -> Discriminator:
    return _seeded(lambda: Discriminator(spec), seed)


def param_set(module: nn.Module):
    """Detached snapshot of every named parameter."""
    return OrderedDict((k, v.detach().clone()) for k, v in module.state_dict().items())


def param_checksum(params: Mapping[str, torch.Tensor]) -> float:
    return float(sum(t.double().abs().sum() + t.double().sum() for t in params.values()))


def inherit_params(child: nn.Module, parent_params: Mapping[str, torch.Tensor]) -> None:
    """Copy a parent's parameters into ``child`` (deep copy, same spec required)."""
    own = child.state_dict()
    problems = []
    for name in sorted(set(own) | set(parent_params)):
        if name not in own:
            problems.append(f"{name}: not in child")
        elif name not in parent_params:
            problems.append(f"{name}: missing from parent")
        elif tuple(own[name].shape) != tuple(parent_params[name].shape):
            problems.append(
                f"{name}: child {tuple(own[name].shape)} vs parent {tuple(parent_params[name].shape)}"
            )
    if problems:
        raise SpecError("parameter sets do not match:\n  " + "\n  ".join(problems))
    with torch.no_grad():
        for name, t in own.items():
            t.copy_(parent_params[name])


# -- checkpoints -------------------------------------------------------------

def save_checkpoint(path, module: nn.Module, seed: int, **extra) -> None:
    kind = "generator" if isinstance(module, Generator) else "discriminator"
    payload = {
        "kind": kind,
        "spec": asdict(module.spec),
        "seed": int(seed),
        "params": param_set(module),
        **extra,
    }
    if kind == "generator":
        payload["use_residual"] = bool(module.use_residual)
    torch.save(payload, str(path))


def load_checkpoint(path):
    """Returns ``(module, payload)``; the module is in eval mode."""
    path = Path(path)
    if not path.exists():
        raise VolumeIOError(f"no such checkpoint: {path}")
    try:
        payload = torch.load(str(path), map_location="cpu", weights_only=True)
        kind = payload["kind"]
        if kind == "generator":
            module = Generator(GeneratorSpec(**payload["spec"]), payload["use_residual"])
        elif kind == "discriminator":
            module = Discriminator(DiscriminatorSpec(**payload["spec"]))
        else:
            raise ValueError(f"unknown checkpoint kind {kind!r}")
        inherit_params(module, payload["params"])
    except (SpecError, VolumeIOError):
        raise
    except Exception as exc:
        raise VolumeIOError(f"corrupt checkpoint {path}: {exc}") from exc
    return module.eval(), payload


def count_params(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


__all__ = [
    "GeneratorSpec", "DiscriminatorSpec", "Generator", "Discriminator",
    "build_generator", "build_discriminator", "param_set", "param_checksum",
    "inherit_params", "save_checkpoint", "load_checkpoint", "count_params",
]
