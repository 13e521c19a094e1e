"""Run configuration: one YAML tree, validated strictly, with dotted overrides.

Example::

    paths:
      asl_lr: lr.nii.gz
      t1: t1.nii.gz
      out: runs/subject01
    pyramid: {r: 2.0, num_scales: 2}
    train: {epochs_per_scale: 2000, seed: 7}
    superres: {target: match-t1}

Unknown keys anywhere are rejected. ``resolved()`` returns the full tree
with every default filled in; commands write it next to their outputs.
"""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import yaml

from .errors import ConfigError
from .losses import GaussianFilterSpec, LossWeights
from .networks import DiscriminatorSpec, GeneratorSpec
from .phantom import PhantomSpec
from .pyramid import PyramidConfig
from .trainer import TrainConfig


@dataclass
class Paths:
    asl_lr: Optional[str] = None
    t1: Optional[str] = None
    out: Optional[str] = None


@dataclass
class SuperResOptions:
    target: Union[str, list] = "match-t1"
    checkpoints: Optional[str] = None
    output: str = "sr.nii.gz"


@dataclass
class EvaluateOptions:
    x_lr: Optional[str] = None
    references: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    methods: list = field(default_factory=lambda: ["nearest", "linear", "spline", "proposed"])
    window: int = 7
    k1: float = 0.01
    k2: float = 0.03
    masked: bool = False


@dataclass
class PhantomOptions:
    spec: dict = field(default_factory=dict)
    format: str = "raw"


SECTIONS = {
    "paths": Paths,
    "pyramid": PyramidConfig,
    "generator": GeneratorSpec,
    "discriminator": DiscriminatorSpec,
    "loss": LossWeights,
    "filter": GaussianFilterSpec,
    "train": TrainConfig,
    "superres": SuperResOptions,
    "evaluate": EvaluateOptions,
    "phantom": PhantomOptions,
}


def _field_names(cls) -> set[str]:
    return {f.name for f in dataclasses.fields(cls)}


def _build(section: str, cls, values: dict):
    if not isinstance(values, dict):
        raise ConfigError(f"{section}: expected a mapping, got {type(values).__name__}")
    unknown = sorted(set(values) - _field_names(cls))
    if unknown:
        raise ConfigError(f"{section}: unknown key(s) {', '.join(unknown)}")
    try:
        return cls(**values)
    except ConfigError as exc:
        raise ConfigError(f"{section}: {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from exc


@dataclass
class RunConfig:
    paths: Paths = field(default_factory=Paths)
    pyramid: PyramidConfig = field(default_factory=PyramidConfig)
    generator: GeneratorSpec = field(default_factory=GeneratorSpec)
    discriminator: DiscriminatorSpec = field(default_factory=DiscriminatorSpec)
    loss: LossWeights = field(default_factory=LossWeights)
    filter: GaussianFilterSpec = field(default_factory=GaussianFilterSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    superres: SuperResOptions = field(default_factory=SuperResOptions)
    evaluate: EvaluateOptions = field(default_factory=EvaluateOptions)
    phantom: PhantomOptions = field(default_factory=PhantomOptions)

    @classmethod
    def from_dict(cls, tree: Optional[dict]) -> "RunConfig":
        tree = tree or {}
        if not isinstance(tree, dict):
            raise ConfigError("config root must be a mapping")
        unknown = sorted(set(tree) - set(SECTIONS))
        if unknown:
            raise ConfigError(f"unknown config section(s): {', '.join(unknown)}")
        return cls(**{name: _build(name, kind, tree.get(name) or {})
                      for name, kind in SECTIONS.items()})

    def resolved(self) -> dict:
        out = {}
        for name in SECTIONS:
            d = asdict(getattr(self, name))
            out[name] = _plain(d)
        return out

    def phantom_spec(self) -> PhantomSpec:
        return _build("phantom.spec", PhantomSpec, self.phantom.spec)


def _plain(obj: Any):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, enum.Enum):
        return obj.value
    return obj


def load_tree(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        tree = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    return tree or {}


def apply_override(tree: dict, assignment: str) -> None:
    """Apply ``section.key=value`` (value parsed as YAML) in place."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form section.key=value")
    key, raw = assignment.split("=", 1)
    parts = key.strip().split(".")
    if len(parts) < 2:
        raise ConfigError(f"override key {key!r} must name a section and a field")
    node = tree
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {key!r} descends into a non-mapping")
    node[parts[-1]] = yaml.safe_load(raw)


def set_value(tree: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = tree
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = value


def dump(config: RunConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(config.resolved(), sort_keys=False))
