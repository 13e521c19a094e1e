"""Command line: ``aslgan {train,superres,evaluate,phantom,baseline}``.

Every command reads an optional YAML config (``--config``), applies
``--set section.key=value`` overrides and command flags (flags win), and
writes the resolved configuration to ``<out>/effective_config.yaml``.

Exit codes: 0 ok, 2 config, 3 io, 4 geometry, 5 numeric.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .config import RunConfig, apply_override, dump, load_tree, set_value
from .errors import ASLGANError, ConfigError
from .metrics import BASELINES, baseline_upsample, run_comparison
from .phantom import make_triple
from .superres import SRRequest, super_resolve
from .trainer import load_trained, train_pyramid
from .volume import load_volume, save_volume

log = logging.getLogger("aslgan")

EFFECTIVE_CONFIG = "effective_config.yaml"
EXTENSIONS = {"raw": ".raw", "nifti": ".nii.gz"}


def _require_file(value: Optional[str], field: str) -> Path:
    if not value:
        raise ConfigError(f"{field} is required")
    path = Path(value)
    if not path.exists():
        raise ConfigError(f"{field}: file not found: {path}")
    return path


def _out_dir(config: RunConfig) -> Path:
    if not config.paths.out:
        raise ConfigError("paths.out is required (use --out)")
    out = Path(config.paths.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _parse_shape(value) -> tuple[int, int, int]:
    if isinstance(value, str):
        value = [v for v in value.replace("x", ",").split(",") if v.strip()]
    try:
        shape = tuple(int(v) for v in value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"cannot read a shape from {value!r}") from exc
    if len(shape) != 3:
        raise ConfigError(f"shape needs 3 axes, got {shape}")
    return shape


def _parse_target(value):
    if isinstance(value, str) and value in ("match-t1", "match-prior"):
        return value
    return _parse_shape(value)


def cmd_train(config: RunConfig) -> int:
    asl_path = _require_file(config.paths.asl_lr, "paths.asl_lr")
    t1_path = _require_file(config.paths.t1, "paths.t1")
    out = _out_dir(config)
    dump(config, out / EFFECTIVE_CONFIG)
    x, a = load_volume(asl_path), load_volume(t1_path)
    trained, _ = train_pyramid(
        x, a, config.pyramid, config.train, config.loss, config.filter,
        config.generator, config.discriminator, out_dir=out,
        header={"config": config.resolved()},
    )
    log.info("trained %d scales; checkpoints in %s", len(trained.generators), out)
    return 0


def cmd_superres(config: RunConfig, checkpoint_dir=None) -> int:
    asl_path = _require_file(config.paths.asl_lr, "paths.asl_lr")
    t1_path = _require_file(config.paths.t1, "paths.t1")
    out = _out_dir(config)
    ckpt = Path(checkpoint_dir or config.superres.checkpoints or out)
    dump(config, out / EFFECTIVE_CONFIG)
    trained = load_trained(ckpt)
    target = _parse_target(config.superres.target)
    sr = super_resolve(SRRequest(trained, load_volume(asl_path), load_volume(t1_path), target))
    dest = Path(config.superres.output)
    dest = dest if dest.is_absolute() else out / dest
    save_volume(sr, dest)
    log.info("wrote %s shape=%s spacing=%s", dest, sr.shape, sr.spacing)
    return 0


def cmd_evaluate(config: RunConfig) -> int:
    opts = config.evaluate
    x_path = _require_file(opts.x_lr or config.paths.asl_lr, "evaluate.x_lr")
    if not opts.references:
        raise ConfigError("evaluate.references is empty; give at least one NAME=PATH reference")
    refs = {name: load_volume(_require_file(p, f"evaluate.references.{name}"))
            for name, p in opts.references.items()}
    outputs = {name: load_volume(_require_file(p, f"evaluate.outputs.{name}"))
               for name, p in opts.outputs.items()}
    out = _out_dir(config)
    dump(config, out / EFFECTIVE_CONFIG)
    report = run_comparison(load_volume(x_path), refs, outputs, list(opts.methods),
                            opts.window, opts.k1, opts.k2, opts.masked)
    report.write_json(out / "metrics.json")
    (out / "metrics.csv").write_text(report.to_csv())
    table = report.to_table()
    (out / "metrics.txt").write_text(table + "\n")
    print(table)
    return 0


def cmd_phantom(config: RunConfig) -> int:
    spec = config.phantom_spec()
    fmt = config.phantom.format
    if fmt not in EXTENSIONS:
        raise ConfigError(f"phantom.format must be one of {sorted(EXTENSIONS)}, got {fmt!r}")
    out = _out_dir(config)
    dump(config, out / EFFECTIVE_CONFIG)
    hr, t1, lr = make_triple(spec)
    ext = EXTENSIONS[fmt]
    files = {"hr_asl": f"hr_asl{ext}", "t1": f"t1{ext}", "lr_asl": f"lr_asl{ext}"}
    for key, vol in zip(files, (hr, t1, lr)):
        save_volume(vol, out / files[key])
    manifest = {
        "spec": config.resolved()["phantom"]["spec"] or {},
        "resolved_spec": {k: (v.value if hasattr(v, "value") else v)
                          for k, v in vars(spec).items()},
        "seed": spec.seed,
        "files": files,
        "shapes": {"hr_asl": hr.shape, "t1": t1.shape, "lr_asl": lr.shape},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=list) + "\n")
    log.info("phantom written to %s (lr shape %s)", out, lr.shape)
    return 0


def cmd_baseline(config: RunConfig, methods: Sequence[str] = BASELINES) -> int:
    x = load_volume(_require_file(config.paths.asl_lr, "paths.asl_lr"))
    target = _parse_target(config.superres.target)
    if isinstance(target, str):
        target = load_volume(_require_file(config.paths.t1, "paths.t1")).shape
    out = _out_dir(config)
    dump(config, out / EFFECTIVE_CONFIG)
    for method in methods:
        if method not in BASELINES:
            raise ConfigError(f"unknown baseline method {method!r}; choose from {BASELINES}")
        save_volume(baseline_upsample(x, target, method), out / f"baseline_{method}.nii.gz")
    return 0


# -- argument parsing --------------------------------------------------------

def _pairs(values: Optional[list[str]], flag: str) -> dict:
    out = {}
    for item in values or []:
        if "=" not in item:
            raise ConfigError(f"{flag} expects NAME=PATH, got {item!r}")
        name, path = item.split("=", 1)
        out[name] = path
    return out


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory (paths.out)")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override any config value (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="aslgan", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="multi-scale training")
    p.add_argument("--asl", help="low-resolution signal volume (paths.asl_lr)")
    p.add_argument("--t1", help="registered anatomical prior (paths.t1)")
    p.add_argument("--epochs", type=int, help="train.epochs_per_scale")

    p = sub.add_parser("superres", parents=[common], help="super-resolution generation")
    p.add_argument("--asl")
    p.add_argument("--t1")
    p.add_argument("--checkpoints", help="checkpoint directory (defaults to --out)")
    p.add_argument("--target", help="'match-t1' or X,Y,Z")
    p.add_argument("--output", help="output file name, relative to --out")

    p = sub.add_parser("evaluate", parents=[common], help="PSNR/SSIM comparison report")
    p.add_argument("--x-lr", help="low-resolution input the baselines interpolate")
    p.add_argument("--reference", action="append", metavar="NAME=PATH")
    p.add_argument("--prediction", action="append", metavar="NAME=PATH")
    p.add_argument("--methods", help="comma-separated method list")
    p.add_argument("--masked", action="store_true", default=None)

    p = sub.add_parser("phantom", parents=[common], help="write a synthetic phantom triple")
    p.add_argument("--shape")
    p.add_argument("--factor", help="downsample factor per axis, e.g. 2,2,1")
    p.add_argument("--noise-sigma", type=float)
    p.add_argument("--n-ellipsoids", type=int)
    p.add_argument("--mode", choices=["shared_structure", "partial_overlap"])
    p.add_argument("--format", choices=sorted(EXTENSIONS))

    p = sub.add_parser("baseline", parents=[common], help="interpolation baselines")
    p.add_argument("--asl")
    p.add_argument("--t1")
    p.add_argument("--target", help="'match-t1' or X,Y,Z")
    p.add_argument("--method", action="append", choices=list(BASELINES))
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    tree = load_tree(args.config) if args.config else {}
    for assignment in args.set:
        apply_override(tree, assignment)
    flags = {
        "paths.out": args.out,
        "train.seed": args.seed,
        "paths.asl_lr": getattr(args, "asl", None),
        "paths.t1": getattr(args, "t1", None),
        "train.epochs_per_scale": getattr(args, "epochs", None),
        "superres.checkpoints": getattr(args, "checkpoints", None),
        "superres.output": getattr(args, "output", None),
        "evaluate.x_lr": getattr(args, "x_lr", None),
        "evaluate.masked": getattr(args, "masked", None),
        "phantom.spec.noise_sigma": getattr(args, "noise_sigma", None),
        "phantom.spec.n_ellipsoids": getattr(args, "n_ellipsoids", None),
        "phantom.spec.contrast_mode": getattr(args, "mode", None),
        "phantom.format": getattr(args, "format", None),
    }
    if args.command == "phantom" and args.seed is not None:
        flags["phantom.spec.seed"] = args.seed
    if getattr(args, "target", None):
        flags["superres.target"] = args.target
    if getattr(args, "shape", None):
        flags["phantom.spec.shape"] = list(_parse_shape(args.shape))
    if getattr(args, "factor", None):
        flags["phantom.spec.downsample_factor"] = [float(f) for f in args.factor.split(",")]
    if getattr(args, "reference", None):
        flags["evaluate.references"] = _pairs(args.reference, "--reference")
    if getattr(args, "prediction", None):
        flags["evaluate.outputs"] = _pairs(args.prediction, "--prediction")
    if getattr(args, "methods", None):
        flags["evaluate.methods"] = [m.strip() for m in args.methods.split(",") if m.strip()]
    for key, value in flags.items():
        if value is not None:
            set_value(tree, key, value)
    return RunConfig.from_dict(tree)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        config = resolve_config(args)
        if args.command == "train":
            return cmd_train(config)
        if args.command == "superres":
            return cmd_superres(config)
        if args.command == "evaluate":
            return cmd_evaluate(config)
        if args.command == "phantom":
            return cmd_phantom(config)
        return cmd_baseline(config, args.method or BASELINES)
    except ASLGANError as exc:
        print(f"error [{exc.category}]: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
