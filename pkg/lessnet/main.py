"""Command-line entry point: ``lessnet <subcommand> [flags]``."""

import argparse
import logging
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import ValidationError

from lessnet import __version__
from lessnet.core import metrics
from lessnet.core.errors import ConfigError, LessNetError, ShapeError
from lessnet.core.logging_config import setup_logging
from lessnet.domain.config import (
    BaselineConfig,
    LossConfig,
    ModelConfig,
    PyramidConfig,
    SynthConfig,
    TrainConfig,
)
from lessnet.domain.evaluation import evaluate_samples
from lessnet.domain.experiments import (
    diffeomorphism_check,
    model_size_scan,
    pooling_level_ablation,
    pooling_type_ablation,
    profile_scan,
    redundancy_experiment,
)
from lessnet.domain.models import EncoderDecoder, LessNet, RegistrationModel
from lessnet.domain.synth import generate_dataset, generate_paired_dataset
from lessnet.domain.trainer import train
from lessnet.domain.warp import exponentiate_displacement, identity_array, warp
from lessnet.io.dataset import load_dataset, load_split, write_dataset
from lessnet.io.reports import write_eval_report, write_experiment_table, write_train_log
from lessnet.io.tensor_io import load_checkpoint, read_tensor, save_checkpoint, write_tensor
from lessnet.settings import settings

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

# Regularisation weights used when --lambda is not given
DEFAULT_LAMBDA = {"mse": 0.01, "ncc": 5.0}
DEFAULT_DIFFEO_LAMBDA = 2.0

_TRUE = {"true", "1", "yes", "on"}
_FALSE = {"false", "0", "no", "off"}


def _bool(value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in _TRUE:
        return True
    if lowered in _FALSE:
        return False
    raise argparse.ArgumentTypeError(f"expected true or false, got {value!r}")


def _extents(value: str) -> tuple[int, ...]:
    try:
        extents = tuple(int(part) for part in value.lower().split("x"))
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected extents like 64x64 or 32x32x32, got {value!r}") from e
    if len(extents) not in (2, 3) or any(n < 1 for n in extents):
        raise argparse.ArgumentTypeError(f"expected 2 or 3 positive extents, got {value!r}")
    return extents


def _int_list(value: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in value.split(",") if part.strip())
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {value!r}") from e


def _str_list(value: str) -> tuple[str, ...]:
    return tuple(part.strip() for part in value.split(",") if part.strip())


class RunConfig:
    """Flat ``key=value`` file whose keys are the long flags of one subcommand.

    Keys may use dashes or underscores; ``#`` starts a comment. Values are
    turned into flags placed before the command-line arguments, so flags given
    on the command line win.
    """

    def __init__(self, values: dict[str, str], source: Path):
        self.values = values
        self.source = source

    @classmethod
    def from_file(cls, path: Path) -> "RunConfig":
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            text = path.read_text()
        except OSError as e:
            raise ConfigError(f"cannot read config file {path}: {e.strerror or e}") from e
        values: dict[str, str] = {}
        for number, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep or not key.strip():
                raise ConfigError(f"{path}:{number}: expected key=value, got {raw.strip()!r}")
            values[key.strip().replace("_", "-")] = value.strip()
        return cls(values, path)

    def to_argv(self, command: str, switches: set[str], options: set[str]) -> list[str]:
        """Flags for ``command``.

        Raises:
            ConfigError: If a key is not a flag of the subcommand
        """
        argv: list[str] = []
        for key, value in self.values.items():
            if key in switches:
                try:
                    enabled = _bool(value)
                except argparse.ArgumentTypeError as e:
                    raise ConfigError(f"{self.source}: {key}: {e}") from e
                if enabled:
                    argv.append(f"--{key}")
            elif key in options:
                argv += [f"--{key}", value]
            else:
                raise ConfigError(f"{self.source}: unknown key {key!r} for '{command}'")
        return argv


class _Options:
    """Records each subcommand's long flags so config keys can be checked."""

    def __init__(self) -> None:
        self.switches: dict[str, set[str]] = {}
        self.options: dict[str, set[str]] = {}

    def add(self, command: str, parser: argparse.ArgumentParser, flag: str, **kwargs: Any) -> None:
        parser.add_argument(flag, **kwargs)
        bucket = self.switches if kwargs.get("action") == "store_true" else self.options
        bucket.setdefault(command, set()).add(flag.lstrip("-"))


def build_parser() -> tuple[argparse.ArgumentParser, _Options]:
    parser = argparse.ArgumentParser(prog="lessnet", description="Decoder-only deformable image registration")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=None, help="Override LESSNET_LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)
    opts = _Options()

    def command(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, help="key=value file with defaults for these flags")
        return p

    def model_flags(name: str, p: argparse.ArgumentParser) -> None:
        opts.add(name, p, "--dim", type=int, choices=[2, 3], default=2)
        opts.add(name, p, "--channels", type=int, default=8, help="Width multiplier C")
        opts.add(name, p, "--convs-per-block", type=int, default=1)
        opts.add(name, p, "--pool-modes", type=_str_list, default=("min", "avg", "max"))
        opts.add(name, p, "--pool-levels", type=_int_list, default=(2, 4, 8))
        opts.add(name, p, "--use-original", type=_bool, default=True)
        opts.add(name, p, "--steps", type=int, default=7, help="Scaling-and-squaring steps")

    def optim_flags(name: str, p: argparse.ArgumentParser) -> None:
        opts.add(name, p, "--data", type=Path, required=True)
        opts.add(name, p, "--out", type=Path, required=True)
        opts.add(name, p, "--loss", choices=["mse", "ncc"], default="mse")
        opts.add(name, p, "--lambda", dest="lam", type=float, default=None)
        opts.add(name, p, "--ncc-window", type=int, default=9)
        opts.add(name, p, "--ncc-mode", choices=["local", "global"], default="local")
        opts.add(name, p, "--epochs", type=int, default=20)
        opts.add(name, p, "--lr", type=float, default=1e-4)
        opts.add(name, p, "--diffeo", action="store_true")

    p = command("gen-data", "Generate a synthetic registration dataset")
    opts.add("gen-data", p, "--out", type=Path, required=True)
    opts.add("gen-data", p, "--count", type=int, required=True, help="Training samples (or subjects)")
    opts.add("gen-data", p, "--size", type=_extents, default=(64, 64))
    opts.add("gen-data", p, "--seed", type=int, required=True)
    opts.add("gen-data", p, "--sigma", type=float, default=6.0)
    opts.add("gen-data", p, "--amplitude", type=float, default=4.0)
    opts.add("gen-data", p, "--structures", type=int, default=8)
    opts.add("gen-data", p, "--val", type=int, default=None)
    opts.add("gen-data", p, "--test", type=int, default=None)
    opts.add(
        "gen-data", p, "--pairing", choices=["independent", "all_ordered", "atlas_to_subject"], default="independent"
    )

    p = command("train", "Train a registration network")
    optim_flags("train", p)
    model_flags("train", p)
    opts.add("train", p, "--seed", type=int, required=True)
    opts.add("train", p, "--model", choices=["lessnet", "baseline"], default="lessnet")
    opts.add("train", p, "--freeze", choices=["none", "encoder", "decoder_except_output"], default="none")

    p = command("register", "Register one moving image to a fixed image")
    opts.add("register", p, "--model", type=Path, required=True)
    opts.add("register", p, "--moving", type=Path, required=True)
    opts.add("register", p, "--fixed", type=Path, required=True)
    opts.add("register", p, "--out", type=Path, required=True)
    opts.add("register", p, "--diffeo", action="store_true")

    p = command("eval", "Evaluate a checkpoint on a dataset split")
    opts.add("eval", p, "--model", type=Path, required=True)
    opts.add("eval", p, "--data", type=Path, required=True)
    opts.add("eval", p, "--split", choices=["train", "val", "test"], default="test")
    opts.add("eval", p, "--out", type=Path, default=None, help="CSV path (default: next to the checkpoint)")
    opts.add("eval", p, "--diffeo", action="store_true")

    p = command("ablate", "Run an experiment protocol over several seeds")
    optim_flags("ablate", p)
    model_flags("ablate", p)
    opts.add(
        "ablate", p, "--mode", choices=["freeze", "pooling", "pooling-types", "size", "diffeo"], required=True
    )
    opts.add("ablate", p, "--seeds", type=_int_list, required=True)
    opts.add("ablate", p, "--scan-channels", type=_int_list, default=(4, 8, 16))
    opts.add("ablate", p, "--diffeo-lambda", type=float, default=DEFAULT_DIFFEO_LAMBDA)

    p = command("profile", "Parameter and mult-add counts")
    opts.add("profile", p, "--dim", type=int, choices=[2, 3], default=2)
    opts.add("profile", p, "--channels", type=_int_list, default=(8,))
    opts.add("profile", p, "--size", type=_extents, default=None)
    opts.add("profile", p, "--convs-per-block", type=int, default=1)

    return parser, opts


def _with_config(argv: list[str], opts: _Options, commands: set[str]) -> list[str]:
    """Splice flags from ``--config`` in front of the subcommand's own flags."""
    index = next((i for i, arg in enumerate(argv) if arg in commands), None)
    if index is None:
        return argv
    name = argv[index]
    rest = argv[index + 1 :]
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", type=Path)
    known, _ = pre.parse_known_args(rest)
    if known.config is None:
        return argv
    file_argv = RunConfig.from_file(known.config).to_argv(
        name, opts.switches.get(name, set()), opts.options.get(name, set())
    )
    return argv[: index + 1] + file_argv + rest


# Subcommands


def _loss_config(args: argparse.Namespace) -> LossConfig:
    lam = args.lam
    if lam is None:
        lam = DEFAULT_DIFFEO_LAMBDA if args.diffeo else DEFAULT_LAMBDA[args.loss]
    return LossConfig(similarity=args.loss, lam=lam, ncc_window=args.ncc_window, ncc_mode=args.ncc_mode)


def _model_config(args: argparse.Namespace) -> ModelConfig:
    return ModelConfig(
        rank=args.dim,
        channels=args.channels,
        convs_per_block=args.convs_per_block,
        diffeomorphic=args.diffeo,
        integration_steps=args.steps,
        pyramid=PyramidConfig(modes=args.pool_modes, levels=args.pool_levels, include_original=args.use_original),
    )


def _train_config(args: argparse.Namespace, seed: int, freeze: str = "none") -> TrainConfig:
    return TrainConfig(
        learning_rate=args.lr,
        epochs=args.epochs,
        seed=seed,
        freeze=freeze,  # type: ignore[arg-type]
        loss=_loss_config(args),
        diffeomorphic=args.diffeo,
    )


def _check_rank(model: RegistrationModel, spatial: tuple[int, ...]) -> None:
    if len(spatial) != model.rank:
        raise ShapeError(f"--dim {model.rank} does not match the {len(spatial)}D data (extents {spatial})")


def cmd_gen_data(args: argparse.Namespace) -> int:
    cfg = SynthConfig(
        extents=args.size,
        num_structures=args.structures,
        sigma=args.sigma,
        amplitude=args.amplitude,
        seed=args.seed,
    )
    if args.pairing == "independent":
        dataset = generate_dataset(cfg, args.count, args.val, args.test)
    else:
        dataset = generate_paired_dataset(cfg, args.count, args.pairing, args.val, args.test)
    write_dataset(args.out, dataset)
    print(f"train={len(dataset.train)} val={len(dataset.validation)} test={len(dataset.test)} out={args.out}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    dataset = load_dataset(args.data)
    if not dataset.train:
        raise ConfigError(f"{args.data} has no training split")
    model: RegistrationModel
    if args.model == "baseline":
        if args.diffeo:
            raise ConfigError("--diffeo is only available for the lessnet model")
        model = EncoderDecoder(BaselineConfig(rank=args.dim))
    else:
        model = LessNet(_model_config(args))
    _check_rank(model, dataset.train[0].fixed.spatial_shape)
    cfg = _train_config(args, args.seed, args.freeze)

    args.out.mkdir(parents=True, exist_ok=True)
    result = train(model, dataset, cfg)
    save_checkpoint(args.out / "best.ltc", model, result.best)
    save_checkpoint(args.out / "last.ltc", model, result.last)
    write_train_log(args.out / "train_log.csv", result.log)
    if settings.metrics_enabled:
        metrics.write_metrics(args.out / "metrics.prom")
    best = "none" if result.best_epoch is None else f"{result.best_epoch} (val_dice={result.best_dice:.4f})"
    print(f"epochs={len(result.log)} best_epoch={best} out={args.out}")
    return EXIT_OK


def cmd_register(args: argparse.Namespace) -> int:
    model, params = load_checkpoint(args.model)
    if args.diffeo and not model.diffeomorphic:
        if not isinstance(model, LessNet):
            raise ConfigError("--diffeo is only available for lessnet checkpoints")
        model = LessNet(model.config.updated(diffeomorphic=True))
    moving, fixed = read_tensor(args.moving), read_tensor(args.fixed)

    args.out.mkdir(parents=True, exist_ok=True)
    field = model.predict(params, moving, fixed)
    u = field
    if model.diffeomorphic:
        write_tensor(args.out / "velocity.ltf", field)
        u = exponentiate_displacement(field, model.integration_steps)
    warped = warp(moving, u)
    write_tensor(args.out / "warped.ltf", warped)
    write_tensor(args.out / "displacement.ltf", u)
    write_tensor(args.out / "deformation.ltf", u.data + identity_array(u.spatial_shape, u.dtype))
    print(f"max_displacement={float(np.abs(u.data).max()):.6f} out={args.out}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    model, params = load_checkpoint(args.model)
    samples = load_split(args.data, args.split)
    report = evaluate_samples(model, params, samples, diffeomorphic=True if args.diffeo else None)
    out = args.out or args.model.parent / f"eval_{args.split}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_eval_report(out, report)
    print(f"{report.summary()} out={out}")
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    dataset = load_dataset(args.data)
    if not dataset.train:
        raise ConfigError(f"{args.data} has no training split")
    spatial = dataset.train[0].fixed.spatial_shape
    cfg = _train_config(args, args.seeds[0])
    seeds = list(args.seeds)

    if args.mode == "freeze":
        if args.diffeo:
            raise ConfigError("the freeze experiment uses the baseline, which has no diffeomorphic variant")
        baseline = BaselineConfig(rank=args.dim)
        _check_rank(EncoderDecoder(baseline), spatial)
        rows = redundancy_experiment(dataset, baseline, cfg, seeds)
    else:
        model_cfg = _model_config(args)
        _check_rank(LessNet(model_cfg), spatial)
        if args.mode == "pooling":
            rows = pooling_level_ablation(dataset, model_cfg, cfg, seeds)
        elif args.mode == "pooling-types":
            rows = pooling_type_ablation(dataset, model_cfg, cfg, seeds)
        elif args.mode == "size":
            rows = model_size_scan(dataset, model_cfg, cfg, args.scan_channels, seeds)
        else:
            plain = cfg.updated(diffeomorphic=False)
            rows = diffeomorphism_check(
                dataset, model_cfg.updated(diffeomorphic=False), plain, seeds, args.diffeo_lambda
            )

    args.out.mkdir(parents=True, exist_ok=True)
    out = args.out / f"{args.mode}.csv"
    write_experiment_table(out, rows)
    for row in rows:
        print(f"{row.setting}: dice={row.dice.mean:.4f}+-{row.dice.std:.4f} fold_pct={100 * row.folding.mean:.4f}")
    print(f"out={out}")
    return EXIT_OK


def cmd_profile(args: argparse.Namespace) -> int:
    spatial = args.size or (64,) * args.dim
    if len(spatial) != args.dim:
        raise ConfigError(f"--size {spatial} does not have {args.dim} extents")
    for row in profile_scan(args.dim, args.channels, spatial, args.convs_per_block):
        print(f"channels={row.channels} params={row.params} mult_adds={row.mult_adds}")
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "register": cmd_register,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "profile": cmd_profile,
}


def main(argv: Sequence[str] | None = None) -> int:
    """Run one subcommand and return its exit code.

    0 on success, 1 on a registration/config-validation error or an unreadable or
    unwritable file, 2 on usage errors (bad flags, unknown config keys).
    """
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, opts = build_parser()
    try:
        argv = _with_config(argv, opts, set(COMMANDS))
        args = parser.parse_args(argv)
    except ConfigError as e:
        print(f"lessnet: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:
        return int(e.code) if isinstance(e.code, int) else EXIT_USAGE

    setup_logging(args.log_level)
    try:
        return COMMANDS[args.command](args)
    except ValidationError as e:
        first = e.errors()[0]
        location = ".".join(str(part) for part in first["loc"]) or "config"
        print(f"lessnet: invalid configuration: {location}: {first['msg']}", file=sys.stderr)
        return EXIT_FAILURE
    except LessNetError as e:
        logger.debug("Command failed", exc_info=True)
        print(f"lessnet: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_FAILURE
    except OSError as e:
        logger.debug("Command failed", exc_info=True)
        target = f" {e.filename}" if e.filename else ""
        print(f"lessnet: cannot access{target}: {e.strerror or e}", file=sys.stderr)
        return EXIT_FAILURE


def run() -> None:
    """Console-script entry point."""
    sys.exit(main())


if __name__ == "__main__":
    run()
