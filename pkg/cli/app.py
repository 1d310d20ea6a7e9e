#!/usr/bin/env python3
"""
turbdip command line.

Usage: python -m cli.app <restore|metrics|simulate|selftest> [options]

Every option except --config has a config-file key: the flag name
upper-cased with hyphens as underscores (--block-size <-> BLOCK_SIZE).
A --config file is read in .env syntax; flags given on the command line
win over file values, file values win over built-in defaults.
"""
import argparse
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

from dotenv import dotenv_values, load_dotenv

from cli.commands import cmd_metrics, cmd_restore, cmd_simulate
from cli.selftest import cmd_selftest
from engine.errors import EXIT_USAGE, ConfigError, TurbDipError
from engine.generator import HourglassConfig
from engine.mosaic import MosaicGrid
from engine.optimize import EsConfig, OptimizerConfig
from engine.pipeline import PipelineConfig
from utils.settings import get_settings
from utils.turbsim import TurbulenceParams

logger = logging.getLogger(__name__)

TRUE_VALUES = {"1", "true", "yes", "on"}
FALSE_VALUES = {"0", "false", "no", "off", ""}


class UsageParser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors exit with the usage exit code"""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _bool(text: str) -> bool:
    value = str(text).strip().lower()
    if value in TRUE_VALUES:
        return True
    if value in FALSE_VALUES:
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class Option:
    flag: str
    type: Callable[[str], Any]
    default: Any
    help: str
    commands: Sequence[str]
    short: Optional[str] = None

    @property
    def dest(self) -> str:
        return self.flag.lstrip("-").replace("-", "_")

    @property
    def key(self) -> str:
        return self.dest.upper()

    @property
    def is_flag(self) -> bool:
        return self.type is _bool


RESTORE = ("restore",)
ALL = ("restore", "metrics", "simulate", "selftest")

OPTIONS: List[Option] = [
    # I/O
    Option("--input", str, None, "input frames: directory or glob", ("restore", "metrics", "simulate")),
    Option("--output", str, None, "output directory", ("restore", "metrics", "simulate")),
    Option("--masks", str, None, "background masks (>=128 = background), one file or one per frame",
           ("restore", "metrics")),
    Option("--reference", str, None, "clean reference frames for PSNR/SSIM", ("restore", "metrics")),
    Option("--format", str, "png8", "output frame format: png8 or pgm8", ("restore", "simulate")),
    Option("--max-frames", int, None, "process only the first N frames", ("restore", "metrics")),
    Option("--yt-slice", int, None, "write the rows-by-time slice at this column", ("metrics",)),
    Option("--trace", _bool, False, "write traces/block_XXXX.csv per block", RESTORE),
    Option("--checkpoints", _bool, False, "write checkpoints/block_XXXX.ckpt per block", RESTORE),
    # pipeline
    Option("--block-size", int, 5, "frames per temporal block T", RESTORE),
    Option("--stride", int, None, "frames between block starts (default: block size)", RESTORE),
    Option("--grid", MosaicGrid.parse, None, "mosaic grid GYxGX (default: most square factorisation)", RESTORE),
    Option("--warm-copy-block1", _bool, False, "initialise block 1 as a copy of block 0", RESTORE),
    # optimiser and early stopping
    Option("--max-epoch", int, 200, "iteration cap per block", RESTORE),
    Option("--lambda", float, 0.1, "TV regularisation weight", RESTORE),
    Option("--lr", float, 0.01, "Adam learning rate", RESTORE),
    Option("--tv-reduction", str, "sum", "TV normalisation: sum (plain TV) or mean (TV per pixel)", RESTORE),
    Option("--patience", int, 50, "iterations without a new variance minimum before stopping", RESTORE),
    Option("--patience-start", int, 50, "iteration at which minimum tracking begins", RESTORE),
    Option("--alpha", float, 0.1, "EMA weight of the newest windowed variance", RESTORE),
    Option("--es-window", int, 25, "outputs in the moving-variance window", RESTORE),
    # generator
    Option("--scales", int, 3, "hourglass down/up levels", RESTORE),
    Option("--channels", int, 32, "hourglass feature channels", RESTORE),
    Option("--skip-channels", int, 4, "skip branch channels (0 disables skips)", RESTORE),
    Option("--latent-channels", int, 16, "latent input channels", RESTORE),
    # simulator
    Option("--n-frames", int, 20, "frames to synthesise", ("simulate",)),
    Option("--height", int, 64, "test scene height when no --input", ("simulate",)),
    Option("--width", int, 64, "test scene width when no --input", ("simulate",)),
    Option("--tilt-strength", float, 2.0, "max tilt displacement in pixels", ("simulate",)),
    Option("--tilt-smoothness", float, 8.0, "Gaussian sigma smoothing the tilt field", ("simulate",)),
    Option("--blur-sigma", float, 0.7, "Gaussian PSF sigma", ("simulate",)),
    Option("--noise-sigma", float, 0.02, "additive noise std on the [0,1] scale", ("simulate",)),
    Option("--temporal-correlation", float, 0.5, "AR(1) coefficient between tilt fields", ("simulate",)),
    # common
    Option("--seed", int, 0, "master seed", ALL),
    Option("--verbose", _bool, False, "debug logging", ALL, short="-v"),
    Option("--quiet", _bool, False, "warnings and errors only", ALL, short="-q"),
]


COMMANDS = {
    "restore": cmd_restore,
    "metrics": cmd_metrics,
    "simulate": cmd_simulate,
    "selftest": cmd_selftest,
}


def options_for(command: str) -> List[Option]:
    return [opt for opt in OPTIONS if command in opt.commands]


@dataclass
class CliConfig:
    command: str
    values: Dict[str, Any] = field(default_factory=dict)
    config_file: Optional[str] = None
    pipeline: Optional[PipelineConfig] = None
    turbulence: Optional[TurbulenceParams] = None

    @property
    def input_path(self) -> Optional[Path]:
        return Path(self.values["input"]) if self.values.get("input") else None

    @property
    def output_path(self) -> Optional[Path]:
        return Path(self.values["output"]) if self.values.get("output") else None


def build_parser() -> UsageParser:
    parser = UsageParser(
        prog="turbdip",
        description="Zero-shot turbulence mitigation with an untrained generator",
    )
    subparsers = parser.add_subparsers(dest="command", required=True, metavar="command")
    helps = {
        "restore": "restore a frame sequence",
        "metrics": "background variance and reference metrics",
        "simulate": "synthesise a turbulent sequence with ground truth",
        "selftest": "gradient, shuffle, early-stopping and metric checks",
    }
    for command, text in helps.items():
        sub = subparsers.add_parser(command, help=text, description=text)
        sub.add_argument("--config", help="dotenv-style key/value file (not itself a config key)")
        for opt in options_for(command):
            names = [opt.short, opt.flag] if opt.short else [opt.flag]
            default_text = "" if opt.default is None else f", default {opt.default}"
            help_text = f"{opt.help} [config: {opt.key}{default_text}]"
            if opt.is_flag:
                sub.add_argument(*names, dest=opt.dest, action="store_true", default=None, help=help_text)
            else:
                sub.add_argument(*names, dest=opt.dest, type=opt.type, default=None, help=help_text)
    return parser


def load_config_file(path: str, command: str) -> Dict[str, Any]:
    """Typed values from a --config file; unknown keys are rejected"""
    if not Path(path).is_file():
        raise ConfigError(f"config file not found: {path}")
    by_key = {opt.key: opt for opt in options_for(command)}
    values: Dict[str, Any] = {}
    for key, raw in dotenv_values(path).items():
        opt = by_key.get(key.upper())
        if opt is None:
            raise ConfigError(f"unknown config key {key!r} for {command} in {path}")
        try:
            values[opt.dest] = opt.type(raw if raw is not None else "")
        except ValueError as e:
            raise ConfigError(f"bad value for {key} in {path}: {e}") from e
    return values


def _pipeline_config(v: Dict[str, Any]) -> PipelineConfig:
    cfg = PipelineConfig(
        block_size=v["block_size"],
        stride=v["stride"],
        grid=v["grid"],
        gen_cfg=HourglassConfig(
            scales=v["scales"],
            channels=v["channels"],
            skip_channels=v["skip_channels"],
            latent_channels=v["latent_channels"],
        ),
        opt_cfg=OptimizerConfig(
            lam=v["lambda"],
            max_epoch=v["max_epoch"],
            learning_rate=v["lr"],
            tv_reduction=v["tv_reduction"],
        ),
        es_cfg=EsConfig(
            patience=v["patience"],
            patience_start=v["patience_start"],
            alpha=v["alpha"],
            window=v["es_window"],
        ),
        seed=v["seed"],
        warm_copy_block1=v["warm_copy_block1"],
    )
    return cfg.validate()


def _check_common(command: str, v: Dict[str, Any]):
    if v["seed"] < 0:
        raise ConfigError(f"seed must be >= 0, got {v['seed']}")
    if v.get("max_frames") is not None and v["max_frames"] < 1:
        raise ConfigError(f"max frames must be >= 1, got {v['max_frames']}")
    if v.get("format") is not None and v["format"] not in ("png8", "pgm8"):
        raise ConfigError(f"format must be png8 or pgm8, got {v['format']!r}")
    if command in ("restore", "metrics") and not v.get("input"):
        raise ConfigError(f"{command} needs --input")
    if command in ("restore", "simulate") and not v.get("output"):
        raise ConfigError(f"{command} needs --output")
    if command == "metrics" and not (v.get("masks") or v.get("reference") or v.get("yt_slice") is not None):
        raise ConfigError("metrics needs --masks, --reference or --yt-slice")
    if command == "metrics" and v.get("yt_slice") is not None and not v.get("output"):
        raise ConfigError("--yt-slice needs --output")
    if command == "simulate" and (v["n_frames"] < 1 or v["height"] < 1 or v["width"] < 1):
        raise ConfigError("n-frames, height and width must be >= 1")
    if v["verbose"] and v["quiet"]:
        raise ConfigError("--verbose and --quiet are mutually exclusive")


def parse_args(argv: Optional[Sequence[str]] = None) -> CliConfig:
    """
    Parse and validate a command line.

    Raises:
        ConfigError: a value fails its owning type's validation
        SystemExit: argparse usage error (exit code 1)
    """
    args = build_parser().parse_args(argv)
    command = args.command
    file_values = load_config_file(args.config, command) if args.config else {}

    values: Dict[str, Any] = {}
    for opt in options_for(command):
        given = getattr(args, opt.dest)
        if given is not None:
            values[opt.dest] = given
        elif opt.dest in file_values:
            values[opt.dest] = file_values[opt.dest]
        else:
            values[opt.dest] = opt.default

    _check_common(command, values)
    cfg = CliConfig(command=command, values=values, config_file=args.config)
    if command == "restore":
        cfg.pipeline = _pipeline_config(values)
    elif command == "simulate":
        cfg.turbulence = TurbulenceParams(
            tilt_strength=values["tilt_strength"],
            tilt_smoothness=values["tilt_smoothness"],
            blur_sigma=values["blur_sigma"],
            noise_sigma=values["noise_sigma"],
            temporal_correlation=values["temporal_correlation"],
        ).validate()
    return cfg


def run_subcommand(cfg: CliConfig) -> int:
    return COMMANDS[cfg.command](cfg)


def _configure_logging(cfg: Optional[CliConfig], default_level: str):
    level = default_level
    if cfg is not None and cfg.values.get("verbose"):
        level = "DEBUG"
    elif cfg is not None and cfg.values.get("quiet"):
        level = "WARNING"
    logging.basicConfig(
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    logging.getLogger().setLevel(getattr(logging, level, logging.INFO))


def main(argv: Optional[Sequence[str]] = None) -> int:
    load_dotenv()
    cfg = None
    try:
        settings = get_settings()
        cfg = parse_args(argv)
        _configure_logging(cfg, settings.log_level)
        settings.apply()
        return run_subcommand(cfg)
    except TurbDipError as e:
        if cfg is None:
            _configure_logging(None, "INFO")
        verbose = bool(cfg is not None and cfg.values.get("verbose"))
        logger.error(f"{e.__class__.__name__}: {e}", exc_info=verbose)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
