"""
Command-Line Application
Subcommands: curves | toy-train | stats | capacity | shard-bench | gradcheck | ablate
"""

import argparse
import dataclasses
import logging
from pathlib import Path
from typing import Optional, Sequence

from src.core.config import AppConfig, RunConfig, load_run_config
from src.core.exceptions import EXIT_NUMERICAL, EXIT_OK, ArcLabException, ConfigurationError
from src.core.logger import add_sidecar_log, logger, remove_sidecar_log, set_level
from src.domain.models import MARGIN_PRESETS, LossKind
from src.services.experiment_service import (
    ABLATION_ROWS,
    DEFAULT_CURVE_PRESETS,
    REFERENCE_SHAPE,
    ExperimentService,
)
from src.services.gradcheck_service import GRADCHECK_KINDS, GradcheckSizes

DEFAULT_CAPACITY_DIMS = (2, 4, 8, 16, 32, 64, 128, 256, 512)
DEFAULT_CAPACITY_COUNTS = (10, 100, 1000, 10000)
SIDECAR_LOG = "run.log"


class _Parser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors become ConfigurationError (exit 1)"""

    def error(self, message):
        raise ConfigurationError(message)


def _count(text: str) -> int:
    """Integer flag that also accepts forms like 1e4"""
    value = float(text)
    if not value.is_integer():
        raise argparse.ArgumentTypeError(f"expected an integer, got {text}")
    return int(value)


def _ablation_row(text: str):
    kind, sep, preset = text.partition(":")
    if not sep or kind not in {k.value for k in LossKind} or preset.lower() not in MARGIN_PRESETS:
        raise argparse.ArgumentTypeError(f"expected LOSS_KIND:PRESET, got {text}")
    return kind, preset.lower()


def build_parser() -> argparse.ArgumentParser:
    """Create the argument parser with every subcommand"""
    parser = _Parser(prog="arc-lab", description="Additive angular margin loss laboratory")
    parser.add_argument("--verbose", action="store_true", help="Log at DEBUG level")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    curves = sub.add_parser("curves", help="Target logit curves or decision boundaries")
    curves.add_argument("--presets", nargs="+", default=list(DEFAULT_CURVE_PRESETS),
                        choices=sorted(MARGIN_PRESETS))
    curves.add_argument("--kind", choices=("logit", "boundary"), default="logit")
    curves.add_argument("--start", type=float, default=None, help="First angle in degrees")
    curves.add_argument("--stop", type=float, default=None, help="Last angle in degrees")
    curves.add_argument("--step", type=float, default=1.0, help="Grid step in degrees")
    curves.add_argument("--out", type=Path)

    train = sub.add_parser("toy-train", help="Train the toy net and write checkpoint and reports")
    train.add_argument("--config", type=Path, required=True)
    train.add_argument("--iters", type=_count)
    train.add_argument("--seed", type=int)
    train.add_argument("--out", type=Path)

    stats = sub.add_parser("stats", help="Angle statistics of a checkpoint on the held-out split")
    stats.add_argument("--checkpoint", type=Path, required=True)
    stats.add_argument("--config", type=Path, required=True)
    stats.add_argument("--bins", type=int, default=180)
    stats.add_argument("--n-neg", type=_count, default=None)
    stats.add_argument("--out", type=Path)

    capacity = sub.add_parser("capacity", help="Expected nearest-centre separation")
    capacity.add_argument("--d", nargs="+", type=_count, default=list(DEFAULT_CAPACITY_DIMS))
    capacity.add_argument("--n", nargs="+", type=_count, default=list(DEFAULT_CAPACITY_COUNTS))
    capacity.add_argument("--mc", action="store_true", help="Add Monte-Carlo and Poisson columns")
    capacity.add_argument("--trials", type=int, default=20)
    capacity.add_argument("--seed", type=int, default=0)
    capacity.add_argument("--out", type=Path)

    shard = sub.add_parser("shard-bench", help="Sharded head equivalence and cost table")
    shard.add_argument("--k", nargs="+", type=int, default=[1, 2, 3, 8])
    shard.add_argument("--N", type=int, default=8, help="Batch size of the equivalence instance")
    shard.add_argument("--d", type=int, default=16, help="Dimension of the equivalence instance")
    shard.add_argument("--n", type=int, default=40, help="Classes of the equivalence instance")
    shard.add_argument("--reference-shape", nargs=3, type=_count, default=list(REFERENCE_SHAPE),
                       metavar=("N", "D", "CLASSES"), help="Shape for the cost rows")
    shard.add_argument("--flop-rate", type=float, default=1e13)
    shard.add_argument("--bandwidth", type=float, default=1e10)
    shard.add_argument("--seed", type=int, default=0)
    shard.add_argument("--out", type=Path)

    grad = sub.add_parser("gradcheck", help="Finite-difference check of every loss gradient")
    grad.add_argument("--seed", type=int, default=0)
    grad.add_argument("--instances", type=int, default=20)
    grad.add_argument("--rows", type=int, default=4)
    grad.add_argument("--dim", type=int, default=4)
    grad.add_argument("--classes", type=int, default=4)
    grad.add_argument("--perturb", choices=GRADCHECK_KINDS, help="Corrupt one analytic gradient")
    grad.add_argument("--out", type=Path)

    ablate = sub.add_parser("ablate", help="Train one model per loss/margin row and compare")
    ablate.add_argument("--config", type=Path, required=True)
    ablate.add_argument("--rows", nargs="+", type=_ablation_row, default=None,
                        help="LOSS_KIND:PRESET pairs, e.g. combined:arcface")
    ablate.add_argument("--iters", type=_count)
    ablate.add_argument("--seed", type=int)
    ablate.add_argument("--out", type=Path)
    return parser


def _with_overrides(run_config: RunConfig, args: argparse.Namespace) -> RunConfig:
    changes = {}
    if getattr(args, "iters", None) is not None:
        changes["total_iters"] = args.iters
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if not changes:
        return run_config
    try:
        train = dataclasses.replace(run_config.train, **changes)
    except ValueError as e:
        raise ConfigurationError(f"Invalid override: {e}") from e
    return dataclasses.replace(run_config, train=train)


def _output_dir(args: argparse.Namespace, app_config: AppConfig, run_config: Optional[RunConfig]) -> Path:
    if args.out is not None:
        return args.out
    if run_config is not None and run_config.report.output_dir:
        return Path(run_config.report.output_dir)
    return app_config.output_dir


def _dispatch(args: argparse.Namespace, service: ExperimentService, run_config: Optional[RunConfig],
              out_dir: Path) -> int:
    command = args.command
    if command == "curves":
        print(service.curves(args.presets, args.kind, args.start, args.stop, args.step, out_dir))
    elif command == "toy-train":
        for name, path in service.toy_train(run_config, args.config, out_dir).items():
            print(f"{name}: {path}")
    elif command == "stats":
        for name, path in service.stats(args.checkpoint, run_config, out_dir, args.bins, args.n_neg).items():
            print(f"{name}: {path}")
    elif command == "capacity":
        print(service.capacity(args.d, args.n, args.mc, args.trials, args.seed, out_dir))
    elif command == "shard-bench":
        path, verdicts = service.shard_bench(args.k, args.N, args.d, args.n, tuple(args.reference_shape),
                                             args.seed, args.flop_rate, args.bandwidth, out_dir)
        for line in verdicts:
            print(line)
        print(path)
        if any("FAIL" in line for line in verdicts):
            return EXIT_NUMERICAL
    elif command == "gradcheck":
        sizes = GradcheckSizes(n_rows=args.rows, dim=args.dim, n_classes=args.classes)
        path, passed = service.gradcheck(args.seed, sizes, args.instances, args.perturb, out_dir)
        print(path.read_text(encoding="utf-8"), end="")
        if not passed:
            return EXIT_NUMERICAL
    elif command == "ablate":
        print(service.ablate(run_config, args.rows or ABLATION_ROWS, out_dir))
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Run one subcommand

    Args:
        argv: Arguments without the program name; defaults to sys.argv

    Returns:
        Process exit code: 0 success, 1 usage/config, 2 numerical failure, 3 I/O
    """
    handler = None
    try:
        args = build_parser().parse_args(argv)
        app_config = AppConfig.from_env()
        set_level(logger, logging.DEBUG if args.verbose else app_config.log_level)

        run_config = None
        if getattr(args, "config", None) is not None:
            run_config = _with_overrides(load_run_config(args.config), args)
        if args.command == "stats" and not args.checkpoint.is_file():
            raise ConfigurationError(f"Checkpoint {args.checkpoint} does not exist")

        out_dir = _output_dir(args, app_config, run_config)
        handler = add_sidecar_log(logger, out_dir / SIDECAR_LOG)
        logger.info(f"arc-lab {args.command} -> {out_dir}")
        return _dispatch(args, ExperimentService(app_config), run_config, out_dir)
    except ArcLabException as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    finally:
        if handler is not None:
            remove_sidecar_log(logger, handler)

