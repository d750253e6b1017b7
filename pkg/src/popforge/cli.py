"""Command-line entry point.

Subcommands map onto experiment modes; ``--config`` points at a
``key = value`` file and the remaining flags override it.  Worker
parallelism inside population training is capped by the POPFORGE_THREADS
environment variable.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import ConfigError, ExperimentConfig, config_from_file, config_help, validate_config
from .experiments import run_experiment, summarize_dirs

_COMMANDS = {
    "train-single": ("single", "train independent single agents over the seed list"),
    "train-pbt": ("pbt", "train one population per seed"),
    "sweep-popsize": ("sweep", "population-size sweep (pure-Adam populations)"),
    "grid-search": ("grid", "hyperparameter grid search for one optimizer"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="popforge",
        description="Mixed-optimizer population training for TD3 agents.",
        epilog=config_help(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in _COMMANDS.items():
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", type=Path, help="configuration file")
        cmd.add_argument("--seed", type=int, help="override: run this single seed")
        cmd.add_argument("--out", help="override: output directory")
        cmd.add_argument(
            "--step-adjusted",
            action="store_true",
            help="override: runtime-normalized gradient schedule",
        )
    summ = sub.add_parser("summarize", help="aggregate result.json files into a summary table")
    summ.add_argument("dirs", nargs="+", help="run directories to scan")
    summ.add_argument("--baseline", default="", help="baseline label for percent deltas")
    summ.add_argument("--out", help="directory for summary.csv / summary.png")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "summarize":
            out = Path(args.out) if args.out else None
            summarize_dirs([Path(d) for d in args.dirs], baseline=args.baseline, out_dir=out)
            return 0
        mode, _ = _COMMANDS[args.command]
        if args.config is not None:
            config = config_from_file(args.config)
        else:
            config = ExperimentConfig()
        config.mode = mode
        if args.seed is not None:
            config.seeds = (args.seed,)
        if args.out is not None:
            config.out = args.out
        if args.step_adjusted:
            config.step_adjusted = True
        validate_config(config)
        out_root = run_experiment(config)
        print(f"artifacts written to {out_root}")
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
