"""Command line entry point: ``python -m src.cli <command> [--config FILE] ...``."""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from src.common import setup_logging
from src.config import ExperimentConfig, describe_config, dump_config, load_config, parse_value, preset_config, with_overrides
from src.errors import ConfigError, MissingArtifactError
from src.evaluation.experiment import STAGE_FUNCTIONS, run_experiment, run_paths, run_stage

STAGE_HELP = {
    "gen-data": "Simulate training and test sequences.",
    "train-vae": "Train the grid representation model.",
    "encode": "Encode both splits into latent code sequences.",
    "train-predictor": "Train the stochastic and deterministic predictors.",
    "train-refiner": "Train the diffusion refiner.",
    "eval": "Score every variant and write metrics, summary and grid dumps.",
    "baseline": "Score the fixed-frame baseline on the test split only.",
}


def _add_config_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="Config file (key = value lines).")
    parser.add_argument("--preset", default="desk", help="Preset used when no config file is given.")
    parser.add_argument("--run-dir", help="Override run_dir.")
    parser.add_argument("--seed", type=int, help="Override seed.")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE", help="Override any config key.")


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else preset_config(args.preset)
    changes: dict[str, object] = {}
    for item in args.overrides:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"bad override '{item}' (expected key=value)")
        changes[key.strip()] = parse_value(key.strip(), raw) if key.strip() in cfg.__dataclass_fields__ else raw
    if args.run_dir:
        changes["run_dir"] = args.run_dir
    if args.seed is not None:
        changes["seed"] = args.seed
    return with_overrides(cfg, **changes) if changes else cfg


def _print_written(paths: list[Path]) -> None:
    for path in paths:
        print(f"wrote {path}")


def report(run_dir: str | Path) -> list[str]:
    """Per-variant, per-step mean psi as printable lines."""
    from src.db import init_db
    from src.duckdb import fetch_step_means

    init_db(run_dir)
    lines = []
    for variant, points in fetch_step_means().items():
        values = " ".join(f"{p['value']:.3f}" for p in points)
        lines.append(f"{variant:<14} {values}")
    return lines


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ogm-forecast", description="Stochastic occupancy-grid forecasting experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in STAGE_HELP.items():
        _add_config_args(sub.add_parser(name, help=help_text, description=help_text))

    run_parser = sub.add_parser("run", help="Run every stage, resuming from existing artifacts.")
    _add_config_args(run_parser)
    run_parser.add_argument("--force", action="store_true", help="Rerun stages even when their artifacts exist.")

    report_parser = sub.add_parser("report", help="Print per-variant, per-step IS from metrics.csv.")
    _add_config_args(report_parser)

    serve_parser = sub.add_parser("serve", help="Browse a run directory in the results viewer.")
    _add_config_args(serve_parser)
    serve_parser.add_argument("--host", default="127.0.0.1")
    serve_parser.add_argument("--port", type=int, default=8000)

    config_parser = sub.add_parser("config", help="Describe or write configuration files.")
    _add_config_args(config_parser)
    config_parser.add_argument("--describe", action="store_true", help="List every key with its default and doc.")
    config_parser.add_argument("--dump", help="Write the resolved config to this path.")
    return parser


def run(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "config" and args.describe:
        print("\n".join(describe_config()))
        return 0

    cfg = resolve_config(args)
    if args.command == "config":
        if args.dump:
            print(f"wrote {dump_config(cfg, args.dump)}")
        else:
            print("\n".join(f"{k} = {v}" for k, v in vars(cfg).items()))
        return 0
    if args.command == "report":
        print("\n".join(report(cfg.run_dir)))
        return 0
    if args.command == "serve":
        import uvicorn

        os.environ["OGM_RUN_DIR"] = cfg.run_dir
        uvicorn.run("src.app:app", host=args.host, port=args.port)
        return 0

    setup_logging(run_paths(cfg).logs, args.command)
    if args.command == "run":
        _print_written(run_experiment(cfg, force=args.force))
    elif args.command in STAGE_FUNCTIONS:
        _print_written(run_stage(args.command, cfg))
    return 0


def main() -> None:
    try:
        code = run()
    except (ConfigError, MissingArtifactError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = 2
    sys.exit(code)


if __name__ == "__main__":
    main()
