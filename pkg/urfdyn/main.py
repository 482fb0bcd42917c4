"""
Command-line entry point for urfdyn.

    urfdyn <command> [--config PATH] [--out DIR] [--seed N] [--jobs N] [--verbose]

main() parses arguments, resolves the experiment configuration (flags beat
environment, environment beats the config file, the file beats defaults),
dispatches to the handler registered for the subcommand and maps package
errors onto exit codes:

    0  success
    2  configuration, dimension or storage error
    3  numerical failure (non-finite values, divergence, failed postconditions)

The error message from the failing module is printed verbatim.

Referenced in pyproject.toml as the console script entry point:
[project.scripts] urfdyn = "urfdyn.main:main"
"""

import argparse
from collections.abc import Callable
from pathlib import Path
from typing import Any

from rich.markup import escape

from .commands import COMMANDS, get_help_text
from .config import ExperimentConfig, get_int_setting, load_experiment_config
from .console import configure_logging, console
from .errors import ConfigError, DimensionError, NumericalError
from .handlers import cmd_fit, cmd_generate, cmd_predict, cmd_sweep, cmd_worstcase
from .utils import get_version

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def build_parser() -> argparse.ArgumentParser:
    """Top-level parser with one subparser per registered command."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="experiment config JSON or a previous manifest.json")
    common.add_argument("--out", type=Path, help="output directory (overrides output_dir)")
    common.add_argument("--seed", type=int, help="global seed (overrides seed)")
    common.add_argument("--jobs", type=int, help="parallel sweep cells (default: URFDYN_JOBS or 1)")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(
        prog="urfdyn",
        description="Learn uncertainty-aware random feature dynamics and bound worst-case trajectory costs.",
    )
    parser.add_argument("--version", action="version", version=f"urfdyn {get_version()}")
    subparsers = parser.add_subparsers(dest="command")
    for cmd in COMMANDS:
        subparsers.add_parser(
            cmd["name"], parents=[common], help=cmd["description"], description=cmd["detailed"]
        )
    return parser


def _overrides(args: argparse.Namespace) -> dict[str, Any]:
    overrides: dict[str, Any] = {}
    if args.out is not None:
        overrides["output_dir"] = str(args.out)
    if args.seed is not None:
        overrides["seed"] = args.seed
    return overrides


def _jobs(args: argparse.Namespace) -> int:
    jobs = args.jobs if args.jobs is not None else get_int_setting("URFDYN_JOBS", 1)
    if jobs < 1:
        raise ConfigError(f"jobs: must be >= 1, got {jobs}")
    return jobs


def main(argv: list[str] | None = None) -> int:
    """Run one urfdyn command and return its exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        console.print(get_help_text())
        return EXIT_CONFIG

    configure_logging(args.verbose)
    try:
        config = load_experiment_config(args.config, _overrides(args))
        jobs = _jobs(args)
        handlers: dict[str, Callable[[ExperimentConfig], list[Path]]] = {
            "generate": cmd_generate,
            "fit": cmd_fit,
            "predict": cmd_predict,
            "worstcase": cmd_worstcase,
            "sweep": lambda cfg: cmd_sweep(cfg, jobs=jobs),
        }
        handlers[args.command](config)
    except (ConfigError, DimensionError) as e:
        console.print(f"[red]Error: {escape(str(e))}[/red]", highlight=False)
        return EXIT_CONFIG
    except NumericalError as e:
        console.print(f"[red]Numerical error: {escape(str(e))}[/red]", highlight=False)
        return EXIT_NUMERICAL
    except KeyboardInterrupt:
        console.print("[yellow]Interrupted[/yellow]")
        return 130
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
