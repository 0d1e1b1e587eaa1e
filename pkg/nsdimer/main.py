"""Command-line entry point for the modulated open dimer simulations.

Usage:
    python -m nsdimer.main meanfield-sweep [--config run.json] [--set u_grid.step=0.01]
    python -m nsdimer.main husimi --set N=250 --set model.U=0.1125 --workers 8
    python -m nsdimer.main floquet --set N=50 --set N_list=[10,20,30,40,50]

Exit codes: 0 success, 2 usage error, 3 numerical or output-integrity failure.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import ValidationError

from nsdimer.commands import bagel_diameter, floquet, husimi, meanfield_sweep, quantum_bifurcation, trajectories
from nsdimer.config import settings
from nsdimer.errors import DimensionMismatchError, NumericalError, OutputIntegrityError, UsageError
from nsdimer.storage.models import RunConfig

logger = logging.getLogger(__name__)

COMMANDS = {
    module.COMMAND: module.run
    for module in (meanfield_sweep, quantum_bifurcation, husimi, trajectories, floquet, bagel_diameter)
}

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERICAL = 3


# --- Config assembly ---

def _parse_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_override(job: Dict[str, Any], assignment: str):
    """Set ``dotted.path=value`` inside the job block; values are JSON when they parse."""
    path, sep, raw = assignment.partition("=")
    if not sep or not path:
        raise UsageError(f"override {assignment!r} is not of the form key.path=value")
    keys = path.split(".")
    node = job
    for key in keys[:-1]:
        child = node.get(key)
        if child is None:
            child = node[key] = {}
        elif not isinstance(child, dict):
            raise UsageError(f"override {assignment!r}: {key} is not a parameter block")
        node = child
    node[keys[-1]] = _parse_value(raw)


def build_config(args: argparse.Namespace) -> RunConfig:
    data: Dict[str, Any] = {}
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc

    job = data.setdefault("job", {})
    file_command = job.setdefault("command", args.command)
    if file_command != args.command:
        raise UsageError(f"config file is for {file_command!r}, not {args.command!r}")
    for assignment in args.set or []:
        apply_override(job, assignment)

    # flags win over file values
    if args.seed is not None:
        data["seed"] = args.seed
    if args.workers is not None:
        data["workers"] = args.workers
    if args.out is not None:
        data["output_dir"] = args.out
    if args.large:
        data["large"] = True
    return RunConfig.model_validate(data)


# --- Argument parsing ---

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run config")
    common.add_argument("--seed", type=int, help="master seed for trajectory streams")
    common.add_argument("--workers", type=int, help="parallel worker processes")
    common.add_argument("--out", type=Path, help="output directory (default: NSDIMER_OUTPUT_DIR or ./output)")
    common.add_argument("--large", action="store_true", help="acknowledge a full-scale run")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a job field, repeatable")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(prog="nsdimer", description="Modulated open Bose-Hubbard dimer simulations")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(message)s",
    )

    try:
        config = build_config(args)
        base_dir = config.output_dir or settings.output_dir
        manifest = COMMANDS[config.command](config, base_dir)
    except (UsageError, DimensionMismatchError, ValidationError) as exc:
        logger.error("%s", exc)
        return EXIT_USAGE
    except NumericalError as exc:
        logger.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL
    except OutputIntegrityError as exc:
        logger.error("output integrity failure: %s", exc)
        return EXIT_NUMERICAL

    logger.info("%s finished in %.1f s with %d outputs", manifest.command, manifest.wall_clock_seconds, len(manifest.outputs))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
