"""Command-line entry point.

One subcommand per pipeline stage plus ``run`` (all stages, writes the
manifest) and ``synth`` (generate a synthetic dataset to experiment on).
Every stage command takes ``--config`` and the shared overrides
``--seed``, ``--out``, ``--mode`` and ``--jobs``.

Exit codes: 0 on success, 1 when the package raises a domain error
(bad data, failed validation, missing upstream stage), 2 on usage
errors.  Set ``DIGITRADE_LOG`` to a level name like ``INFO`` or
``DEBUG`` to see progress and warnings on stderr.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .config import ALLOCATION_MODES, load_config
from .dataset import save_dataset
from .errors import DigitradeError
from .pipeline import MANIFEST_NAME, STAGES, run, run_stage
from .synth import synth_world

__all__ = ["main"]

log = logging.getLogger("digitrade")

# Subcommand name -> pipeline stage; ``validate`` fronts the ingest stage
# because checking the inputs is what the user asks it for.
_STAGE_COMMANDS = {
    "validate": "ingest",
    "features": "features",
    "train": "train",
    "cv": "cv",
    "predict": "predict",
    "harmonize": "harmonize",
    "allocate": "allocate",
    "bounds": "bounds",
    "analyze": "analyze",
    "complexity": "complexity",
    "report": "report",
}

_STAGE_HELP = {
    "validate": "load and validate the input tables, persist the dataset",
    "features": "write the feature matrix for every revenue-bearing pair",
    "train": "fit the consumption model and feature importances",
    "cv": "cross-validate the model (one fold per country and product)",
    "predict": "predict consumption for every pair with revenue",
    "harmonize": "rescale predictions to reported revenue totals",
    "allocate": "allocate consumption to origins, extract bilateral flows",
    "bounds": "attach confidence bounds to the bilateral flows",
    "analyze": "write trade totals, balances, concentration and trends",
    "complexity": "score countries and activities on the merged trade mix",
    "report": "render the summary charts as SVG",
}


def _setup_logging() -> None:
    level = os.environ.get("DIGITRADE_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    logging.captureWarnings(True)


def _add_overrides(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="path to the INI config file")
    parser.add_argument("--seed", type=int, help="override run.seed")
    parser.add_argument("--out", help="override run.out (resolved from the cwd)")
    parser.add_argument(
        "--mode", choices=ALLOCATION_MODES, help="override run.mode"
    )
    parser.add_argument("--jobs", type=int, help="override run.jobs")


def _load(args: argparse.Namespace):
    config = load_config(args.config)
    out = os.path.abspath(args.out) if args.out else None
    return config.with_overrides(
        seed=args.seed, out=out, mode=args.mode, jobs=args.jobs
    ).validated()


def _cmd_run(args: argparse.Namespace) -> int:
    config = _load(args)
    if args.stage:
        result = run_stage(config, args.stage)
        print(f"{result.name}: {', '.join(result.outputs)} ({result.seconds:.2f}s)")
        return 0
    manifest = run(config)
    for stage in manifest.stages:
        print(f"{stage.name}: {', '.join(stage.outputs)} ({stage.seconds:.2f}s)")
    print(f"manifest: {os.path.join(config.out, MANIFEST_NAME)}")
    return 0


def _cmd_stage(args: argparse.Namespace) -> int:
    config = _load(args)
    result = run_stage(config, _STAGE_COMMANDS[args.command])
    print(f"{result.name}: {', '.join(result.outputs)} ({result.seconds:.2f}s)")
    return 0


def _cmd_synth(args: argparse.Namespace) -> int:
    first, _, last = args.years.partition(":")
    years = tuple(range(int(first), int(last or first) + 1))
    data = synth_world(
        seed=args.seed,
        n_countries=args.countries,
        n_firms=args.firms,
        n_brands=args.brands,
        n_sectors=args.sectors,
        zero_rate=args.zero_rate,
        years=years,
        observed_share=args.observed_share,
        n_hs4=args.hs4,
    )
    for path in save_dataset(data, args.out):
        print(path)
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="digitrade",
        description="Estimate bilateral trade in digital products.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run every enabled stage and write the manifest")
    _add_overrides(p_run)
    p_run.add_argument(
        "--stage",
        choices=sorted(STAGES),
        help="run only this stage (no manifest is written)",
    )
    p_run.set_defaults(handler=_cmd_run)

    for command, stage in _STAGE_COMMANDS.items():
        p = sub.add_parser(command, help=_STAGE_HELP[command])
        _add_overrides(p)
        p.set_defaults(handler=_cmd_stage)

    p_synth = sub.add_parser(
        "synth", help="generate a synthetic dataset as input CSV files"
    )
    p_synth.add_argument("--seed", type=int, required=True)
    p_synth.add_argument("--out", required=True, help="directory for the CSV files")
    p_synth.add_argument("--countries", type=int, default=30)
    p_synth.add_argument("--firms", type=int, default=60)
    p_synth.add_argument("--brands", type=int, default=100)
    p_synth.add_argument("--sectors", type=int, default=8)
    p_synth.add_argument("--zero-rate", type=float, default=0.5)
    p_synth.add_argument("--years", default="2018:2021", help="FIRST:LAST inclusive")
    p_synth.add_argument("--observed-share", type=float, default=1.0)
    p_synth.add_argument("--hs4", type=int, default=30)
    p_synth.set_defaults(handler=_cmd_synth)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    _setup_logging()
    try:
        return args.handler(args)
    except DigitradeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
