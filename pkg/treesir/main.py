import argparse
import logging
import sys
from typing import Optional, Sequence

from .config import Settings, load_settings
from .errors import ScenarioError, TreeSIRError
from .runner import run_scenario
from .scenario import load_scenario, validate

__all__ = ["main"]


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="treesir",
        description="SIR dynamics on homogeneous trees: solvers, simulator and continuum limit",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="run one scenario and write its CSV and JSON artifacts")
    run.add_argument("scenario", help="path to a scenario JSON file")
    run.add_argument("--seed", type=int, default=None, help="simulation seed (overrides the scenario)")
    run.add_argument("--threads", type=int, default=None, help="worker processes for replicas")
    run.add_argument("--out-dir", default=None, help="directory for artifacts")

    check = commands.add_parser("validate", help="check a scenario without running any solver")
    check.add_argument("scenario", help="path to a scenario JSON file")
    return parser


def _run(args: argparse.Namespace, settings: Settings) -> int:
    scenario = load_scenario(args.scenario)
    outcome = run_scenario(scenario, settings, seed=args.seed)
    for path in outcome.artifacts:
        print(path)
    return 0


def _validate(args: argparse.Namespace) -> int:
    issues = validate(args.scenario)
    for issue in issues:
        print(f"{args.scenario}: {issue}", file=sys.stderr)
    if issues:
        return 2
    print(f"{args.scenario}: ok")
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    settings = load_settings(
        threads=getattr(args, "threads", None),
        out_dir=getattr(args, "out_dir", None),
    )
    logging.basicConfig(level=settings.log_level)

    try:
        if args.command == "validate":
            return _validate(args)
        return _run(args, settings)
    except ScenarioError as exc:
        print(f"treesir: scenario error: {exc}", file=sys.stderr)
        return 2
    except TreeSIRError as exc:
        logging.debug("Run failed | scenario=%s", args.scenario, exc_info=True)
        print(f"treesir: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"treesir: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
