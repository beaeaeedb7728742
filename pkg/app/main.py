"""
Command-line entry point.

    python -m app.main run configs/translation.ini --seed 7 --out storage/outputs/t7
    python -m app.main selftest
    python -m app.main defect rotation --alpha 0.75 --set rotation.kind=constant

Every flag maps onto a `section.key` of the experiment config and overrides
the value from the file.
"""
import argparse
import logging
import sys
from typing import Any, Dict, List, Optional

from app.config import settings
from app.core.errors import ConfigError
from app.core.pipeline import run

logger = logging.getLogger("app")

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2
EXIT_DOMAIN = 3

EXIT_CODES = {"config": EXIT_CONFIG, "domain": EXIT_DOMAIN, "selftest": EXIT_FAILED, "internal": EXIT_FAILED}

DEFAULT_N_LIST = "16 32 64 128 256"


def _common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, help="root seed (experiment.seed)")
    parser.add_argument("--out", help="output directory (experiment.output)")
    parser.add_argument("--format", choices=["csv", "json"], help="table format (experiment.format)")
    parser.add_argument("--group", help="group spec such as SO(3) or SU(2) (group.spec)")
    parser.add_argument("--threads", type=int, default=settings.THREADS,
                        help="worker threads for sweep cells; results do not depend on it")
    parser.add_argument("--timings", action="store_true", default=settings.RECORD_TIMINGS,
                        help="record wall_ms columns (outputs are then no longer byte-stable)")
    parser.add_argument("--verbose", "-v", action="store_true", help="debug logging")
    parser.add_argument("--set", dest="assignments", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override any config value; repeatable")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pathlab", description=settings.APP_NAME)
    sub = parser.add_subparsers(dest="command", required=True)

    run_parser = sub.add_parser("run", help="run an experiment config file")
    run_parser.add_argument("config", help="path to an INI experiment config")
    _common_flags(run_parser)

    for name, help_text in [
        ("selftest", "run the invariant suite"),
        ("geometry", "ball-shift overlap trends"),
        ("brownian", "Brownian path defects and the Haar check"),
        ("witness", "non-SIN growth witness"),
    ]:
        _common_flags(sub.add_parser(name, help=help_text))

    defect = sub.add_parser("defect", help="invariance defect sweep over N")
    defect.add_argument("kind", choices=["translation", "rotation", "star", "semidirect"])
    defect.add_argument("--alpha", type=float, help="radius schedule exponent (schedule.alpha)")
    defect.add_argument("--N-list", dest="N_list", default=DEFAULT_N_LIST, help="ascending block counts")
    defect.add_argument("--M", type=int, help="samples per cell (sweep.M)")
    _common_flags(defect)
    return parser


def parse_assignments(assignments: List[str]) -> Dict[str, str]:
    overrides = {}
    for item in assignments:
        key, sep, value = item.partition("=")
        if not sep or "." not in key:
            raise ConfigError("bad --set flag", [f"{item!r}: expected section.key=value"])
        overrides[key.strip()] = value.strip()
    return overrides


def collect_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    overrides: Dict[str, Any] = {
        "experiment.seed": args.seed,
        "experiment.output": args.out,
        "experiment.format": args.format,
        "group.spec": args.group,
    }
    if args.command == "defect":
        overrides["schedule.alpha"] = args.alpha
        overrides["sweep.M"] = args.M
    overrides.update(parse_assignments(args.assignments))
    return overrides


def base_sections(args: argparse.Namespace) -> Optional[Dict[str, Dict[str, Any]]]:
    """In-memory config for the subcommands that run without a file."""
    if args.command == "run":
        return None
    if args.command == "defect":
        return {"experiment": {"name": args.kind}, "sweep": {"N_list": args.N_list}}
    return {"experiment": {"name": args.command}}


def configure_logging(verbose: bool) -> None:
    if verbose or settings.DEBUG:
        level = logging.DEBUG
    else:
        level = getattr(logging, settings.LOG_LEVEL.upper(), logging.INFO)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s", force=True)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)

    try:
        overrides = collect_overrides(args)
    except ConfigError as exc:
        logger.error(str(exc))
        return EXIT_CONFIG

    config_path = args.config if args.command == "run" else None
    state = run(config_path=config_path, raw_config=base_sections(args), overrides=overrides,
                threads=max(1, args.threads), timings=args.timings)

    for path in state.get("outputs", []):
        print(path)
    kind = state.get("error_kind")
    if kind:
        for error in state.get("errors", []):
            print(error, file=sys.stderr)
        return EXIT_CODES.get(kind, EXIT_FAILED)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
