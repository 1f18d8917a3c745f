"""Command-line entry point for brlab."""

import argparse
import json
import logging
import sys

from pydantic import ValidationError

from . import __version__
from .config import SUBCOMMANDS, ExperimentConfig, Tolerances
from .database import session_factory
from .errors import BrlabError
from .main import EXIT_ERROR, known_families, run

logger = logging.getLogger(__name__)


def _common_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    keep = argparse.SUPPRESS
    common.add_argument("--config", help="JSON config file; flags override it.")
    common.add_argument("--family", default=keep, choices=known_families())
    common.add_argument("--tensor", default=keep, help="Tensor label such as W5.")
    for name in ("n", "d", "r", "p", "k", "seed", "starts", "iters"):
        common.add_argument(f"--{name}", type=int, default=keep)
    common.add_argument("--eps", default=keep, help="Grid as a..b[:points] or a comma list.")
    common.add_argument("--n-list", dest="n_list", default=keep, help="Comma separated sizes.")
    common.add_argument("--out", default=keep, help="Output directory.")
    common.add_argument("--input", default=keep, help="Input JSON file.")
    common.add_argument("--forced", action="store_true", default=keep)
    common.add_argument("--auto-renormalize", dest="auto_renormalize", action="store_true", default=keep)
    for name in Tolerances.model_fields:
        kind = int if name in ("group_cap", "enumeration_bits") else float
        common.add_argument(
            f"--tol-{name.replace('_', '-')}", dest=f"tol_{name}", type=kind, default=keep
        )
    common.add_argument("--ledger", help="SQLite path or URL of the run ledger.")
    common.add_argument("-v", "--verbose", action="store_true", help="Log at DEBUG level.")
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="brlab", description="Border-rank families, rank tools and correlation models."
    )
    parser.add_argument("--version", action="version", version=f"brlab {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    common = _common_flags()
    for name in SUBCOMMANDS:
        child = sub.add_parser(name, parents=[common])
        if name == "tree":
            child.add_argument("tree_action", choices=["normalize", "closure-check"])
    return parser


def config_payload(args: argparse.Namespace) -> dict:
    """Merge the optional config file with explicitly given flags."""
    payload: dict = {}
    if args.config:
        with open(args.config, encoding="utf-8") as handle:
            payload = json.load(handle)
    flags = {
        k: v
        for k, v in vars(args).items()
        if k not in ("config", "ledger", "verbose") and not k.startswith("tol_")
    }
    if "n_list" in flags:
        flags["n_list"] = [int(x) for x in flags["n_list"].split(",") if x]
    payload.update(flags)
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("tol_")}
    if overrides:
        payload["tolerances"] = {**payload.get("tolerances", {}), **overrides}
    return payload


def _emit(payload: dict) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True, default=str))


def main(argv: list[str] | None = None) -> int:
    """Parse arguments, run one subcommand and print its summary as JSON."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        config = ExperimentConfig.model_validate(config_payload(args))
        factory = session_factory(args.ledger) if args.ledger else None
        outcome = run(config, factory)
    except ValidationError as exc:
        _emit(
            {
                "error": "ValidationError",
                "message": "invalid configuration",
                "details": {"errors": json.loads(exc.json(include_url=False))},
            }
        )
        return EXIT_ERROR
    except BrlabError as exc:
        logger.debug("run failed", exc_info=True)
        _emit(exc.to_dict())
        return EXIT_ERROR
    except (OSError, ValueError) as exc:
        _emit({"error": type(exc).__name__, "message": str(exc), "details": {}})
        return EXIT_ERROR
    _emit(outcome.summary)
    return outcome.exit_code


if __name__ == "__main__":
    sys.exit(main())
