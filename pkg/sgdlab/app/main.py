# sgdlab/app/main.py
import argparse
import json
import logging
import sys
from fractions import Fraction
from typing import List, Optional

from . import __version__
from .config import setup_logging
from .errors import AssertionFailure, CertificateError, LabError
from .experiments import dump_config, load_config, run_experiment
from .export import git_describe
from .models import FAMILY_BUILDERS, OBSERVABLE_IDS, certify, get_family, local_constants

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ASSERTION = 3


def _diagnostic(error: LabError) -> None:
    print(json.dumps(error.as_dict()), file=sys.stderr)


def list_examples() -> dict:
    """Registry dump: every family with its certificate (or why it has none)."""
    families = {}
    for family_id in FAMILY_BUILDERS:
        family = get_family(family_id)
        entry = {
            "description": family.description,
            "dim": family.dim,
            "noise": family.noise_kind.value,
            "minimizer": list(family.objective.minimizer),
            "R": family.radius,
            "R1": family.convexity_radius,
        }
        try:
            entry["certificate"] = certify(family).model_dump()
        except CertificateError as e:
            constants = local_constants(family, family.radius)
            entry["certificate"] = None
            entry["no_certificate"] = e.message
            entry["local_constants"] = constants._asdict()
        families[family_id] = entry
    return {"families": families, "observables": list(OBSERVABLE_IDS)}


def _format_registry(registry: dict) -> str:
    lines = []
    for family_id, entry in registry["families"].items():
        lines.append(f"{family_id}: {entry['description']} (dim {entry['dim']}, {entry['noise']} noise)")
        cert = entry["certificate"]
        if cert is None:
            local = entry["local_constants"]
            lines.append(f"  no certificate: {entry['no_certificate']}")
            lines.append(f"  local constants on R={entry['R']}: gamma={local['gamma']:.6g} L={local['L']:.6g} b={local['b']:.6g}")
        else:
            eta0 = Fraction(cert["eta0"]).limit_denominator(1000)
            lines.append(
                f"  R={cert['R']:g} gamma={cert['gamma']:.6g} b={cert['b']:.6g}"
                f"{' (estimated)' if cert['b_estimated'] else ''} R0={cert['R0']:.6g} eta0={cert['eta0']:.6g} ~ {eta0}"
            )
    lines.append("observables: " + ", ".join(registry["observables"]))
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sgdlab", description="SGD diffusion-approximation laboratory")
    parser.add_argument("--log-level", default=None, help="overrides SGDLAB_LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment file")
    run.add_argument("config", help="INI file with a [run] section")
    run.add_argument("--dump-config", action="store_true", help="print the canonical config and exit")
    run.add_argument("--threads", type=int, default=None, help="worker threads, 0 = auto (default: SGDLAB_THREADS)")

    listing = sub.add_parser("list-examples", help="show registered families and observables")
    listing.add_argument("--json", action="store_true", help="emit JSON instead of text")

    sub.add_parser("version", help="print version and build")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    try:
        if args.command == "version":
            print(f"sgdlab {__version__} ({git_describe()})")
        elif args.command == "list-examples":
            registry = list_examples()
            print(json.dumps(registry, indent=2) if args.json else _format_registry(registry))
        else:
            cfg = load_config(args.config)
            if args.dump_config:
                print(dump_config(cfg), end="")
                return EXIT_OK
            result = run_experiment(cfg, threads=args.threads)
            print(json.dumps({"experiment": cfg.experiment, "output": cfg.output, **result.summary}))
    except AssertionFailure as e:
        _diagnostic(e)
        return EXIT_ASSERTION
    except LabError as e:
        logger.error(f"{e.kind}: {e.message}")
        _diagnostic(e)
        return EXIT_CONFIG
    return EXIT_OK


def cli() -> None:
    sys.exit(main())


if __name__ == "__main__":
    cli()
