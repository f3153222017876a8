"""Command-line interface: one subcommand per campaign.

Exit codes: 0 when every verdict passes (exploratory verdicts excepted),
1 when any verdict fails or is inconclusive, 2 on configuration or runtime
errors.
"""

import argparse
import sys

from ..errors import ConfigError
from . import config as C
from .io import RunExists, execute, summary_table

_HELP = {
    "validate": "constant-sigma Gaussian oracle and PAM moment oracles",
    "clt": "Gaussian fluctuations of the spatial average of u",
    "kpz": "the same for log u (Hopf-Cole / KPZ)",
    "fclt": "joint law at several times plus the moment modulus",
    "rate": "distance to the Gaussian against N",
    "lower-bound": "explicit variance lower bound and the t_N sequence",
    "malliavin": "derivative positivity, envelope and Clark-Ocone",
    "associate": "covariances of monotone functionals",
    "tn-clt": "normality along a growing time schedule t_N",
    "dalang": "Dalang integrals of the noise spectrum",
    "constants": "explicit moment constants and rate-bound prefactors",
}


def build_parser():
    parser = argparse.ArgumentParser(prog="shelab", description="Monte Carlo lab for the stochastic heat equation.")
    sub = parser.add_subparsers(dest="campaign", required=True)
    for kind in C.CAMPAIGNS:
        p = sub.add_parser(kind, help=_HELP[kind])
        p.add_argument("--config", metavar="PATH", help="TOML file with campaign sections")
        p.add_argument("--seed", type=int, metavar="U64", help="base seed")
        p.add_argument("--replicas", type=int, metavar="INT")
        p.add_argument("--out", metavar="DIR", help="parent directory of run directories")
        p.add_argument("--workers", type=int, metavar="INT", help="process count (results do not depend on it)")
        p.add_argument("--force", action="store_true", help="overwrite an existing run directory")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override one config key (TOML value syntax); repeatable")
    return parser


def config_from_args(args):
    file_cfg = C.load_toml(args.config) if args.config else None
    overrides = [C.parse_override(s) for s in args.set]
    for key, value in (("seed", args.seed), ("replicas", args.replicas), ("out", args.out),
                       ("workers", args.workers)):
        if value is not None:
            overrides.append(("harness", key, value))
    return C.build_config(args.campaign, file_cfg, overrides)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = C.check(config_from_args(args))
        result, path = execute(cfg, force=args.force)
    except ConfigError as exc:
        print("configuration error:", file=sys.stderr)
        for e in exc.errors:
            print(f"  - {e}", file=sys.stderr)
        return 2
    except (RunExists, OSError, RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    sys.stdout.write(summary_table(result))
    print(f"results in {path}")
    return 0 if result.passed else 1


if __name__ == "__main__":
    sys.exit(main())
