"""``nikodym-lab`` command line entry point."""
from __future__ import annotations

import argparse
import json
import sys

from ..errors import NikodymLabError
from .config import EXPERIMENTS, FAMILIES, PROFILES, ExperimentConfig
from .runner import run


def exponent_range(text: str) -> tuple:
    """Parse ``JMIN..JMAX`` into an integer pair."""
    try:
        lo, hi = text.split("..")
        return int(lo), int(hi)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected JMIN..JMAX, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nikodym-lab",
                                 description="Scaling experiments for curved Nikodym maximal functions.")
    ap.add_argument("experiment", choices=EXPERIMENTS)
    ap.add_argument("--n", type=int)
    ap.add_argument("--family", choices=FAMILIES)
    ap.add_argument("--profile", choices=PROFILES)
    ap.add_argument("--k", type=int)
    ap.add_argument("--p", type=float)
    ap.add_argument("--q", type=float)
    ap.add_argument("--variant")
    ap.add_argument("--tolerance", type=float)
    ap.add_argument("--delta-range", type=exponent_range)
    ap.add_argument("--lambda-range", type=exponent_range)
    ap.add_argument("--seed", type=int)
    ap.add_argument("--samples", type=int)
    ap.add_argument("--out", dest="out_dir")
    ap.add_argument("--no-svg", action="store_true")
    ap.add_argument("--config", help="JSON file with the same keys; flags override it")
    return ap


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    base = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    return base.updated(
        experiment=args.experiment, n=args.n, family=args.family, profile=args.profile, k=args.k,
        p=args.p, q=args.q, variant=args.variant, tolerance=args.tolerance,
        delta_range=args.delta_range, lambda_range=args.lambda_range, seed=args.seed,
        samples=args.samples, out_dir=args.out_dir, svg=False if args.no_svg else None)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
    except (NikodymLabError, OSError, json.JSONDecodeError, TypeError) as exc:
        print(f"nikodym-lab: invalid configuration: {exc}", file=sys.stderr)
        return 2
    result = run(cfg)
    for fit in result.fits:
        d = fit.to_dict()
        print(f"{d['label']}: slope {d['slope']:.4f} expected {d['expected_slope']} "
              f"tolerance {d['tolerance']} {d['verdict']}")
    for rec in result.records:
        if "verdict" in rec:
            print(f"{rec['name']}: {rec['value']} {rec['verdict']}")
    for err in result.errors:
        print(f"error {err['type']}: {err['message']}", file=sys.stderr)
    print(f"results in {cfg.out_dir}; verdict {'pass' if result.passed else 'fail'}")
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
