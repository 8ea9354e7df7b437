"""Command-line entry point.

Examples::

    tmvi --experiment bernoulli --degree 1 10 30 --seed 1
    tmvi --experiment bernoulli --family gaussian
    tmvi --experiment cauchy --degree 30
    tmvi --experiment nn --arch small --family tm --degree 10

Output goes to ``--out``, else ``$TMVI_OUT``, else ``./runs``.
"""

from __future__ import annotations

import argparse
import os
import sys

from .engine import TrainConfig
from .experiments import load_defaults, run_bernoulli, run_cauchy, run_nn


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _positive_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tmvi", description="Transformation-model variational inference experiments.")
    parser.add_argument("--experiment", required=True, choices=["bernoulli", "cauchy", "nn"])
    parser.add_argument("--family", choices=["tm", "gaussian"], default="tm", help="ignored by cauchy, which runs both")
    parser.add_argument("--degree", type=_positive_int, nargs="+", help="Bernstein degree(s) M; several run a sweep")
    parser.add_argument("--samples", type=_positive_int, help="Monte-Carlo samples T per step")
    parser.add_argument("--steps", type=_positive_int)
    parser.add_argument("--lr", type=_positive_float)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out", default=None)
    parser.add_argument("--arch", choices=["small", "large"], default="small")
    return parser


def parse_and_dispatch(argv=None) -> int:
    args = build_parser().parse_args(argv)
    defaults = load_defaults()
    section = defaults[args.experiment]
    base = defaults["train"]
    train_cfg = TrainConfig(
        T=args.samples or base["T"],
        steps=args.steps or section["steps"],
        learning_rate=args.lr or base["learning_rate"],
        seed=base["seed"] if args.seed is None else args.seed,
    )
    out_dir = args.out or os.environ.get("TMVI_OUT") or "runs"
    degrees = args.degree or [section["degree"]]
    if args.family == "gaussian" and args.experiment != "cauchy":
        degrees = degrees[:1]  # degree is meaningless for Gaussians

    records = []
    for M in degrees:
        if args.experiment == "bernoulli":
            records.append(run_bernoulli(M, train_cfg, out_dir, args.family, defaults))
        elif args.experiment == "cauchy":
            records.append(run_cauchy(M, train_cfg, out_dir, defaults))
        else:
            records.append(run_nn(args.arch, args.family, M, train_cfg, out_dir, defaults))

    for rec in records:
        line = f"{rec.experiment} status={rec.status} final_elbo={rec.final_elbo}"
        if rec.kl_to_oracle is not None:
            line += f" kl_to_oracle={rec.kl_to_oracle:.6g}"
        print(line)
        if not rec.ok:
            print(f"error: {rec.error}", file=sys.stderr)
    return 0 if all(rec.ok for rec in records) else 1


def main() -> None:
    sys.exit(parse_and_dispatch())


if __name__ == "__main__":
    main()
