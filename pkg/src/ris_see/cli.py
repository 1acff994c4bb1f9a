"""Command-line entry point: ``ris-see --experiment power_sweep --seeds 0..4 --out runs/``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .alg_perfect import Options
from .experiments import EXPERIMENTS, SCHEMES, parse_seeds, run_experiment, summarize
from .scenario import ScenarioError, build_scenario
from .validate import MIN_OUTAGE_SAMPLES

log = logging.getLogger("ris_see")


def _parse_set(items):
    """``key=value`` pairs; values are parsed as JSON when possible."""
    out = {}
    for item in items or ():
        if "=" not in item:
            raise argparse.ArgumentTypeError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            out[key.strip()] = json.loads(raw)
        except json.JSONDecodeError:
            out[key.strip()] = raw
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ris-see", description=__doc__)
    p.add_argument("--experiment", choices=sorted(EXPERIMENTS), help="sweep to run")
    p.add_argument("--scenario", type=Path, help="scenario JSON file (defaults apply otherwise)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a scenario field; repeatable")
    p.add_argument("--seeds", default="0", help="seed list: 3, 0..9 or 1,4,7")
    p.add_argument("--out", type=Path, default=Path("runs"), help="output directory")
    p.add_argument("--schemes", help=f"comma-separated subset of {','.join(SCHEMES)}")
    p.add_argument("--solver-tol", type=float, default=1e-7)
    p.add_argument("--max-iters", type=int, default=30)
    p.add_argument("--trials", type=int, default=100, help="Gaussian randomization draws")
    p.add_argument("--backend", default="cvxopt", choices=("cvxopt", "clarabel"))
    p.add_argument("--outage-samples", type=int, default=10_000,
                   help="Monte Carlo draws for the robust outage check (0 disables)")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--no-timing", action="store_true", help="blank the secs columns for byte-stable output")
    p.add_argument("--summarize", type=Path, metavar="CSV",
                   help="print per-point mean/std of a results CSV and write <name>_summary.csv")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")

    if args.summarize:
        text = summarize(args.summarize)
        args.summarize.with_name(args.summarize.stem + "_summary.csv").write_text(text)
        sys.stdout.write(text)
        return 0
    if not args.experiment:
        build_parser().error("--experiment is required unless --summarize is given")

    try:
        cfg = build_scenario(args.scenario, _parse_set(args.set))
        seeds = parse_seeds(args.seeds)
        if 0 < args.outage_samples < MIN_OUTAGE_SAMPLES:
            raise ValueError(f"--outage-samples must be 0 or >= {MIN_OUTAGE_SAMPLES}")
        schemes = [s.strip() for s in args.schemes.split(",")] if args.schemes else None
        opts = Options(tau=1e-3, max_iters=args.max_iters, trials=args.trials, solver_tol=args.solver_tol,
                       backend=args.backend)
    except (ScenarioError, ValueError, argparse.ArgumentTypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    try:
        results = run_experiment(args.experiment, cfg, seeds, args.out, schemes=schemes, opts=opts,
                                 workers=args.workers, timing=not args.no_timing,
                                 outage_samples=args.outage_samples, log=log.info)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    bad = [r for r in results if not r.ok]
    for r in bad:
        print(f"{r.scheme} value={r.sweep_value} seed={r.seed}: {r.status}", file=sys.stderr)
    print(f"wrote {len(results)} rows to {args.out / (args.experiment + '.csv')}")
    return 0 if not bad else 1


if __name__ == "__main__":
    raise SystemExit(main())
