"""``qlp-bench``: run a grid of qLP solves and print a results table."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from typing import Optional, Sequence

from .bench import ConfigError, emit_table, emit_trace, load_config, run_grid


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="qlp-bench",
        description="Run the linearized l_q penalty method over a grid of "
                    "problems and (q, rho, beta) values.",
    )
    ap.add_argument("--config", metavar="PATH", help="TOML grid description")
    ap.add_argument("--problem", metavar="NAME", action="append",
                    help='registry name such as "eq_qp:n=50,m=20"; repeatable')
    ap.add_argument("--q", type=float, nargs="+", metavar="F")
    ap.add_argument("--rho", type=float, nargs="+", metavar="F")
    ap.add_argument("--beta", type=float, nargs="+", metavar="F",
                    help="lower bound on the proximal weight")
    ap.add_argument("--tol-f", type=float, metavar="F", help="objective-change tolerance")
    ap.add_argument("--tol-feas", type=float, metavar="F", help="feasibility tolerance")
    ap.add_argument("--max-iter", type=int, metavar="N", help="outer iteration budget")
    ap.add_argument("--time-limit", type=float, metavar="S", help="seconds per cell")
    ap.add_argument("--rho-search", type=float, metavar="TAU",
                    help="enable penalty continuation with factor TAU")
    ap.add_argument("--trace", metavar="PATH", help="write per-iteration CSV here")
    ap.add_argument("--format", choices=("csv", "md"), default="csv")
    ap.add_argument("--jobs", type=int, metavar="N", help="worker processes")
    ap.add_argument("--seed", type=int, metavar="N")
    ap.add_argument("-o", "--output", metavar="PATH", help="table destination (default stdout)")
    ap.add_argument("-v", "--verbose", action="store_true", help="show solver warnings")
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = dict(
        problems=args.problem, q=args.q, rho=args.rho, beta=args.beta,
        tol_f=args.tol_f, tol_feas=args.tol_feas, max_iter=args.max_iter,
        time_limit=args.time_limit, rho_search=args.rho_search, seed=args.seed,
        jobs=args.jobs,
    )
    try:
        grid = load_config(args.config if args.config else {}, **overrides)
    except ConfigError as exc:
        print(f"qlp-bench: config error: {exc}", file=sys.stderr)
        return 2
    if args.trace:
        grid = replace(grid, keep_trace=True)
    rows = run_grid(grid)
    table = emit_table(rows, args.format)
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(table)
    else:
        sys.stdout.write(table)
    if args.trace:
        with open(args.trace, "w", encoding="utf-8") as fh:
            fh.write(emit_trace(rows))
    return 0


if __name__ == "__main__":
    sys.exit(main())
