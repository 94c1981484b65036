"""Command-line entry point: ``impulse-lab run|list|check``.

Exit status: 0 when every check passes, 1 when any check fails, 2 for
configuration errors.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

from ..errors import ConfigurationError
from .config import parse_config
from .runner import SUMMARY_NAME, run

OUT_ENV = "IMPULSE_LAB_OUT"
DEFAULT_OUT = "impulse_lab_out"


def _parser():
    ap = argparse.ArgumentParser(prog="impulse-lab", description="Run impulse-control verification scenarios.")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run scenarios and write CSV artifacts")
    r.add_argument("config")
    r.add_argument("--out", default=None, help=f"output directory (default: ${OUT_ENV} or ./{DEFAULT_OUT})")
    r.add_argument("--workers", type=int, default=1, help="scenarios run concurrently")
    r.add_argument("--filter", default=None, metavar="NAME", help="only scenarios whose name contains NAME")
    r.add_argument("-v", "--verbose", action="store_true")
    for name, text in (("list", "list scenarios in a config"), ("check", "validate a config without running it")):
        sub.add_parser(name, help=text).add_argument("config")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        scenarios = parse_config(args.config)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    if args.command == "check":
        print(f"{args.config}: {len(scenarios)} scenario(s) OK")
        return 0
    if args.command == "list":
        for sc in scenarios:
            print(f"{sc.name}\t{sc.task}\tn={sc.n}\tseed={sc.seed}")
        return 0

    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.filter:
        scenarios = [s for s in scenarios if args.filter in s.name]
    if args.workers < 1:
        print("config error: --workers must be >= 1", file=sys.stderr)
        return 2
    out = args.out or os.environ.get(OUT_ENV) or DEFAULT_OUT
    reports = run(scenarios, out, workers=args.workers)
    for rep in reports:
        status = "PASS" if rep.ok else ("ERROR" if rep.error else "FAIL")
        print(f"{status:5s} {rep.scenario} [{rep.task}] {rep.passed}/{rep.total} checks, {rep.wall_time:.2f}s")
        if rep.error:
            print(f"      {rep.error}")
        for name, ok in rep.checks:
            if not ok:
                print(f"      failed: {name}")
    if reports:
        print(f"summary: {os.path.join(out, SUMMARY_NAME)}")
    return 0 if all(r.ok for r in reports) else 1


if __name__ == "__main__":
    sys.exit(main())
