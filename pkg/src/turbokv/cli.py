"""``turbokv`` command line: run experiments, audit invariants, plot results.

Exit codes: 0 success, 1 validation error, 2 property/audit failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .audit import KNOWN_FAULTS, SCALES, run_audit
from .bench import CellFailure, run_experiment
from .config import ConfigError, load_config

EXIT_OK, EXIT_INVALID, EXIT_PROPERTY = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="turbokv", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the experiment matrix of a config file")
    run.add_argument("--config", required=True, type=Path)
    run.add_argument("--out", type=Path, help="output directory (overrides the config)")
    run.add_argument("--parallel", type=int, default=1, metavar="N")
    run.add_argument("--plot", action="store_true", help="render figures after the run")

    audit = sub.add_parser("audit", help="run the invariant property suite")
    audit.add_argument("--scale", choices=sorted(SCALES), default="small")
    audit.add_argument("--inject-fault", action="append", default=[], choices=KNOWN_FAULTS,
                       help="deliberately break one component (mutation check)")

    plot = sub.add_parser("plot", help="render SVG figures from a results directory")
    plot.add_argument("--in", dest="in_dir", required=True, type=Path)
    return p


def _plot(in_dir: Path) -> int:
    from .plotting import plot_results

    if not in_dir.is_dir():
        print(f"error: {in_dir} is not a directory", file=sys.stderr)
        return EXIT_INVALID
    written, problems = plot_results(in_dir)
    for path in written:
        print(path)
    for msg in problems:
        print(f"missing: {msg}", file=sys.stderr)
    return EXIT_OK if written else EXIT_INVALID


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "run":
        try:
            config = load_config(args.config)
        except ConfigError as exc:
            print(f"invalid config: {exc}", file=sys.stderr)
            return EXIT_INVALID
        if args.parallel < 1:
            print("--parallel must be >= 1", file=sys.stderr)
            return EXIT_INVALID
        out = args.out or config.output
        try:
            table = run_experiment(config, out, args.parallel)
        except CellFailure as exc:
            print(f"audit failure: {exc}", file=sys.stderr)
            return EXIT_PROPERTY
        for row in table.rows:
            print(f"{row.mode:18s} {row.workload:28s} rep{row.rep} {row.throughput:10.1f} ops/s")
        if args.plot:
            return _plot(Path(out))
        return EXIT_OK
    if args.command == "audit":
        results = run_audit(args.scale, tuple(args.inject_fault))
        for r in results:
            print(r.line())
        return EXIT_OK if all(r.passed for r in results) else EXIT_PROPERTY
    return _plot(args.in_dir)


if __name__ == "__main__":
    sys.exit(main())
