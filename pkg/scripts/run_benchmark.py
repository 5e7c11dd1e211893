"""Run the insert/select/join/lifecycle benchmark and save its report.

    python scripts/run_benchmark.py --reps 10 --out results/
"""

import argparse
import pathlib
import sys

from dlpersist.backend import ConnectionRegistry
from dlpersist.bench import SCENARIOS, BenchConfig, run_bench


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("-n", type=int, default=1000)
    ap.add_argument("--reps", type=int, default=10)
    ap.add_argument("--target", default="mysql")
    ap.add_argument("--db", help="connection registry file; in-memory backends by default")
    ap.add_argument("--scenario", action="append", choices=SCENARIOS)
    ap.add_argument("--out", type=pathlib.Path, help="directory for report.txt and report.csv")
    args = ap.parse_args(argv)
    factory = (lambda: ConnectionRegistry.from_file(args.db)) if args.db else ConnectionRegistry.default
    cfg = BenchConfig(args.n, args.reps, args.target, tuple(args.scenario or SCENARIOS))
    report = run_bench(cfg, factory)
    text = report.render()
    print(text)
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "report.txt").write_text(text + "\n", encoding="utf-8")
        (args.out / "report.csv").write_text(report.csv(), encoding="utf-8")
    return 0


if __name__ == "__main__":
    sys.exit(main())
