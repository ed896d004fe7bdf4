#!/usr/bin/env python3
"""Benchmark sweep: one workload across modes, worker counts, and step
counts, printed as tables and collected into a single CSV.

Typical desk-scale runs:

  python3 scripts/bench_sweep.py --program jacobi2d --n 128 --steps 50
  python3 scripts/bench_sweep.py --program jacobi2d --n 256 \
      --steps 50 500 --workers 1 4 --reps 5 --out sweep.csv

The local-interpreter baseline is measured once per (n, steps) shape at
sizes where it is affordable (or always, with --baseline), so remote
rows carry speedup figures.
"""

import argparse
import csv
import sys
import time

from farcall.harness import bench
from farcall.harness.workloads import WORKLOADS


def parse_args():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--program", default="jacobi2d", choices=sorted(WORKLOADS))
    p.add_argument("--n", type=int, default=128)
    p.add_argument("--steps", type=int, nargs="+", default=[50])
    p.add_argument("--workers", type=int, nargs="+", default=[1])
    p.add_argument("--modes", nargs="+", default=["local", "remote-raw", "remote-full"],
                   choices=["local", "remote-raw", "remote-full"])
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--alias", choices=("conservative", "ignore"), default="ignore")
    p.add_argument("--out", default="bench_sweep.csv", help="combined CSV path")
    p.add_argument("--baseline", action="store_true",
                   help="measure the interpreter baseline regardless of size")
    return p.parse_args()


def main() -> int:
    args = parse_args()
    reports = []
    baselines: dict[tuple[int, int], float] = {}
    t0 = time.perf_counter()
    for steps in args.steps:
        for mode in args.modes:
            sweep_workers = args.workers if mode != "local" else [1]
            for workers in sweep_workers:
                spec = bench.BenchSpec(
                    args.program, args.n, steps, mode=mode,
                    repetitions=args.reps, alias_mode=args.alias,
                    workers=workers)
                # interpreter cost scales with n*n*steps; stay affordable
                affordable = args.baseline or args.n * args.n * steps <= 2**23
                known = baselines.get((args.n, steps))
                print(f"--- {mode} steps={steps} workers={workers}",
                      file=sys.stderr)
                report = bench.run_benchmark(
                    spec,
                    baseline_seconds=known,
                    measure_baseline=(mode != "local" and known is None
                                      and affordable),
                    log=lambda m: print("   ", m, file=sys.stderr))
                if report.baseline_seconds is not None:
                    baselines[(args.n, steps)] = report.baseline_seconds
                reports.append(report)
                print(bench.render_table(report))
                print()
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(bench.CSV_COLUMNS)
        for report in reports:
            body = bench.csv_text(report).splitlines()[1:]
            fh.write("\r\n".join(body) + "\r\n")
    print(f"{len(reports)} benchmarks in {time.perf_counter() - t0:.1f}s; "
          f"CSV at {args.out}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
