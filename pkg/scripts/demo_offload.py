#!/usr/bin/env python3
"""End-to-end walkthrough on one machine: generate a stencil program,
show its score table, stand up a server, run the program through the
offload pipeline, and compare against pure interpretation.

  python3 scripts/demo_offload.py --n 64 --steps 20 --workers 2
"""

import argparse
import sys
import time

import numpy as np

from farcall import ir
from farcall.analysis import AnalysisConfig, analyze_program
from farcall.harness.workloads import WORKLOADS
from farcall.interp import Interpreter, Value
from farcall.offload import ClientRuntime, OffloadConfig
from farcall.server.net import Server, ServerConfig


def parse_args():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--program", default="jacobi2d", choices=sorted(WORKLOADS))
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--steps", type=int, default=20)
    p.add_argument("--workers", type=int, default=2)
    return p.parse_args()


def values_for(prog, arrays):
    f = prog.function("main")
    return [Value.array(vt, a.copy()) for a, (_, vt) in zip(arrays, f.params)]


def main() -> int:
    args = parse_args()
    source, arrays = WORKLOADS[args.program].build(args.n, args.steps)
    prog = ir.parse_program(source)

    print("# static scores (alias hint: arrays do not alias)")
    for name, fa in analyze_program(
            prog, AnalysisConfig(alias_mode="ignore")).items():
        print(f"  {name}: max block freq {fa.max_freq}, "
              f"score {fa.report.total}, "
              f"{'exported' if fa.exportable else 'stays local'}")

    print("\n# pure interpretation")
    vals = values_for(prog, arrays)
    t0 = time.perf_counter()
    result, _ = Interpreter(prog).run("main", vals)
    t_local = time.perf_counter() - t0
    print(f"  result {result.raw!r} in {t_local:.3f}s")

    print(f"\n# offloaded ({args.workers} workers)")
    with Server(ServerConfig(port=0, workers=args.workers)) as server:
        server.start()
        runtime = ClientRuntime(prog, OffloadConfig(port=server.port),
                                AnalysisConfig(alias_mode="ignore"))
        try:
            t0 = time.perf_counter()
            runtime.start_offload(background=False)
            t_install = time.perf_counter() - t0
            print(f"  pipeline: {runtime.state} in {t_install:.3f}s "
                  f"(analysis + export + server compile)")
            remote_vals = values_for(prog, arrays)
            t0 = time.perf_counter()
            remote_result, stats = runtime.run("main", remote_vals)
            t_remote = time.perf_counter() - t0
            print(f"  result {remote_result.raw!r} in {t_remote:.3f}s "
                  f"(remote calls: {dict(stats.remote_calls)})")
        finally:
            runtime.close()

    same = all(np.array_equal(a.raw, b.raw)
               for a, b in zip(vals, remote_vals))
    same = same and remote_result.raw == result.raw
    print(f"\n# outputs bit-identical: {same}; "
          f"call speedup {t_local / t_remote:.0f}x "
          f"(pays back after {t_install / max(t_local - t_remote, 1e-9):.2f} "
          f"more calls)")
    return 0 if same else 1


if __name__ == "__main__":
    sys.exit(main())
