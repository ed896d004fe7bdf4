"""Command line front end.

Subcommands:
  score   static analysis of a program: per-function score tables
  run     execute a program with the offload pipeline active
  serve   accept exported parts and remote calls over TCP
  bench   timed local/remote workload runs
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import ir
from .analysis import (
    ALIAS_MODES,
    DEFAULT_THRESHOLD,
    DEFAULT_TRIP,
    AnalysisConfig,
    Weights,
    analyze_program,
)
from .harness import BenchError, BenchSpec, render_table, run_benchmark, write_csv
from .harness.workloads import WORKLOADS
from .interp import InterpError, Value
from .offload import ClientRuntime, OffloadConfig
from .proto import DEFAULT_PORT
from .server.net import Server, ServerConfig

__all__ = ["main"]


def _fraction(text: str) -> Fraction:
    try:
        return Fraction(text)
    except (ValueError, ZeroDivisionError) as e:
        raise argparse.ArgumentTypeError(f"not a rational number: {text!r}") from e


def _host_port(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not host:
        raise argparse.ArgumentTypeError("expected host:port")
    try:
        return host, int(port)
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"bad port in {text!r}") from e


def _load_program(path: str) -> ir.Program:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise SystemExit(f"cannot read {path}: {e}")
    try:
        return ir.parse_program(text)
    except (ir.ParseError, ir.ValidationError) as e:
        raise SystemExit(f"{path}: {e}")


def _analysis_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--threshold", type=int, default=DEFAULT_THRESHOLD,
                   help="candidate max block frequency must exceed this "
                        f"(default {DEFAULT_THRESHOLD})")
    p.add_argument("--c-iops", type=_fraction, default=Fraction(1),
                   help="integer op weight (default 1)")
    p.add_argument("--c-flops", type=_fraction, default=Fraction(1),
                   help="float op weight (default 1)")
    p.add_argument("--alias", choices=ALIAS_MODES, default="conservative",
                   help="alias handling for region detection "
                        "(default conservative)")
    p.add_argument("--default-trip", type=int, default=DEFAULT_TRIP,
                   help="assumed trip count for parameter-bounded loops "
                        f"(default {DEFAULT_TRIP})")


def _analysis_config(args) -> AnalysisConfig:
    return AnalysisConfig(
        threshold=args.threshold,
        default_trip=args.default_trip,
        alias_mode=args.alias,
        weights=Weights(c_iops=args.c_iops, c_flops=args.c_flops),
    )


# ---------------------------------------------------------------------------
# score


def _path_str(path: tuple[int, ...]) -> str:
    return ".".join(map(str, path))


def cmd_score(args) -> int:
    prog = _load_program(args.program)
    analyses = analyze_program(prog, _analysis_config(args))
    for f in prog.functions:
        fa = analyses[f.name]
        r = fa.report
        flag = "yes" if fa.candidate else "no"
        print(f"== {f.name} ==")
        print(f"max block frequency: {fa.max_freq}  "
              f"candidate: {flag} (threshold {args.threshold})")
        if r.rows:
            print(f"  {'loop':<10} {'iops':>8} {'flops':>8} {'freq':>12} {'score':>14}")
            for row in r.rows:
                print(f"  {_path_str(row.path):<10} {row.ops.iops:>8} "
                      f"{row.ops.flops:>8} {row.freq:>12} {str(row.score):>14}")
            print("  region scores: "
                  + ", ".join(str(s) for s in r.region_scores))
        else:
            print("  no accelerable regions")
        print(f"  total score: {r.total}  "
              f"exportable: {'yes' if fa.exportable else 'no'}")
    return 0


# ---------------------------------------------------------------------------
# run


def _seeded_args(f: ir.Function, seed: int) -> list[Value]:
    """Deterministic inputs: i64 data stays small and nonnegative so
    data-driven subscripts land in bounds; f64 is standard normal."""
    rng = np.random.default_rng(seed)
    vals: list[Value] = []
    for _, vt in f.params:
        if vt.is_array:
            if vt.base == ir.Scalar.I64:
                data = rng.integers(0, 25, size=vt.shape, dtype=np.int64)
            else:
                data = rng.standard_normal(vt.shape)
            vals.append(Value.array(vt, data))
        elif vt.base == ir.Scalar.I64:
            vals.append(Value.i64(int(rng.integers(1, 20))))
        else:
            vals.append(Value.f64(float(rng.standard_normal())))
    return vals


def _format_result(result: Value | None) -> str:
    if result is None:
        return "void"
    if result.vt.is_array:
        return f"{result.vt}"
    if result.vt.base == ir.Scalar.I64:
        return f"i64 {result.raw}"
    return f"f64 {result.raw!r}"


def cmd_run(args) -> int:
    prog = _load_program(args.program)
    if not prog.has_function(args.entry):
        names = ", ".join(f.name for f in prog.functions)
        print(f"no function {args.entry!r} (have: {names})", file=sys.stderr)
        return 2
    force = "local" if args.force_local else "remote" if args.force_remote else None
    host, port = args.server
    cfg = OffloadConfig(host=host, port=port, c=args.c, force=force)
    runtime = ClientRuntime(prog, cfg, _analysis_config(args))
    try:
        runtime.start_offload(background=False)
        line = f"offload: {runtime.state}"
        if runtime.detail:
            line += f" ({runtime.detail})"
        print(line, file=sys.stderr)
        vals = _seeded_args(prog.function(args.entry), args.seed)
        try:
            result, stats = runtime.run(args.entry, vals)
        except InterpError as e:
            print(f"fault: {e}", file=sys.stderr)
            return 1
        print(f"result: {_format_result(result)}")
        calls = ", ".join(f"{n}={k}" for n, k in sorted(stats.remote_calls.items()))
        print(f"remote calls: {calls or 'none'}")
        print(f"wall: {stats.wall_seconds:.6f}s")
        return 0
    finally:
        runtime.close()


# ---------------------------------------------------------------------------
# serve


def cmd_serve(args) -> int:
    logging.basicConfig(
        level=logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        server = Server(ServerConfig(host=args.host, port=args.port,
                                     workers=args.workers,
                                     vector_width=args.vector_width))
    except OSError as e:
        print(f"cannot bind {args.host}:{args.port}: {e}", file=sys.stderr)
        return 1
    server.start()
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        print("shutting down", file=sys.stderr)
        return 0
    finally:
        server.shutdown()


# ---------------------------------------------------------------------------
# bench


def cmd_bench(args) -> int:
    spec = BenchSpec(
        program=args.program,
        n=args.n,
        steps=args.steps,
        mode=args.mode,
        repetitions=args.reps,
        alias_mode=args.alias,
        c=args.c,
        workers=args.workers,
    )
    try:
        report = run_benchmark(
            spec, server=args.server,
            log=lambda msg: print(msg, file=sys.stderr))
    except BenchError as e:
        print(f"benchmark failed: {e}", file=sys.stderr)
        return 1
    print(render_table(report))
    if args.csv:
        write_csv(report, args.csv)
        print(f"csv written to {args.csv}", file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="farcall",
        description="Profile an affine mini-IR program, ship its hot "
                    "functions to a parallelizing server, and decide "
                    "local vs. remote per call.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("score", help="print per-function score tables")
    p.add_argument("program", help="path to a .bir program")
    _analysis_flags(p)
    p.set_defaults(fn=cmd_score)

    p = sub.add_parser("run", help="run a program with offload active")
    p.add_argument("program", help="path to a .bir program")
    p.add_argument("--entry", default="main", help="entry function (default main)")
    p.add_argument("--seed", type=int, default=0,
                   help="seed for the generated inputs (default 0)")
    p.add_argument("--c", type=_fraction, default=Fraction(0),
                   help="decision threshold: go remote when score/bytes > c "
                        "(default 0)")
    p.add_argument("--server", type=_host_port,
                   default=("127.0.0.1", DEFAULT_PORT),
                   help=f"server address (default 127.0.0.1:{DEFAULT_PORT})")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--force-local", action="store_true",
                   help="debug override: never call out")
    g.add_argument("--force-remote", action="store_true",
                   help="debug override: always call out once installed")
    _analysis_flags(p)
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("serve", help="run the acceleration server")
    p.add_argument("--host", default="127.0.0.1", help="bind address")
    p.add_argument("--port", type=int, default=DEFAULT_PORT,
                   help=f"listen port (default {DEFAULT_PORT})")
    p.add_argument("--workers", type=int, default=None,
                   help="worker pool size (default: host logical cores)")
    p.add_argument("--vector-width", type=int, default=1,
                   help="strip-mine width for compiled loops (default 1 = off)")
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("bench", help="timed local/remote workload runs")
    p.add_argument("--program", required=True, choices=sorted(WORKLOADS),
                   help="workload name")
    p.add_argument("--n", required=True, type=int, help="problem size")
    p.add_argument("--steps", required=True, type=int, help="time steps")
    p.add_argument("--mode", default="local",
                   choices=("local", "remote-raw", "remote-full"),
                   help="what to time (default local)")
    p.add_argument("--reps", type=int, default=3,
                   help="repetitions (default 3)")
    p.add_argument("--alias", choices=ALIAS_MODES, default="conservative",
                   help="alias handling (default conservative)")
    p.add_argument("--workers", type=int, default=1,
                   help="server worker pool size (default 1)")
    p.add_argument("--c", type=_fraction, default=Fraction(0),
                   help="decision threshold (default 0)")
    p.add_argument("--server", type=_host_port, default=None,
                   help="use an external server instead of in-process")
    p.add_argument("--csv", default=None, help="also write per-rep rows here")
    p.set_defaults(fn=cmd_bench)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "serve" and args.workers is None:
        import os
        args.workers = os.cpu_count() or 1
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
