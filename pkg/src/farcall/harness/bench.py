"""Timed benchmark runs over the named workloads.

A benchmark is repetitions of one entry call, each on fresh input
arrays, preceded by one untimed verification run whose output is
checked bit-for-bit against the workload's reference implementation.
Remote modes drive the full client pipeline (analyze, export,
install, guarded calls) against a server, by default an in-process
one on an ephemeral port.

Three timing series per repetition:
  full  client wall seconds around the entry call
  raw   server-measured kernel seconds (equals full in local mode)
  comm  the difference: marshalling, transport, and the residue of
        the entry function the client still interprets
"""

from __future__ import annotations

import csv
import io
import os
import time
from dataclasses import dataclass
from fractions import Fraction
from statistics import median
from typing import Callable

import numpy as np

from .. import ir
from ..analysis import AnalysisConfig
from ..interp import Interpreter, Value
from ..offload import ClientRuntime, OffloadConfig
from ..server.net import Server, ServerConfig
from .workloads import WORKLOADS

__all__ = [
    "BenchError",
    "BenchSpec",
    "BenchReport",
    "run_benchmark",
    "render_table",
    "csv_text",
    "write_csv",
    "physical_core_count",
]

MODES = ("local", "remote-raw", "remote-full")


class BenchError(RuntimeError):
    """Hard benchmark failure: unreachable server, rejected export,
    or output that diverged from the oracle."""


@dataclass(frozen=True)
class BenchSpec:
    """One benchmark configuration."""

    program: str
    n: int
    steps: int
    mode: str = "local"
    repetitions: int = 3
    alias_mode: str = "conservative"
    c: Fraction = Fraction(0)
    workers: int = 1

    def __post_init__(self):
        if self.program not in WORKLOADS:
            known = ", ".join(sorted(WORKLOADS))
            raise ValueError(f"unknown program {self.program!r} (have: {known})")
        if self.n < 3:
            raise ValueError("n must be at least 3")
        if self.steps < 1:
            raise ValueError("steps must be at least 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.repetitions < 1:
            raise ValueError("repetitions must be at least 1")
        if self.alias_mode not in ("conservative", "ignore"):
            raise ValueError("alias_mode must be 'conservative' or 'ignore'")
        if self.c < 0:
            raise ValueError("c must be nonnegative")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")


@dataclass(frozen=True)
class BenchReport:
    """Per-repetition timings plus derived aggregates.

    The headline series (avg/min/max/median) follows the mode:
    remote-raw reports raw seconds, the other modes full wall
    seconds. Speedups are relative to baseline_seconds, a local
    interpreter measurement; they are None when no baseline was
    taken (local runs are their own baseline by definition)."""

    spec: BenchSpec
    full_seconds: tuple[float, ...]
    raw_seconds: tuple[float, ...]
    baseline_seconds: float | None = None
    note: str = ""

    def __post_init__(self):
        if not self.full_seconds:
            raise ValueError("report needs at least one repetition")
        if len(self.full_seconds) != len(self.raw_seconds):
            raise ValueError("full and raw series differ in length")
        for i, (f, r) in enumerate(zip(self.full_seconds, self.raw_seconds)):
            if r > f:
                raise ValueError(
                    f"repetition {i}: raw {r!r}s exceeds full wall {f!r}s")

    @property
    def comm_seconds(self) -> tuple[float, ...]:
        return tuple(f - r for f, r in zip(self.full_seconds, self.raw_seconds))

    @property
    def headline_seconds(self) -> tuple[float, ...]:
        if self.spec.mode == "remote-raw":
            return self.raw_seconds
        return self.full_seconds

    @property
    def avg_seconds(self) -> float:
        return sum(self.headline_seconds) / len(self.headline_seconds)

    @property
    def min_seconds(self) -> float:
        return min(self.headline_seconds)

    @property
    def max_seconds(self) -> float:
        return max(self.headline_seconds)

    @property
    def median_seconds(self) -> float:
        return median(self.headline_seconds)

    @property
    def median_full(self) -> float:
        return median(self.full_seconds)

    @property
    def median_raw(self) -> float:
        return median(self.raw_seconds)

    @property
    def raw_share(self) -> float:
        """Fraction of the median full wall spent inside the kernel."""
        return self.median_raw / self.median_full

    @property
    def raw_speedup(self) -> float | None:
        if self.baseline_seconds is None:
            return None
        return self.baseline_seconds / self.median_raw

    @property
    def overall_speedup(self) -> float | None:
        if self.baseline_seconds is None:
            return None
        return self.baseline_seconds / self.median_full


# ---------------------------------------------------------------------------
# Runner


def _fresh_values(main: ir.Function, initial) -> list[Value]:
    return [Value.array(vt, a.copy())
            for a, (_, vt) in zip(initial, main.params)]


def _check_outputs(main: ir.Function, vals, expected, label: str) -> None:
    for (name, _), v, want in zip(main.params, vals, expected):
        got = v.raw.reshape(want.shape)
        if not np.array_equal(got, want):
            raise BenchError(f"{label}: array {name!r} diverged from the oracle")


def run_benchmark(spec: BenchSpec, *,
                  server: tuple[str, int] | None = None,
                  vector_width: int = 1,
                  baseline_seconds: float | None = None,
                  measure_baseline: bool = False,
                  log: Callable[[str], None] | None = None) -> BenchReport:
    """Run one benchmark and return its report.

    server=None starts an in-process server with spec.workers
    workers for the duration; otherwise (host, port) names an
    external one, whose own worker count then applies. In remote
    modes measure_baseline=True adds one timed local interpreter
    run so the report can state speedups; callers that already hold
    a baseline pass baseline_seconds instead. Unreachable servers,
    rejected exports, and oracle mismatches raise BenchError."""
    say = log or (lambda _msg: None)
    workload = WORKLOADS[spec.program]
    source, initial = workload.build(spec.n, spec.steps)
    prog = ir.parse_program(source)
    main = prog.function("main")

    expected = [a.copy() for a in initial]
    workload.reference(*expected, spec.steps)

    if spec.mode == "local":
        interp = Interpreter(prog)
        vals = _fresh_values(main, initial)
        interp.run("main", vals)
        _check_outputs(main, vals, expected, "verification run")
        say("verification run ok (matches reference)")
        fulls = []
        for rep in range(spec.repetitions):
            vals = _fresh_values(main, initial)
            t0 = time.perf_counter()
            interp.run("main", vals)
            fulls.append(time.perf_counter() - t0)
            say(f"rep {rep + 1}: {fulls[-1]:.6f}s")
        return BenchReport(spec, tuple(fulls), tuple(fulls),
                           baseline_seconds=median(fulls))

    own_server = None
    if server is None:
        own_server = Server(ServerConfig(
            port=0, workers=spec.workers, vector_width=vector_width))
        own_server.start()
        host, port = "127.0.0.1", own_server.port
        say(f"in-process server on port {port} ({spec.workers} workers)")
    else:
        host, port = server
    runtime = ClientRuntime(
        prog, OffloadConfig(host=host, port=port, c=spec.c),
        AnalysisConfig(alias_mode=spec.alias_mode))
    notes: list[str] = []
    try:
        runtime.start_offload(background=False)
        if runtime.state in ("rejected", "unreachable"):
            raise BenchError(
                f"offload pipeline failed ({runtime.state}): {runtime.detail}")
        say(f"offload pipeline settled: {runtime.state}")
        if runtime.state == "no-exports":
            notes.append("no offload candidates")

        baseline = baseline_seconds
        if measure_baseline and baseline is None:
            vals = _fresh_values(main, initial)
            t0 = time.perf_counter()
            Interpreter(prog).run("main", vals)
            baseline = time.perf_counter() - t0
            _check_outputs(main, vals, expected, "baseline run")
            say(f"local baseline: {baseline:.6f}s")

        vals = _fresh_values(main, initial)
        runtime.run("main", vals)
        _check_outputs(main, vals, expected, "verification run")
        say("verification run ok (matches reference)")

        fulls: list[float] = []
        raws: list[float] = []
        stayed_local = False
        for rep in range(spec.repetitions):
            vals = _fresh_values(main, initial)
            endpoint = runtime.endpoint
            if endpoint is not None:
                endpoint.raw_seconds_accum = 0.0
            t0 = time.perf_counter()
            _, stats = runtime.run("main", vals)
            full = time.perf_counter() - t0
            if endpoint is not None and stats.remote_calls:
                raw = endpoint.raw_seconds_accum
            else:
                raw = full
                stayed_local = True
            fulls.append(full)
            raws.append(raw)
            say(f"rep {rep + 1}: full={full:.6f}s raw={raw:.6f}s")
        if runtime.state == "installed" and stayed_local:
            notes.append("per-call decision kept every call local")
        return BenchReport(spec, tuple(fulls), tuple(raws),
                           baseline_seconds=baseline, note="; ".join(notes))
    finally:
        runtime.close()
        if own_server is not None:
            own_server.shutdown()


# ---------------------------------------------------------------------------
# Rendering


def render_table(report: BenchReport) -> str:
    """Human-readable per-repetition table with aggregates."""
    s = report.spec
    lines = [
        f"{s.program}  n={s.n} steps={s.steps} mode={s.mode} "
        f"alias={s.alias_mode} workers={s.workers} reps={s.repetitions} c={s.c}",
        f"{'rep':>4} {'full(s)':>12} {'raw(s)':>12} {'comm(s)':>12}",
    ]
    rows = zip(report.full_seconds, report.raw_seconds, report.comm_seconds)
    for i, (f, r, c) in enumerate(rows, 1):
        lines.append(f"{i:>4} {f:>12.6f} {r:>12.6f} {c:>12.6f}")
    lines.append(
        f"{s.mode}: avg={report.avg_seconds:.6f} min={report.min_seconds:.6f} "
        f"max={report.max_seconds:.6f} median={report.median_seconds:.6f}")
    lines.append(
        f"median full={report.median_full:.6f} raw={report.median_raw:.6f} "
        f"raw share={report.raw_share:.1%}")
    if report.baseline_seconds is not None:
        lines.append(
            f"vs local baseline {report.baseline_seconds:.6f}s: "
            f"raw speedup={report.raw_speedup:.2f}x "
            f"overall speedup={report.overall_speedup:.2f}x")
    else:
        lines.append("speedup vs local: n/a (no baseline measured)")
    if report.note:
        lines.append(f"note: {report.note}")
    return "\n".join(lines)


CSV_COLUMNS = ("program", "n", "steps", "mode", "alias", "workers", "c",
               "rep", "full_seconds", "raw_seconds", "comm_seconds",
               "baseline_seconds", "note")


def csv_text(report: BenchReport) -> str:
    """One CSV row per repetition, header included."""
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(CSV_COLUMNS)
    s = report.spec
    base = "" if report.baseline_seconds is None else repr(report.baseline_seconds)
    rows = zip(report.full_seconds, report.raw_seconds, report.comm_seconds)
    for i, (f, r, c) in enumerate(rows, 1):
        w.writerow([s.program, s.n, s.steps, s.mode, s.alias_mode, s.workers,
                    str(s.c), i, repr(f), repr(r), repr(c), base, report.note])
    return buf.getvalue()


def write_csv(report: BenchReport, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(csv_text(report))


# ---------------------------------------------------------------------------
# Host introspection


def physical_core_count() -> int:
    """Physical cores as distinct (physical id, core id) pairs from
    /proc/cpuinfo; logical count when that interface is missing."""
    try:
        with open("/proc/cpuinfo") as fh:
            blocks = fh.read().split("\n\n")
    except OSError:
        return os.cpu_count() or 1
    pairs = set()
    for block in blocks:
        phys = core = None
        for line in block.splitlines():
            key, _, val = line.partition(":")
            key = key.strip()
            if key == "physical id":
                phys = val.strip()
            elif key == "core id":
                core = val.strip()
        if phys is not None and core is not None:
            pairs.add((phys, core))
    return len(pairs) or (os.cpu_count() or 1)
