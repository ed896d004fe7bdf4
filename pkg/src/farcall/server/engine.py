"""Server-side part preparation and call execution.

``optimize`` turns a received remote part into an executable: it
re-validates the shipped source, re-derives the accelerable regions
under the part's alias mode, proves each region loop parallel or
sequential, and compiles one native kernel per schedulable loop
(warmed, so the first call pays no JIT cost). ``ServerInterpreter``
then runs calls through the ordinary evaluator, swapping in a compiled
kernel wherever the loop table has an entry.

Parallel loops are split into contiguous chunks of the outer index
range, one per worker. Chunks never overlap and the parallel verdict
guarantees no cell is touched from two distinct outer iterations, so
results are bit-identical to a sequential sweep. Faults abort only the
chunk that hit them; the earliest chunk's fault is reported, which is
the same fault a sequential run would have raised first.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from queue import SimpleQueue

import numpy as np

from .. import ir
from ..analysis import build_type_env, detect_regions
from ..interp import ExecStats, Interpreter, Value, _trip_count
from ..offload import RemotePart
from .codegen import KernelPlan, compile_kernel, generate_kernel
from .dependence import LoopSchedule, build_schedule

__all__ = ["CompiledLoop", "ExecutablePart", "PartRejected", "ServerInterpreter",
           "WorkerPool", "execute_call", "optimize"]


class PartRejected(Exception):
    """The part cannot be accepted; the message is sent back verbatim."""


class WorkerPool:
    """Persistent threads for chunked loop execution.

    ``workers`` counts execution lanes including the calling thread, so
    a pool of 1 spawns nothing and runs tasks inline. Kernels release
    the GIL, which is where the overlap comes from.
    """

    def __init__(self, workers: int):
        if workers < 1:
            raise ValueError("workers must be >= 1")
        self.workers = workers
        self._queues: list[SimpleQueue] = []
        self._threads: list[threading.Thread] = []
        for k in range(workers - 1):
            q: SimpleQueue = SimpleQueue()
            t = threading.Thread(target=self._work, args=(q,),
                                 name=f"farcall-worker-{k}", daemon=True)
            t.start()
            self._queues.append(q)
            self._threads.append(t)

    @staticmethod
    def _work(q: SimpleQueue) -> None:
        while True:
            item = q.get()
            if item is None:
                return
            fn, slot, results, errors, done = item
            try:
                results[slot] = fn()
            except BaseException as e:  # noqa: BLE001 - reraised by run()
                errors[slot] = e
            finally:
                done.release()

    def run(self, tasks: list) -> list:
        """Run all tasks, the first on the calling thread, and return
        their results in order."""
        n = len(tasks)
        if n == 1:
            return [tasks[0]()]
        results: list = [None] * n
        errors: list = [None] * n
        done = threading.Semaphore(0)
        for k in range(1, n):
            self._queues[(k - 1) % len(self._queues)].put(
                (tasks[k], k, results, errors, done))
        try:
            results[0] = tasks[0]()
        except BaseException as e:  # noqa: BLE001
            errors[0] = e
        for _ in range(n - 1):
            done.acquire()
        for e in errors:
            if e is not None:
                raise e
        return results

    def shutdown(self) -> None:
        for q in self._queues:
            q.put(None)
        for t in self._threads:
            t.join()
        self._queues.clear()
        self._threads.clear()


@dataclass(frozen=True)
class CompiledLoop:
    kind: str  # "parallel" | "seq"
    plan: KernelPlan
    fn: object
    step: int


@dataclass
class ExecutablePart:
    program: ir.Program
    alias_mode: str
    workers: int
    vector_width: int
    table: dict[tuple[str, tuple[int, ...]], CompiledLoop] = field(default_factory=dict)
    schedules: dict[str, tuple[LoopSchedule, ...]] = field(default_factory=dict)

    def describe(self) -> list[str]:
        lines = []
        for name, scheds in self.schedules.items():
            for s in scheds:
                lines.append(f"{name}: {s.describe()}")
        return lines


def _loop_at(f: ir.Function, path: tuple[int, ...]) -> ir.Loop:
    blk = f.body
    for p in path[:-1]:
        blk = blk.statements[p].body
    stmt = blk.statements[path[-1]]
    assert isinstance(stmt, ir.Loop)
    return stmt


def optimize(part: RemotePart, *, workers: int = 1,
             vector_width: int = 1) -> ExecutablePart:
    """Validate, schedule, and compile a remote part.

    Raises PartRejected when the shipped source does not stand on its
    own (validation errors, missing exports). A part whose loops all
    prove sequential is still accepted; its kernels just run single
    threaded.
    """
    try:
        program = ir.parse_program(part.source)
    except ir.ValidationError as e:
        raise PartRejected(f"part source is invalid: {e}") from None
    except ir.ParseError as e:
        raise PartRejected(f"part source does not parse: {e}") from None
    for entry in part.exports:
        if not program.has_function(entry.name):
            raise PartRejected(f"exported function {entry.name!r} is not in the part")

    ep = ExecutablePart(program=program, alias_mode=part.alias_mode,
                        workers=workers, vector_width=vector_width)
    for f in program.functions:
        types = build_type_env(program, f)
        schedules: list[LoopSchedule] = []
        for region in detect_regions(f, part.alias_mode):
            for node in build_schedule(f, region):
                schedules.append(node)
                _install(ep, f, types, node)
        if schedules:
            ep.schedules[f.name] = tuple(schedules)
    return ep


def _install(ep: ExecutablePart, f: ir.Function, types: dict,
             node: LoopSchedule) -> None:
    if node.parallel:
        kind = "parallel"
    elif not node.children:
        kind = "seq"
    else:
        # driver level: the loop itself is interpreted, its children
        # have their own table entries
        for child in node.children:
            _install(ep, f, types, child)
        return
    loop = _loop_at(f, node.path)
    plan = generate_kernel(f, loop, node.path, types, ep.vector_width)
    fn = compile_kernel(plan, types)
    ep.table[(f.name, node.path)] = CompiledLoop(kind, plan, fn, loop.step)


def _chunks(lo: int, trips: int, step: int, parts: int) -> list[tuple[int, int]]:
    """Split [lo, lo + trips*step) into at most `parts` contiguous,
    nonempty index spans covering the same iterations in order."""
    base, rem = divmod(trips, parts)
    spans = []
    start = 0
    for k in range(parts):
        cnt = base + (1 if k < rem else 0)
        if cnt == 0:
            break
        spans.append((lo + step * start, lo + step * (start + cnt)))
        start += cnt
    return spans


class ServerInterpreter(Interpreter):
    """Evaluator that substitutes compiled kernels for scheduled loops."""

    def __init__(self, part: ExecutablePart, pool: WorkerPool):
        super().__init__(part.program)
        self.part = part
        self.pool = pool

    def _exec_loop(self, program, f, stmt, env, subpath, stats):
        node = self.part.table.get((f.name, subpath))
        if node is None:
            return super()._exec_loop(program, f, stmt, env, subpath, stats)
        lo = self._eval(stmt.lower, f, env, stmt.line)
        hi = self._eval(stmt.upper, f, env, stmt.line)
        trips = _trip_count(lo, hi, stmt.step)
        stats.count_loop((f.name, subpath), trips)
        if trips == 0:
            return
        plan = node.plan
        scal = [env.get(n, 0 if b == ir.Scalar.I64 else 0.0)
                for n, b in plan.scalars_in]
        arrs = [env[n].buf.reshape(env[n].shape) for n in plan.arrays]
        fn = node.fn

        if node.kind == "seq" or self.pool.workers == 1 or trips == 1:
            err = np.zeros(4, dtype=np.int64)
            outs = fn(lo, hi, *scal, *arrs, err)
            errbufs = [err]
        else:
            spans = _chunks(lo, trips, stmt.step, self.pool.workers)
            errbufs = [np.zeros(4, dtype=np.int64) for _ in spans]
            tasks = [
                (lambda c=clo, h=chi, eb=eb: fn(c, h, *scal, *arrs, eb))
                for (clo, chi), eb in zip(spans, errbufs)
            ]
            results = self.pool.run(tasks)
            outs = results[-1]

        # chunks are in iteration order, so the first recorded fault is
        # the one a sequential sweep would have hit first
        for eb in errbufs:
            if eb[0]:
                site = plan.sites[int(eb[1])]
                raise site.to_error(f.name, int(eb[2]))
        # scalar values after the loop are those of the final iteration,
        # which always lives in the last chunk
        for (n, b), val in zip(plan.liveouts, outs):
            env[n] = int(val) if b == ir.Scalar.I64 else float(val)


def execute_call(part: ExecutablePart, pool: WorkerPool, name: str,
                 args: list[Value]) -> tuple[Value | None, list[Value], float]:
    """Run one remote call. Returns (result, array args in call order,
    raw execution seconds). Faults and argument mismatches raise."""
    if not part.program.has_function(name):
        raise ValueError(f"unknown function {name!r}")
    interp = ServerInterpreter(part, pool)
    result, stats = interp.run(name, args)
    arrays = [v for v in args if v.vt.is_array]
    return result, arrays, stats.wall_seconds
