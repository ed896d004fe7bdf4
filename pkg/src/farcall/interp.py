"""Reference interpreter for the mini-IR.

A plain tree-walking evaluator: no JIT, no caching, no cleverness. It
is the semantic ground truth that remote execution must reproduce
bit-for-bit, and it is deliberately slow enough that shipping hot
functions elsewhere is worth measuring.

Semantics pinned here (and mirrored by the server's compiled code):

* i64 is two's-complement 64-bit with wrapping +, -, *, unary minus.
  Division is floor division; division by zero is a fault; the one
  overflowing quotient (INT64_MIN / -1) wraps to INT64_MIN.
* f64 is IEEE-754 binary64 with source evaluation order preserved; no
  reassociation, no fusing. Division by zero is not a fault: NaN
  numerators propagate, 0/0 gives the canonical quiet NaN, anything
  else gives a signed infinity (see :func:`f64_div`).
* Arrays are dense row-major buffers passed by reference; scalars are
  passed by value. Subscripts are bounds-checked per dimension; a
  negative index is out of bounds, never wraparound.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import ir
from .ir import Scalar, ValueType

__all__ = [
    "Value",
    "ExecStats",
    "InterpError",
    "OutOfBounds",
    "IntDivByZero",
    "Interpreter",
    "run",
    "f64_div",
    "f64_zero_div",
    "i64_wrap",
    "values_equal",
]

_MASK = (1 << 64) - 1
_SIGN = 1 << 63
I64_MIN = -(1 << 63)


def i64_wrap(v: int) -> int:
    """Reduce an unbounded int to two's-complement 64-bit."""
    v &= _MASK
    return v - (1 << 64) if v & _SIGN else v


def f64_zero_div(a: float, b: float) -> float:
    """IEEE quotient for a zero divisor (b is +0.0 or -0.0): propagate a
    NaN numerator, 0/0 is the canonical quiet NaN, else signed infinity.
    Written with math-module primitives only so the same source compiles
    under numba for the server-side kernels."""
    if a != a:
        return a
    if a == 0.0:
        return math.nan
    return math.copysign(math.inf, math.copysign(1.0, a) * math.copysign(1.0, b))


def f64_div(a: float, b: float) -> float:
    return (a / b) if b != 0.0 else f64_zero_div(a, b)


# ---------------------------------------------------------------------------
# Values


_DTYPES = {Scalar.I64: np.int64, Scalar.F64: np.float64}


@dataclass(frozen=True)
class Value:
    """A runtime value: i64 or f64 scalar, or a dense row-major array
    held as a flat 1-D numpy buffer."""

    vt: ValueType
    raw: int | float | np.ndarray

    @staticmethod
    def i64(v: int) -> "Value":
        return Value(ir.I64, i64_wrap(int(v)))

    @staticmethod
    def f64(v: float) -> "Value":
        return Value(ir.F64, float(v))

    @staticmethod
    def array(vt: ValueType, data: np.ndarray) -> "Value":
        if not vt.is_array:
            raise ValueError(f"{vt} is not an array type")
        buf = np.ascontiguousarray(data, dtype=_DTYPES[vt.base]).reshape(-1)
        if buf.size != vt.element_count:
            raise ValueError(
                f"{vt} holds {vt.element_count} elements, got {buf.size}"
            )
        return Value(vt, buf)

    @staticmethod
    def zeros(vt: ValueType) -> "Value":
        if vt.is_array:
            return Value(vt, np.zeros(vt.element_count, dtype=_DTYPES[vt.base]))
        return Value(vt, 0 if vt.base == Scalar.I64 else 0.0)

    def shaped(self) -> np.ndarray:
        """The array buffer viewed with its declared extents."""
        if not self.vt.is_array:
            raise ValueError("not an array value")
        return self.raw.reshape(self.vt.shape)


def _bits(x: float) -> int:
    return np.float64(x).view(np.uint64).item()


def values_equal(a: Value, b: Value) -> bool:
    """Bit-exact equality: f64 compares by bit pattern (NaN payloads and
    signed zeros included)."""
    if a.vt != b.vt:
        return False
    if a.vt.is_array:
        av, bv = a.raw, b.raw
        if a.vt.base == Scalar.F64:
            return bool(np.array_equal(av.view(np.uint64), bv.view(np.uint64)))
        return bool(np.array_equal(av, bv))
    if a.vt.base == Scalar.F64:
        return _bits(a.raw) == _bits(b.raw)
    return a.raw == b.raw


# ---------------------------------------------------------------------------
# Faults


class InterpError(Exception):
    """Runtime fault; message text is the canonical diagnostic that a
    remote executor must reproduce."""


class OutOfBounds(InterpError):
    def __init__(self, function: str, kind: str, array: str, dim: int, index: int,
                 extent: int, line: int):
        self.function = function
        self.kind = kind
        self.array = array
        self.dim = dim
        self.index = index
        self.extent = extent
        self.line = line
        super().__init__(
            f"{function}: out-of-bounds {kind} on {array}: index {index} outside "
            f"[0, {extent}) in dimension {dim} (line {line})"
        )


class IntDivByZero(InterpError):
    def __init__(self, function: str, line: int):
        self.function = function
        self.line = line
        super().__init__(f"{function}: integer division by zero (line {line})")


# ---------------------------------------------------------------------------
# Stats


@dataclass
class ExecStats:
    """Profile counters from one top-level run.

    loop_iterations counts body entries per loop, keyed by
    (function name, statement-index path); call_counts and
    remote_calls are per function name."""

    call_counts: dict[str, int] = field(default_factory=dict)
    loop_iterations: dict[tuple[str, tuple[int, ...]], int] = field(default_factory=dict)
    remote_calls: dict[str, int] = field(default_factory=dict)
    wall_seconds: float = 0.0

    def count_call(self, name: str) -> None:
        self.call_counts[name] = self.call_counts.get(name, 0) + 1

    def count_remote(self, name: str) -> None:
        self.remote_calls[name] = self.remote_calls.get(name, 0) + 1

    def count_loop(self, key: tuple[str, tuple[int, ...]], trips: int) -> None:
        self.loop_iterations[key] = self.loop_iterations.get(key, 0) + trips


# ---------------------------------------------------------------------------
# Interpreter


class _ArrayRef:
    """Mutable array binding: flat buffer plus precomputed strides."""

    __slots__ = ("buf", "shape", "strides")

    def __init__(self, buf: np.ndarray, shape: tuple[int, ...]):
        self.buf = buf
        self.shape = shape
        strides = []
        acc = 1
        for d in reversed(shape):
            strides.append(acc)
            acc *= d
        self.strides = tuple(reversed(strides))


def _trip_count(lo: int, hi: int, step: int) -> int:
    if hi <= lo:
        return 0
    return -((lo - hi) // step)  # ceil((hi - lo) / step)


class Interpreter:
    """Tree-walking evaluator over a program (or over whatever a
    program provider returns at each call, which lets a client runtime
    swap in a guarded program between calls: calls already dispatched
    keep running against the program object they started with)."""

    def __init__(self, program: ir.Program | Callable[[], object],
                 on_call: Callable[[str], None] | None = None):
        self._provider = program if callable(program) else (lambda: program)
        self.on_call = on_call

    # -- public

    def run(self, entry: str | None = None, args: list[Value] | tuple[Value, ...] = ()) \
            -> tuple[Value | None, ExecStats]:
        program = self._provider()
        name = entry if entry is not None else program.entry
        stats = ExecStats()
        t0 = time.perf_counter()
        result = self._dispatch(program, name, list(args), stats)
        stats.wall_seconds = time.perf_counter() - t0
        return result, stats

    # -- call dispatch (local vs guarded-remote)

    def _dispatch(self, program, name: str, args: list[Value], stats: ExecStats) \
            -> Value | None:
        f = program.function(name)
        if len(args) != len(f.params):
            raise ValueError(f"{name} takes {len(f.params)} arguments, got {len(args)}")
        for v, (pname, ptype) in zip(args, f.params):
            if v.vt != ptype:
                raise ValueError(
                    f"{name}: argument {pname!r} must be {ptype}, got {v.vt}"
                )
        stats.count_call(name)
        if self.on_call is not None:
            self.on_call(name)
        guard = getattr(program, "guard_for", None)
        binding = guard(name) if guard is not None else None
        if binding is not None and binding.take_remote(args):
            stats.count_remote(name)
            return binding.invoke(args)
        return self._exec_function(program, f, args, stats)

    # -- evaluation

    def _exec_function(self, program, f: ir.Function, args: list[Value],
                       stats: ExecStats) -> Value | None:
        env: dict[str, object] = {}
        for v, (pname, ptype) in zip(args, f.params):
            if ptype.is_array:
                env[pname] = _ArrayRef(v.raw, ptype.shape)
            elif ptype.base == Scalar.I64:
                env[pname] = int(v.raw)
            else:
                env[pname] = float(v.raw)
        ret = self._exec_block(program, f, f.body, env, (), stats)
        if f.result is None:
            return None
        if f.result.base == Scalar.I64:
            return Value(ir.I64, ret)
        return Value(ir.F64, ret)

    def _exec_block(self, program, f: ir.Function, block: ir.Block,
                    env: dict, path: tuple[int, ...], stats: ExecStats):
        for i, stmt in enumerate(block.statements):
            cls = type(stmt)
            if cls is ir.Store:
                ref = env[stmt.array]
                offset = 0
                for dim, (idx_expr, extent, stride) in enumerate(
                    zip(stmt.indices, ref.shape, ref.strides)
                ):
                    idx = self._eval(idx_expr, f, env, stmt.line)
                    if idx < 0 or idx >= extent:
                        raise OutOfBounds(f.name, "store", stmt.array, dim, idx,
                                          extent, stmt.line)
                    offset += idx * stride
                ref.buf[offset] = self._eval(stmt.value, f, env, stmt.line)
            elif cls is ir.Assign:
                env[stmt.name] = self._eval(stmt.value, f, env, stmt.line)
            elif cls is ir.Loop:
                self._exec_loop(program, f, stmt, env, path + (i,), stats)
            elif cls is ir.Call:
                callee = program.function(stmt.target)
                call_args: list[Value] = []
                for arg, (_, ptype) in zip(stmt.args, callee.params):
                    if ptype.is_array:
                        ref = env[arg.name]
                        call_args.append(Value(ptype, ref.buf))
                    else:
                        raw = self._eval(arg, f, env, stmt.line)
                        call_args.append(Value(ptype, raw))
                result = self._dispatch(program, stmt.target, call_args, stats)
                if stmt.result is not None:
                    raw = result.raw
                    env[stmt.result] = int(raw) if callee.result.base == Scalar.I64 \
                        else float(raw)
            elif cls is ir.Return:
                if stmt.value is None:
                    return None
                return self._eval(stmt.value, f, env, stmt.line)
        return None

    def _exec_loop(self, program, f: ir.Function, stmt: ir.Loop, env: dict,
                   subpath: tuple[int, ...], stats: ExecStats) -> None:
        """Run one counted loop. Subclasses may intercept specific loops
        (the server substitutes compiled kernels here)."""
        lo = self._eval(stmt.lower, f, env, stmt.line)
        hi = self._eval(stmt.upper, f, env, stmt.line)
        trips = _trip_count(lo, hi, stmt.step)
        stats.count_loop((f.name, subpath), trips)
        body = stmt.body
        index = stmt.index
        for v in range(lo, hi, stmt.step):
            env[index] = v
            self._exec_block(program, f, body, env, subpath, stats)
        env.pop(index, None)

    def _eval(self, e: ir.Expr, f: ir.Function, env: dict, line: int):
        cls = type(e)
        if cls is ir.Load:
            ref = env[e.array]
            offset = 0
            for dim, (idx_expr, extent, stride) in enumerate(
                zip(e.indices, ref.shape, ref.strides)
            ):
                idx = self._eval(idx_expr, f, env, line)
                if idx < 0 or idx >= extent:
                    raise OutOfBounds(f.name, "load", e.array, dim, idx, extent, line)
                offset += idx * stride
            v = ref.buf[offset]
            return int(v) if ref.buf.dtype == np.int64 else float(v)
        if cls is ir.ScalarRef:
            return env[e.name]
        if cls is ir.IntLit:
            return e.value
        if cls is ir.FloatLit:
            return e.value
        if cls is ir.BinOp:
            a = self._eval(e.lhs, f, env, line)
            b = self._eval(e.rhs, f, env, line)
            op = e.op
            if type(a) is float:
                if op == "+":
                    return a + b
                if op == "-":
                    return a - b
                if op == "*":
                    return a * b
                return f64_div(a, b)
            if op == "+":
                return i64_wrap(a + b)
            if op == "-":
                return i64_wrap(a - b)
            if op == "*":
                return i64_wrap(a * b)
            if b == 0:
                raise IntDivByZero(f.name, line)
            return i64_wrap(-a if b == -1 else a // b)
        if cls is ir.Neg:
            v = self._eval(e.operand, f, env, line)
            return -v if type(v) is float else i64_wrap(-v)
        raise TypeError(f"not an expression: {e!r}")  # pragma: no cover


def run(p: ir.Program, entry: str | None = None,
        args: list[Value] | tuple[Value, ...] = ()) -> tuple[Value | None, ExecStats]:
    """Execute ``entry`` (default: the program's entry) with the given
    argument Values. Arrays are mutated in place; the result value and
    the run's ExecStats are returned."""
    return Interpreter(p).run(entry, args)
