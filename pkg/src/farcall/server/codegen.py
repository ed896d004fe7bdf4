"""Compile region loops to native kernels.

A kernel covers one scheduled loop and its whole subtree. The source
is emitted in A-normal form so that evaluation order, bounds checks,
and division guards fire in exactly the order the interpreter uses;
that, plus unfused IEEE arithmetic and the shared division-by-zero
formula, is what makes compiled results bit-identical to interpreted
ones.

Faults do not raise inside a kernel. Each guarded access gets a site
id; on failure the kernel records (code, site, index) in its error
buffer and returns early. The driver rebuilds the interpreter's own
exception from the site table, so remote diagnostics match local ones
verbatim.

The kernel's outer loop runs over caller-supplied [lo, hi) so one
compiled body serves both a sequential sweep and any contiguous chunk
of a parallel one. Scalars assigned anywhere in the subtree are
returned as a tuple (their values after the final iteration executed);
scalars only read come in as arguments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .. import ir
from ..interp import IntDivByZero, OutOfBounds, f64_zero_div

__all__ = ["FaultSite", "KernelPlan", "generate_kernel", "compile_kernel",
           "FAULT_OOB", "FAULT_DIV"]

FAULT_OOB = 1
FAULT_DIV = 2

_zero_div = njit(nogil=True)(f64_zero_div)


@njit(nogil=True)
def _fdiv(a, b):
    return (a / b) if b != 0.0 else _zero_div(a, b)


@dataclass(frozen=True)
class FaultSite:
    kind: str  # "load" | "store" | "idiv"
    array: str
    dim: int
    extent: int
    line: int

    def to_error(self, function: str, index: int) -> Exception:
        if self.kind == "idiv":
            return IntDivByZero(function, self.line)
        return OutOfBounds(function, self.kind, self.array, self.dim,
                           index, self.extent, self.line)


@dataclass(frozen=True)
class KernelPlan:
    function: str
    path: tuple[int, ...]
    name: str
    source: str
    step: int
    arrays: tuple[str, ...]                      # in parameter order
    scalars_in: tuple[tuple[str, ir.Scalar], ...]
    liveouts: tuple[tuple[str, ir.Scalar], ...]
    sites: tuple[FaultSite, ...]


class _Emitter:
    def __init__(self, f: ir.Function, types: dict[str, ir.ValueType],
                 vector_width: int):
        self.f = f
        self.types = types
        self.width = vector_width
        self.lines: list[str] = []
        self.sites: list[FaultSite] = []
        self.tmp = 0
        self.blk = 0

    def fresh(self) -> str:
        self.tmp += 1
        return f"t{self.tmp}"

    def out(self, depth: int, text: str) -> None:
        self.lines.append("    " * depth + text)

    def site(self, s: FaultSite) -> int:
        self.sites.append(s)
        return len(self.sites) - 1

    def fault(self, depth: int, code: int, site_id: int, idx_atom: str,
              ret: str) -> None:
        self.out(depth, f"_err[0] = {code}")
        self.out(depth, f"_err[1] = {site_id}")
        self.out(depth, f"_err[2] = {idx_atom}")
        self.out(depth, f"return {ret}")

    def base_of(self, e: ir.Expr) -> ir.Scalar:
        if isinstance(e, ir.IntLit):
            return ir.Scalar.I64
        if isinstance(e, ir.FloatLit):
            return ir.Scalar.F64
        if isinstance(e, ir.ScalarRef):
            return self.types[e.name].base
        if isinstance(e, ir.Load):
            return self.types[e.array].base
        if isinstance(e, ir.Neg):
            return self.base_of(e.operand)
        return self.base_of(e.lhs)

    # -- expressions, A-normal: emit support lines, return an atom

    def atom(self, e: ir.Expr, depth: int, line: int, ret: str) -> str:
        if isinstance(e, ir.IntLit):
            return repr(e.value)
        if isinstance(e, ir.FloatLit):
            return repr(e.value)
        if isinstance(e, ir.ScalarRef):
            return f"v_{e.name}"
        if isinstance(e, ir.Neg):
            a = self.atom(e.operand, depth, line, ret)
            t = self.fresh()
            self.out(depth, f"{t} = -{a}")
            return t
        if isinstance(e, ir.Load):
            idx = self.checked_indices(e.array, e.indices, "load", depth,
                                       line, ret)
            t = self.fresh()
            self.out(depth, f"{t} = a_{e.array}[{', '.join(idx)}]")
            return t
        # BinOp: left fully before right, like the evaluator
        a = self.atom(e.lhs, depth, line, ret)
        b = self.atom(e.rhs, depth, line, ret)
        t = self.fresh()
        if e.op == "/":
            if self.base_of(e.lhs) == ir.Scalar.F64:
                self.out(depth, f"{t} = _fdiv({a}, {b})")
            else:
                sid = self.site(FaultSite("idiv", "", 0, 0, line))
                self.out(depth, f"if {b} == 0:")
                self.fault(depth + 1, FAULT_DIV, sid, "0", ret)
                self.out(depth, f"{t} = -{a} if {b} == -1 else {a} // {b}")
        else:
            self.out(depth, f"{t} = {a} {e.op} {b}")
        return t

    def checked_indices(self, array: str, indices, kind: str, depth: int,
                        line: int, ret: str) -> list[str]:
        """Evaluate and bounds-check subscripts dimension by dimension,
        in that interleaved order."""
        shape = self.types[array].shape
        out = []
        for dim, (ix, extent) in enumerate(zip(indices, shape)):
            a = self.atom(ix, depth, line, ret)
            sid = self.site(FaultSite(kind, array, dim, extent, line))
            self.out(depth, f"if {a} < 0 or {a} >= {extent}:")
            self.fault(depth + 1, FAULT_OOB, sid, a, ret)
            out.append(a)
        return out

    # -- statements

    def statement(self, stmt: ir.Statement, depth: int, ret: str) -> None:
        if isinstance(stmt, ir.Assign):
            a = self.atom(stmt.value, depth, stmt.line, ret)
            self.out(depth, f"v_{stmt.name} = {a}")
        elif isinstance(stmt, ir.Store):
            idx = self.checked_indices(stmt.array, stmt.indices, "store",
                                       depth, stmt.line, ret)
            a = self.atom(stmt.value, depth, stmt.line, ret)
            self.out(depth, f"a_{stmt.array}[{', '.join(idx)}] = {a}")
        elif isinstance(stmt, ir.Loop):
            self.loop(stmt, depth, ret)
        else:
            raise AssertionError(f"{type(stmt).__name__} cannot appear in a region")

    def loop(self, stmt: ir.Loop, depth: int, ret: str) -> None:
        lo = self.atom(stmt.lower, depth, stmt.line, ret)
        hi = self.atom(stmt.upper, depth, stmt.line, ret)
        innermost = not any(isinstance(s, ir.Loop) for s in stmt.body.statements)
        if innermost and self.width > 1:
            # fixed-width element groups; iteration order is unchanged,
            # the grouping only exposes short fixed trip counts
            self.blk += 1
            b, e = f"_b{self.blk}", f"_e{self.blk}"
            stride = self.width * stmt.step
            self.out(depth, f"for {b} in range({lo}, {hi}, {stride}):")
            self.out(depth + 1, f"{e} = {b} + {stride}")
            self.out(depth + 1, f"if {e} > {hi}:")
            self.out(depth + 2, f"{e} = {hi}")
            self.out(depth + 1, f"for v_{stmt.index} in range({b}, {e}, {stmt.step}):")
            for s in stmt.body.statements:
                self.statement(s, depth + 2, ret)
        else:
            self.out(depth, f"for v_{stmt.index} in range({lo}, {hi}, {stmt.step}):")
            for s in stmt.body.statements:
                self.statement(s, depth + 1, ret)

    def root_loop(self, stmt: ir.Loop, ret: str) -> None:
        """The kernel's own loop runs over the [_lo, _hi) parameters."""
        innermost = not any(isinstance(s, ir.Loop) for s in stmt.body.statements)
        if innermost and self.width > 1:
            stride = self.width * stmt.step
            self.out(1, f"for _b0 in range(_lo, _hi, {stride}):")
            self.out(2, f"_e0 = _b0 + {stride}")
            self.out(2, "if _e0 > _hi:")
            self.out(3, "_e0 = _hi")
            self.out(2, f"for v_{stmt.index} in range(_b0, _e0, {stmt.step}):")
            for s in stmt.body.statements:
                self.statement(s, 3, ret)
        else:
            self.out(1, f"for v_{stmt.index} in range(_lo, _hi, {stmt.step}):")
            for s in stmt.body.statements:
                self.statement(s, 2, ret)


def _collect_names(stmt: ir.Statement, reads: list[str], writes: list[str],
                   arrays: list[str], bound: set[str]) -> None:
    def expr(e: ir.Expr) -> None:
        if isinstance(e, ir.ScalarRef):
            reads.append(e.name)
        elif isinstance(e, ir.Load):
            arrays.append(e.array)
            for ix in e.indices:
                expr(ix)
        elif isinstance(e, ir.BinOp):
            expr(e.lhs)
            expr(e.rhs)
        elif isinstance(e, ir.Neg):
            expr(e.operand)

    if isinstance(stmt, ir.Assign):
        expr(stmt.value)
        writes.append(stmt.name)
    elif isinstance(stmt, ir.Store):
        arrays.append(stmt.array)
        for ix in stmt.indices:
            expr(ix)
        expr(stmt.value)
    elif isinstance(stmt, ir.Loop):
        expr(stmt.lower)
        expr(stmt.upper)
        bound.add(stmt.index)
        for s in stmt.body.statements:
            _collect_names(s, reads, writes, arrays, bound)


def generate_kernel(f: ir.Function, loop: ir.Loop, path: tuple[int, ...],
                    types: dict[str, ir.ValueType],
                    vector_width: int = 1) -> KernelPlan:
    """Emit one kernel covering ``loop``'s subtree, parameterized over
    the outer index range."""
    reads: list[str] = []
    writes: list[str] = []
    arrays: list[str] = []
    bound: set[str] = set()
    bound.add(loop.index)
    # the outer loop's bounds are evaluated by the driver, not here
    for s in loop.body.statements:
        _collect_names(s, reads, writes, arrays, bound)

    array_order = [name for name, vt in f.params if vt.is_array and name in set(arrays)]
    liveouts = tuple(sorted(set(writes)))
    scal_in = tuple(sorted((set(reads) | set(writes)) - bound))
    scalars_in = tuple((n, types[n].base) for n in scal_in)
    liveouts_t = tuple((n, types[n].base) for n in liveouts)

    kname = f"_kernel_{f.name}_{'_'.join(map(str, path))}"
    em = _Emitter(f, types, vector_width)
    if liveouts:
        ret = "(" + ", ".join(f"v_{n}" for n in liveouts) + ("," if len(liveouts) == 1 else "") + ")"
    else:
        ret = "(0,)"
    params = (["_lo", "_hi"]
              + [f"v_{n}" for n in scal_in]
              + [f"a_{n}" for n in array_order]
              + ["_err"])
    em.out(0, f"def {kname}({', '.join(params)}):")
    em.root_loop(loop, ret)
    em.out(1, f"return {ret}")

    return KernelPlan(
        function=f.name,
        path=path,
        name=kname,
        source="\n".join(em.lines) + "\n",
        step=loop.step,
        arrays=tuple(array_order),
        scalars_in=scalars_in,
        liveouts=liveouts_t,
        sites=tuple(em.sites),
    )


def compile_kernel(plan: KernelPlan, types: dict[str, ir.ValueType]):
    """Compile the plan and warm it with a zero-trip call so the first
    real call pays no JIT latency."""
    ns: dict[str, object] = {"_fdiv": _fdiv}
    exec(plan.source, ns)  # noqa: S102 - source is generated here, not user input
    fn = njit(nogil=True)(ns[plan.name])
    dummy_scal = [0 if base == ir.Scalar.I64 else 0.0
                  for _, base in plan.scalars_in]
    dummy_arr = [
        np.empty(types[name].shape,
                 dtype=np.int64 if types[name].base == ir.Scalar.I64 else np.float64)
        for name in plan.arrays
    ]
    err = np.zeros(4, dtype=np.int64)
    fn(0, 0, *dummy_scal, *dummy_arr, err)
    return fn
