"""Dependence proofs for region loops, exact by enumeration.

A loop may run its iterations in parallel when no two distinct values
of its index touch the same array cell with at least one write, and no
scalar carries a value from one iteration into the next. Both facts
are established by walking the actual iteration domain: subscripts in
regions are affine, so every access can be evaluated to a concrete
cell. Bounds that depend on function parameters (or on indices of
loops enclosing the analyzed one) are instantiated at a fixed default
trip before enumeration; constant and triangular bounds are walked
exactly as declared.

Negative verdicts always carry a witness: two iteration vectors and
the cell they collide on, checkable by re-evaluating both subscripts.
Scalar-carried loops use the scalar's name with an empty cell.

Enumeration is linear in the domain: a per-cell record of which outer
iterations wrote and read it replaces the quadratic pair search, and a
negative verdict stops at the first collision.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .. import ir
from ..analysis import DEFAULT_TRIP, Region

__all__ = [
    "Conflict",
    "DependenceVerdict",
    "InternalAnalysisError",
    "check_loop_parallel",
    "LoopSchedule",
    "build_schedule",
]


class InternalAnalysisError(Exception):
    """A non-affine access reached the dependence check; region
    detection should have excluded it."""


@dataclass(frozen=True)
class Conflict:
    """Two iteration vectors of one loop nest that touch the same cell,
    at least one writing. For scalar-carried dependences the 'array' is
    the scalar's name and the cell is empty."""

    array: str
    cell: tuple[int, ...]
    iter_a: tuple[int, ...]
    iter_b: tuple[int, ...]
    kind_a: str  # "write" | "read"
    kind_b: str


@dataclass(frozen=True)
class DependenceVerdict:
    parallel: bool
    witness: Conflict | None = None
    reason: str = ""
    points: int = 0  # iteration instances enumerated

    def __post_init__(self):
        if not self.parallel and self.witness is None:
            raise ValueError("negative verdicts must carry a witness")


# ---------------------------------------------------------------------------
# Access collection


@dataclass(frozen=True)
class _Site:
    array: str
    # per dimension: (constant, ((symbol, coefficient), ...))
    forms: tuple[tuple[int, tuple[tuple[str, int], ...]], ...]
    is_write: bool


def _scalar_reads(e: ir.Expr, out: list[str]) -> None:
    if isinstance(e, ir.ScalarRef):
        out.append(e.name)
    elif isinstance(e, ir.Load):
        for ix in e.indices:
            _scalar_reads(ix, out)
    elif isinstance(e, ir.BinOp):
        _scalar_reads(e.lhs, out)
        _scalar_reads(e.rhs, out)
    elif isinstance(e, ir.Neg):
        _scalar_reads(e.operand, out)


def _subtree_scalar_reads(stmt: ir.Statement, out: list[str]) -> None:
    if isinstance(stmt, ir.Assign):
        _scalar_reads(stmt.value, out)
    elif isinstance(stmt, ir.Store):
        for ix in stmt.indices:
            _scalar_reads(ix, out)
        _scalar_reads(stmt.value, out)
    elif isinstance(stmt, ir.Loop):
        _scalar_reads(stmt.lower, out)
        _scalar_reads(stmt.upper, out)
        for s in stmt.body.statements:
            _subtree_scalar_reads(s, out)


def _assigned_scalars(stmt: ir.Statement, out: set[str]) -> None:
    if isinstance(stmt, ir.Assign):
        out.add(stmt.name)
    elif isinstance(stmt, ir.Loop):
        for s in stmt.body.statements:
            _assigned_scalars(s, out)


def scalar_carried(loop: ir.Loop) -> str | None:
    """Name of a scalar whose value flows between iterations of
    ``loop``, or None. A read of a loop-written scalar counts as
    carried unless a write at this body's top level certainly happened
    earlier in the same iteration; anything read or written only inside
    nested loops is judged conservatively (they may run zero times)."""
    written: set[str] = set()
    for s in loop.body.statements:
        _assigned_scalars(s, written)
    if not written:
        return None
    defined: set[str] = set()
    for stmt in loop.body.statements:
        reads: list[str] = []
        if isinstance(stmt, ir.Assign):
            _scalar_reads(stmt.value, reads)
        elif isinstance(stmt, ir.Store):
            for ix in stmt.indices:
                _scalar_reads(ix, reads)
            _scalar_reads(stmt.value, reads)
        elif isinstance(stmt, ir.Loop):
            _subtree_scalar_reads(stmt, reads)
        for r in reads:
            if r in written and r not in defined:
                return r
        if isinstance(stmt, ir.Assign):
            defined.add(stmt.name)
    return None


# ---------------------------------------------------------------------------
# Affine machinery


def _resolve_form(e: ir.Expr, chain: tuple[str, ...], outer_env: dict[str, int],
                  what: str) -> tuple[int, tuple[tuple[str, int], ...]]:
    """Affine form of ``e`` with everything outside the nest's own
    indices folded into the constant."""
    syms = frozenset(chain) | frozenset(outer_env)
    form = ir.affine_form(e, syms, frozenset())
    if form is None:
        raise InternalAnalysisError(f"non-affine {what} reached the dependence check")
    const, coeffs = form
    live: list[tuple[str, int]] = []
    for name, c in coeffs.items():
        if name in chain:
            live.append((name, c))
        else:
            const += c * outer_env[name]
    return const, tuple(live)


class _CellRecord:
    """Per-cell summary sufficient to detect any cross-iteration
    conflict: representatives of up to two distinct outer indices for
    writes and for reads."""

    __slots__ = ("w1", "w2", "r1", "r2")

    def __init__(self):
        self.w1 = self.w2 = self.r1 = self.r2 = None  # (outer, itervec)

    def add(self, outer: int, vec: tuple[int, ...], is_write: bool):
        """Record the access; return a conflicting earlier access
        (itervec, kind) if one exists."""
        if is_write:
            if self.w1 is None:
                self.w1 = (outer, vec)
            elif self.w1[0] != outer and self.w2 is None:
                self.w2 = (outer, vec)
            for rec, kind in ((self.w1, "write"), (self.r1, "read"),
                              (self.r2, "read")):
                if rec is not None and rec[0] != outer:
                    return rec[1], kind
        else:
            if self.r1 is None:
                self.r1 = (outer, vec)
            elif self.r1[0] != outer and self.r2 is None:
                self.r2 = (outer, vec)
            for rec, kind in ((self.w1, "write"), (self.w2, "write")):
                if rec is not None and rec[0] != outer:
                    return rec[1], kind
        return None


def _gather_sites(stmt: ir.Statement, chain: tuple[str, ...],
                  outer_env: dict[str, int]) -> list[_Site]:
    """Array accesses of one non-loop statement, reads and writes."""
    sites: list[_Site] = []

    def from_expr(e: ir.Expr) -> None:
        if isinstance(e, ir.Load):
            for ix in e.indices:
                from_expr(ix)
            sites.append(_Site(
                e.array,
                tuple(_resolve_form(ix, chain, outer_env, "subscript")
                      for ix in e.indices),
                False,
            ))
        elif isinstance(e, ir.BinOp):
            from_expr(e.lhs)
            from_expr(e.rhs)
        elif isinstance(e, ir.Neg):
            from_expr(e.operand)

    if isinstance(stmt, ir.Assign):
        from_expr(stmt.value)
    elif isinstance(stmt, ir.Store):
        for ix in stmt.indices:
            from_expr(ix)
        from_expr(stmt.value)
        sites.append(_Site(
            stmt.array,
            tuple(_resolve_form(ix, chain, outer_env, "subscript")
                  for ix in stmt.indices),
            True,
        ))
    return sites


def check_loop_parallel(loop: ir.Loop, region: Region | None = None, *,
                        outer_env: dict[str, int] | None = None,
                        default_trip: int = DEFAULT_TRIP) -> DependenceVerdict:
    """Prove ``loop`` parallel or produce a counterexample.

    ``outer_env`` gives concrete values for symbols that are fixed with
    respect to this loop (function parameters and indices of enclosing
    loops); anything it omits is instantiated at ``default_trip``.
    ``region`` is accepted for context but the proof works from the
    loop itself.
    """
    carried = scalar_carried(loop)
    if carried is not None:
        # two consecutive iterations witness the scalar flow
        try:
            lo = _eval_bound(loop.lower, dict(outer_env or {}), default_trip)
        except InternalAnalysisError:
            lo = 0
        return DependenceVerdict(
            parallel=False,
            witness=Conflict(carried, (), (lo,), (lo + loop.step,), "write", "read"),
            reason=f"scalar {carried} carries a value between iterations",
        )

    env = dict(outer_env or {})
    cells: dict[tuple, _CellRecord] = {}
    points = 0

    # plan the nest once: loops and their statement sites, bounds as
    # affine forms over the chain built so far
    def run_loop(lp: ir.Loop, chain: tuple[str, ...],
                 idx: dict[str, int], outer: int | None) -> Conflict | None:
        nonlocal points
        lo_c, lo_v = _resolve_form(lp.lower, chain, env, "loop bound")
        hi_c, hi_v = _resolve_form(lp.upper, chain, env, "loop bound")
        lo = lo_c + sum(c * idx[s] for s, c in lo_v)
        hi = hi_c + sum(c * idx[s] for s, c in hi_v)
        inner_chain = chain + (lp.index,)
        plans = []
        for stmt in lp.body.statements:
            if isinstance(stmt, ir.Loop):
                plans.append(stmt)
            else:
                plans.append(_gather_sites(stmt, inner_chain, env))
        for v in range(lo, hi, lp.step):
            idx[lp.index] = v
            this_outer = v if outer is None else outer
            for plan in plans:
                if isinstance(plan, ir.Loop):
                    hit = run_loop(plan, inner_chain, idx, this_outer)
                    if hit is not None:
                        return hit
                    continue
                points += 1
                vec = tuple(idx[s] for s in inner_chain)
                for site in plan:
                    cell = (site.array,) + tuple(
                        c0 + sum(c * idx[s] for s, c in cv)
                        for c0, cv in site.forms
                    )
                    rec = cells.get(cell)
                    if rec is None:
                        rec = cells[cell] = _CellRecord()
                    hit = rec.add(this_outer, vec, site.is_write)
                    if hit is not None:
                        other_vec, other_kind = hit
                        return Conflict(site.array, cell[1:], other_vec, vec,
                                        other_kind,
                                        "write" if site.is_write else "read")
        idx.pop(lp.index, None)
        return None

    # instantiate any free symbol the caller did not pin
    for name in _free_symbols(loop):
        env.setdefault(name, default_trip)

    witness = run_loop(loop, (), {}, None)
    if witness is not None:
        return DependenceVerdict(False, witness,
                                 reason=f"conflict on {witness.array}",
                                 points=points)
    return DependenceVerdict(True, None, reason="no cross-iteration conflicts",
                             points=points)


def _eval_bound(e: ir.Expr, env: dict[str, int], default_trip: int) -> int:
    names: list[str] = []
    _scalar_reads(e, names)
    form = ir.affine_form(e, frozenset(names), frozenset())
    if form is None:
        raise InternalAnalysisError("non-affine loop bound")
    const, coeffs = form
    return const + sum(c * env.get(s, default_trip) for s, c in coeffs.items())


def _free_symbols(loop: ir.Loop) -> set[str]:
    """Scalar names read anywhere in the nest that no loop of the nest
    binds: function parameters and enclosing indices."""
    reads: list[str] = []
    _subtree_scalar_reads(loop, reads)
    bound: set[str] = set()

    def collect(lp: ir.Loop) -> None:
        bound.add(lp.index)
        for s in lp.body.statements:
            if isinstance(s, ir.Loop):
                collect(s)

    collect(loop)
    assigned: set[str] = set()
    for s in loop.body.statements:
        _assigned_scalars(s, assigned)
    return set(reads) - bound - assigned


# ---------------------------------------------------------------------------
# Schedules


@dataclass(frozen=True)
class LoopSchedule:
    """One loop's placement in the executable plan. Parallel nodes own
    their whole subtree; sequential nodes list schedules for the loops
    directly below them."""

    path: tuple[int, ...]
    parallel: bool
    verdict: DependenceVerdict
    children: tuple["LoopSchedule", ...] = ()

    def describe(self) -> str:
        label = "Parallel" if self.parallel else "Sequential"
        mine = f"{'.'.join(map(str, self.path))}={label}"
        return " ".join([mine] + [c.describe() for c in self.children])


def build_schedule(f: ir.Function, region: Region, *,
                   outer_env: dict[str, int] | None = None,
                   default_trip: int = DEFAULT_TRIP) -> list[LoopSchedule]:
    """Schedule every outermost loop of a region: parallel if proven,
    otherwise sequential with its direct child loops scheduled the same
    way recursively."""

    def schedule(loop: ir.Loop, path: tuple[int, ...]) -> LoopSchedule:
        verdict = check_loop_parallel(loop, region, outer_env=outer_env,
                                      default_trip=default_trip)
        if verdict.parallel:
            return LoopSchedule(path, True, verdict)
        children = tuple(
            schedule(s, path + (i,))
            for i, s in enumerate(loop.body.statements)
            if isinstance(s, ir.Loop)
        )
        return LoopSchedule(path, False, verdict, children)

    out: list[LoopSchedule] = []
    for i, stmt in enumerate(region.statements(f)):
        if isinstance(stmt, ir.Loop):
            out.append(schedule(stmt, region.block_path + (region.start + i,)))
    return out
