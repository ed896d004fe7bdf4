"""Static analysis that drives offload decisions.

Four stages, each usable on its own:

1. Block frequency estimation: how often each loop body runs, from
   constant bounds where possible and a fixed guess everywhere else.
2. Candidate selection: functions whose hottest block clears a
   threshold are worth looking at; everything else stays local.
3. Region detection: maximal straight runs of statements whose loops
   and subscripts are fully affine and call-free. These are the parts
   a remote optimizer can reason about.
4. Scoring: weighted arithmetic-operation counts times estimated
   frequency, summed per region. A function with a positive score has
   provably hot, analyzable compute and gets exported.

Frequencies are plain ints, scores exact Fractions: no float rounding
inside the decision pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

from . import ir
from .interp import ExecStats

__all__ = [
    "DEFAULT_TRIP",
    "DEFAULT_THRESHOLD",
    "ALIAS_MODES",
    "BlockFreqMap",
    "estimate_frequencies",
    "select_candidates",
    "Region",
    "detect_regions",
    "build_type_env",
    "OpCounts",
    "count_loop_ops",
    "Weights",
    "LoopRow",
    "ScoreReport",
    "score_function",
    "AnalysisConfig",
    "FunctionAnalysis",
    "analyze_program",
]

DEFAULT_TRIP = 100
DEFAULT_THRESHOLD = 10_000

ALIAS_MODES = ("conservative", "ignore")


# ---------------------------------------------------------------------------
# Frequency estimation


def _const_trip(loop: ir.Loop) -> int | None:
    lo = ir.affine_form(loop.lower, frozenset(), frozenset())
    hi = ir.affine_form(loop.upper, frozenset(), frozenset())
    if lo is None or hi is None:
        return None
    span = hi[0] - lo[0]
    if span <= 0:
        return 0
    return -(-span // loop.step)


@dataclass
class BlockFreqMap:
    """Estimated (or measured) entry counts for every loop body, keyed
    by (function name, statement-index path of the loop). The key
    (name, ()) holds the function's entry-block count."""

    freqs: dict[tuple[str, tuple[int, ...]], int] = field(default_factory=dict)

    def get(self, function: str, path: tuple[int, ...]) -> int:
        return self.freqs.get((function, path), 0)

    def function_max(self, function: str) -> int:
        vals = [v for (name, _), v in self.freqs.items() if name == function]
        return max(vals, default=0)

    @staticmethod
    def from_exec_stats(stats: ExecStats) -> "BlockFreqMap":
        """Measured profile: loop-body entry counts from a real run.
        Counts are absolute over the whole run, so a function called k
        times carries k at its entry block."""
        freqs: dict[tuple[str, tuple[int, ...]], int] = {}
        for name, count in stats.call_counts.items():
            freqs[(name, ())] = count
        for key, count in stats.loop_iterations.items():
            freqs[key] = count
        return BlockFreqMap(freqs)


def estimate_frequencies(program: ir.Program,
                         default_trip: int = DEFAULT_TRIP) -> BlockFreqMap:
    """Static per-function estimate: entry block 1, each loop multiplies
    its parent's frequency by the trip count when the bounds are
    constant, or by ``default_trip`` when they are not."""
    freqs: dict[tuple[str, tuple[int, ...]], int] = {}

    def visit(fname: str, block: ir.Block, path: tuple[int, ...], freq: int) -> None:
        for i, stmt in enumerate(block.statements):
            if isinstance(stmt, ir.Loop):
                trip = _const_trip(stmt)
                body = freq * (default_trip if trip is None else trip)
                freqs[(fname, path + (i,))] = body
                visit(fname, stmt.body, path + (i,), body)

    for f in program.functions:
        freqs[(f.name, ())] = 1
        visit(f.name, f.body, (), 1)
    return BlockFreqMap(freqs)


def select_candidates(program: ir.Program, freqs: BlockFreqMap,
                      threshold: int = DEFAULT_THRESHOLD) -> list[str]:
    """Functions whose hottest block strictly exceeds the threshold,
    in program order."""
    return [f.name for f in program.functions
            if freqs.function_max(f.name) > threshold]


# ---------------------------------------------------------------------------
# Region detection


@dataclass(frozen=True)
class Region:
    """A maximal run of consecutive analyzable statements: indices
    [start, stop) of the block reached by block_path (a statement-index
    path whose every element steps into a loop body)."""

    function: str
    block_path: tuple[int, ...]
    start: int
    stop: int

    def statements(self, f: ir.Function) -> tuple[ir.Statement, ...]:
        block = f.body
        for i in self.block_path:
            block = block.statements[i].body
        return block.statements[self.start:self.stop]

    def loop_paths(self, f: ir.Function) -> list[tuple[int, ...]]:
        """Statement paths of every loop inside the region, outermost
        first."""
        out: list[tuple[int, ...]] = []

        def walk(block: ir.Block, path: tuple[int, ...]) -> None:
            for i, stmt in enumerate(block.statements):
                if isinstance(stmt, ir.Loop):
                    out.append(path + (i,))
                    walk(stmt.body, path + (i,))

        for i, stmt in enumerate(self.statements(f)):
            if isinstance(stmt, ir.Loop):
                idx = self.block_path + (self.start + i,)
                out.append(idx)
                walk(stmt.body, idx)
        return out


def _expr_affine(e: ir.Expr, indices: frozenset[str], params: frozenset[str]) -> bool:
    """All array subscripts inside ``e`` are affine in the loop indices
    and i64 parameters currently in scope."""
    if isinstance(e, ir.Load):
        return all(
            ir.affine_form(ix, indices, params) is not None and
            _expr_affine(ix, indices, params)
            for ix in e.indices
        )
    if isinstance(e, ir.BinOp):
        return (_expr_affine(e.lhs, indices, params)
                and _expr_affine(e.rhs, indices, params))
    if isinstance(e, ir.Neg):
        return _expr_affine(e.operand, indices, params)
    return True


def _arrays_read(e: ir.Expr, out: set[str]) -> None:
    if isinstance(e, ir.Load):
        out.add(e.array)
        for ix in e.indices:
            _arrays_read(ix, out)
    elif isinstance(e, ir.BinOp):
        _arrays_read(e.lhs, out)
        _arrays_read(e.rhs, out)
    elif isinstance(e, ir.Neg):
        _arrays_read(e.operand, out)


def _alias_risky(stmt: ir.Statement) -> bool:
    """True when the statement writes one array while reading another;
    without alias information the two parameters could overlap."""
    if isinstance(stmt, ir.Store):
        reads: set[str] = set()
        _arrays_read(stmt.value, reads)
        return bool(reads - {stmt.array})
    if isinstance(stmt, ir.Loop):
        return any(_alias_risky(s) for s in stmt.body.statements)
    return False


def detect_regions(f: ir.Function, alias_mode: str = "conservative") -> list[Region]:
    """Find analyzable regions in one function.

    A statement qualifies when every subscript it touches is affine,
    it is not a call or return, and (for loops) its whole body
    qualifies. A maximal run of consecutive qualifying statements that
    contains at least one loop is a region; a disqualified loop's body
    is searched on its own. Under conservative aliasing, a run holding
    any statement that writes one array parameter while reading another
    is dropped whole (the parameters could overlap), so the regions
    found under ``conservative`` are always a subset of those found
    under ``ignore``.
    """
    if alias_mode not in ALIAS_MODES:
        raise ValueError(f"alias_mode must be one of {ALIAS_MODES}")
    i64_params = frozenset(
        name for name, vt in f.params if not vt.is_array and vt.base == ir.Scalar.I64
    )
    regions: list[Region] = []

    def qualifies(stmt: ir.Statement, indices: frozenset[str]) -> bool:
        if isinstance(stmt, ir.Assign):
            return _expr_affine(stmt.value, indices, i64_params)
        if isinstance(stmt, ir.Store):
            return all(
                ir.affine_form(ix, indices, i64_params) is not None
                and _expr_affine(ix, indices, i64_params)
                for ix in stmt.indices
            ) and _expr_affine(stmt.value, indices, i64_params)
        if isinstance(stmt, ir.Loop):
            # bounds must be affine too: the analyses downstream need a
            # statically enumerable iteration domain
            if any(ir.affine_form(b, indices, i64_params) is None
                   for b in (stmt.lower, stmt.upper)):
                return False
            inner = indices | {stmt.index}
            return all(qualifies(s, inner) for s in stmt.body.statements)
        return False  # Call, Return

    def visit(block: ir.Block, block_path: tuple[int, ...],
              indices: frozenset[str]) -> None:
        stmts = block.statements
        quals = [qualifies(s, indices) for s in stmts]
        start = None
        for i in range(len(stmts) + 1):
            if i < len(stmts) and quals[i]:
                if start is None:
                    start = i
                continue
            if start is not None:
                run = stmts[start:i]
                if any(isinstance(s, ir.Loop) for s in run) and not (
                    alias_mode == "conservative" and any(_alias_risky(s) for s in run)
                ):
                    regions.append(Region(f.name, block_path, start, i))
                start = None
            if i < len(stmts) and isinstance(stmts[i], ir.Loop):
                visit(stmts[i].body, block_path + (i,), indices | {stmts[i].index})

    visit(f.body, (), frozenset())
    return regions


# ---------------------------------------------------------------------------
# Operation counting


@dataclass(frozen=True)
class OpCounts:
    iops: int = 0
    flops: int = 0

    def __add__(self, other: "OpCounts") -> "OpCounts":
        return OpCounts(self.iops + other.iops, self.flops + other.flops)


def build_type_env(program: ir.Program, f: ir.Function) -> dict[str, ir.ValueType]:
    """Name -> type for every param, loop index, and local of a
    validated function."""
    env: dict[str, ir.ValueType] = dict(f.params)

    def expr_type(e: ir.Expr) -> ir.ValueType:
        if isinstance(e, ir.IntLit):
            return ir.I64
        if isinstance(e, ir.FloatLit):
            return ir.F64
        if isinstance(e, ir.ScalarRef):
            return env[e.name]
        if isinstance(e, ir.Load):
            return ir.ValueType(env[e.array].base)
        if isinstance(e, ir.Neg):
            return expr_type(e.operand)
        return expr_type(e.lhs)

    def visit(block: ir.Block) -> None:
        for stmt in block.statements:
            if isinstance(stmt, ir.Assign):
                env.setdefault(stmt.name, expr_type(stmt.value))
            elif isinstance(stmt, ir.Loop):
                env[stmt.index] = ir.I64
                visit(stmt.body)
            elif isinstance(stmt, ir.Call) and stmt.result is not None:
                env.setdefault(stmt.result, program.function(stmt.target).result)

    visit(f.body)
    return env


def _expr_ops(e: ir.Expr, types: dict[str, ir.ValueType]) -> tuple[OpCounts, ir.Scalar]:
    """Arithmetic ops in an expression; subscript arithmetic inside
    loads is addressing, not compute, and is not counted."""
    if isinstance(e, ir.IntLit):
        return OpCounts(), ir.Scalar.I64
    if isinstance(e, ir.FloatLit):
        return OpCounts(), ir.Scalar.F64
    if isinstance(e, ir.ScalarRef):
        return OpCounts(), types[e.name].base
    if isinstance(e, ir.Load):
        return OpCounts(), types[e.array].base
    if isinstance(e, ir.Neg):
        ops, base = _expr_ops(e.operand, types)
        one = OpCounts(iops=1) if base == ir.Scalar.I64 else OpCounts(flops=1)
        return ops + one, base
    ops_l, base = _expr_ops(e.lhs, types)
    ops_r, _ = _expr_ops(e.rhs, types)
    one = OpCounts(iops=1) if base == ir.Scalar.I64 else OpCounts(flops=1)
    return ops_l + ops_r + one, base


def _direct_ops(loop: ir.Loop, types: dict[str, ir.ValueType]) -> OpCounts:
    total = OpCounts()
    for stmt in loop.body.statements:
        if isinstance(stmt, ir.Assign):
            total = total + _expr_ops(stmt.value, types)[0]
        elif isinstance(stmt, ir.Store):
            total = total + _expr_ops(stmt.value, types)[0]
    return total


def count_loop_ops(loop: ir.Loop, types: dict[str, ir.ValueType]) -> OpCounts:
    """Ops in the innermost body of a perfectly nested chain starting
    at ``loop`` (descends while the body is exactly one loop); for an
    imperfect nest, the ops directly in this loop's own body."""
    while len(loop.body.statements) == 1 and isinstance(
        loop.body.statements[0], ir.Loop
    ):
        loop = loop.body.statements[0]
    return _direct_ops(loop, types)


# ---------------------------------------------------------------------------
# Scoring


@dataclass(frozen=True)
class Weights:
    """Operation weights; exact rationals so scores compare exactly."""

    c_iops: Fraction = Fraction(1)
    c_flops: Fraction = Fraction(1)

    @staticmethod
    def of(c_iops: float | str | Fraction, c_flops: float | str | Fraction) -> "Weights":
        return Weights(Fraction(str(c_iops)), Fraction(str(c_flops)))


@dataclass(frozen=True)
class LoopRow:
    """One loop's contribution: the ops of statements directly in its
    body (nested loops contribute their own rows) times how often that
    body runs."""

    path: tuple[int, ...]
    ops: OpCounts
    freq: int
    score: Fraction


@dataclass(frozen=True)
class ScoreReport:
    function: str
    rows: tuple[LoopRow, ...]
    region_scores: tuple[Fraction, ...]
    total: Fraction

    @property
    def exportable(self) -> bool:
        return self.total > 0


def score_function(f: ir.Function, regions: list[Region], freqs: BlockFreqMap,
                   weights: Weights = Weights(),
                   types: dict[str, ir.ValueType] | None = None,
                   program: ir.Program | None = None) -> ScoreReport:
    """Weighted op count times body frequency, summed over every loop
    of every region."""
    if types is None:
        if program is None:
            raise ValueError("score_function needs either types or program")
        types = build_type_env(program, f)
    rows: list[LoopRow] = []
    region_scores: list[Fraction] = []
    for region in regions:
        subtotal = Fraction(0)
        for path in region.loop_paths(f):
            stmt: ir.Statement = f.body.statements[path[0]]
            for i in path[1:]:
                stmt = stmt.body.statements[i]
            ops = _direct_ops(stmt, types)
            freq = freqs.get(f.name, path)
            score = (weights.c_iops * ops.iops + weights.c_flops * ops.flops) * freq
            rows.append(LoopRow(path, ops, freq, score))
            subtotal += score
        region_scores.append(subtotal)
    total = sum(region_scores, Fraction(0))
    return ScoreReport(f.name, tuple(rows), tuple(region_scores), total)


# ---------------------------------------------------------------------------
# Whole-program analysis


@dataclass(frozen=True)
class AnalysisConfig:
    threshold: int = DEFAULT_THRESHOLD
    default_trip: int = DEFAULT_TRIP
    alias_mode: str = "conservative"
    weights: Weights = Weights()


@dataclass(frozen=True)
class FunctionAnalysis:
    name: str
    max_freq: int
    candidate: bool
    regions: tuple[Region, ...]
    report: ScoreReport

    @property
    def exportable(self) -> bool:
        return self.candidate and self.report.total > 0


def analyze_program(program: ir.Program,
                    config: AnalysisConfig = AnalysisConfig(),
                    freqs: BlockFreqMap | None = None) -> dict[str, FunctionAnalysis]:
    """Run the full pipeline on every function. Pass ``freqs`` to score
    against a measured profile instead of the static estimate."""
    if freqs is None:
        freqs = estimate_frequencies(program, config.default_trip)
    candidates = set(select_candidates(program, freqs, config.threshold))
    out: dict[str, FunctionAnalysis] = {}
    for f in program.functions:
        types = build_type_env(program, f)
        regions = detect_regions(f, config.alias_mode)
        report = score_function(f, regions, freqs, config.weights, types=types)
        out[f.name] = FunctionAnalysis(
            f.name, freqs.function_max(f.name), f.name in candidates,
            tuple(regions), report,
        )
    return out
