"""Affine mini-IR: AST, textual grammar, canonical printer, validator.

The IR models the compute kernels this project can ship to a remote
executor: straight-line code plus counted loops over statically-sized
dense arrays. It is deliberately small.

Values are ``i64`` (two's-complement 64-bit, wrapping) and ``f64``
(IEEE-754 binary64) scalars, plus dense row-major arrays of either
with extents fixed in the type (``f64[512][512]``). Arrays exist only
as function parameters and are passed by reference; scalars are passed
by value.

Control flow is counted loops only: half-open ranges with a positive
integer-literal step. There are no branches, no while loops, and no
recursion (the call graph must be a DAG). Calls appear only as
statements, never inside expressions. ``return`` may appear only as
the final statement of a function body.

Loop bounds must be affine (integer-linear in enclosing loop indices
and i64 parameters, plus a constant). Array subscripts may be
arbitrary i64 expressions: non-affine subscripts are legal IR, they
just make the surrounding code ineligible for the static analyses in
:mod:`farcall.analysis`.

Textual grammar (file extension ``.bir``), one statement per line,
``#`` starts a comment:

    program   := func*
    func      := "func" NAME "(" [param ("," param)*] ")" "->" rtype "{" block "}"
    param     := NAME ":" type
    type      := ("i64" | "f64") ("[" INT "]")*
    rtype     := "i64" | "f64" | "void"
    block     := statement*
    statement := NAME "=" expr
               | NAME ("[" expr "]")+ "=" expr
               | "loop" NAME "in" "[" expr "," expr ")" "step" INT "{" block "}"
               | ["NAME" "="] "call" NAME "(" [expr ("," expr)*] ")"
               | "return" [expr]
    expr      := term (("+" | "-") term)*
    term      := unary (("*" | "/") unary)*
    unary     := "-" unary | primary
    primary   := INT | FLOAT | NAME | NAME ("[" expr "]")+ | "(" expr ")"

Binary operators are left-associative; the canonical printer emits the
minimum parentheses that reproduce the tree, so ``parse_program`` after
``print_program`` is the identity on canonical programs.
"""

from __future__ import annotations

import enum
import math
import re
import struct
from dataclasses import dataclass, field

__all__ = [
    "Scalar",
    "ValueType",
    "I64",
    "F64",
    "IntLit",
    "FloatLit",
    "ScalarRef",
    "Load",
    "Neg",
    "BinOp",
    "Expr",
    "Assign",
    "Store",
    "Loop",
    "Call",
    "Return",
    "Statement",
    "Block",
    "Function",
    "Program",
    "Diagnostic",
    "ValidationReport",
    "ParseError",
    "ValidationError",
    "parse_program",
    "print_program",
    "validate",
    "affine_form",
    "walk_statements",
    "loops_of",
]


# ---------------------------------------------------------------------------
# Types


class Scalar(enum.Enum):
    I64 = "i64"
    F64 = "f64"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class ValueType:
    """Scalar or dense row-major array type with static extents."""

    base: Scalar
    shape: tuple[int, ...] = ()

    @property
    def is_array(self) -> bool:
        return bool(self.shape)

    @property
    def element_count(self) -> int:
        n = 1
        for d in self.shape:
            n *= d
        return n

    def render(self) -> str:
        return str(self.base) + "".join(f"[{d}]" for d in self.shape)

    def __str__(self) -> str:
        return self.render()


I64 = ValueType(Scalar.I64)
F64 = ValueType(Scalar.F64)


# ---------------------------------------------------------------------------
# Expressions


@dataclass(frozen=True)
class IntLit:
    value: int


@dataclass(frozen=True)
class FloatLit:
    """Finite f64 literal; equality is bit-pattern equality so that
    -0.0 and 0.0 stay distinct through print/parse round trips."""

    value: float

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FloatLit):
            return NotImplemented
        return struct.pack("<d", self.value) == struct.pack("<d", other.value)

    def __hash__(self) -> int:
        return hash(struct.pack("<d", self.value))


@dataclass(frozen=True)
class ScalarRef:
    name: str


@dataclass(frozen=True)
class Load:
    array: str
    indices: tuple["Expr", ...]


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * /
    lhs: "Expr"
    rhs: "Expr"


Expr = IntLit | FloatLit | ScalarRef | Load | Neg | BinOp


# ---------------------------------------------------------------------------
# Statements


@dataclass(frozen=True)
class Assign:
    name: str
    value: Expr
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Store:
    array: str
    indices: tuple[Expr, ...]
    value: Expr
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Block:
    statements: tuple["Statement", ...]


@dataclass(frozen=True)
class Loop:
    """Counted loop over the half-open range [lower, upper) with a
    positive literal step. The index is a fresh i64 visible only in
    the body and may not be reassigned."""

    index: str
    lower: Expr
    upper: Expr
    step: int
    body: Block
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Call:
    """Call statement; ``result`` binds the callee's scalar result to a
    local, or is None when the result is void or discarded."""

    target: str
    args: tuple[Expr, ...]
    result: str | None = None
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Return:
    value: Expr | None
    line: int = field(default=0, compare=False)


Statement = Assign | Store | Loop | Call | Return


@dataclass(frozen=True)
class Function:
    name: str
    params: tuple[tuple[str, ValueType], ...]
    result: ValueType | None  # None means void
    body: Block
    line: int = field(default=0, compare=False)

    def param_type(self, name: str) -> ValueType | None:
        for pname, ptype in self.params:
            if pname == name:
                return ptype
        return None


@dataclass(frozen=True)
class Program:
    functions: tuple[Function, ...]
    entry: str

    def function(self, name: str) -> Function:
        for f in self.functions:
            if f.name == name:
                return f
        raise KeyError(name)

    def has_function(self, name: str) -> bool:
        return any(f.name == name for f in self.functions)


# ---------------------------------------------------------------------------
# Tree walking helpers


def walk_statements(block: Block, path: tuple[int, ...] = ()):
    """Yield (path, statement) pairs depth-first; path is the tuple of
    statement indices from the enclosing function body down."""
    for i, stmt in enumerate(block.statements):
        p = path + (i,)
        yield p, stmt
        if isinstance(stmt, Loop):
            yield from walk_statements(stmt.body, p)


def loops_of(f: Function):
    """Yield (path, loop, chain) for every loop; chain is the tuple of
    enclosing Loop nodes from outermost to the loop itself."""

    def rec(block: Block, path: tuple[int, ...], chain: tuple[Loop, ...]):
        for i, stmt in enumerate(block.statements):
            if isinstance(stmt, Loop):
                p = path + (i,)
                c = chain + (stmt,)
                yield p, stmt, c
                yield from rec(stmt.body, p, c)

    yield from rec(f.body, (), ())


# ---------------------------------------------------------------------------
# Affine forms


def affine_form(
    expr: Expr, indices: frozenset[str] | set[str], params: frozenset[str] | set[str]
) -> tuple[int, dict[str, int]] | None:
    """Linear-form extraction: return (constant, {name: coefficient}) if
    ``expr`` is an integer-linear combination of the given loop indices
    and i64 parameters plus a constant, else None.

    Multiplication is affine only when one side folds to a constant;
    division is never affine. Float literals, loads, and references to
    anything outside ``indices | params`` are non-affine.
    """
    if isinstance(expr, IntLit):
        return expr.value, {}
    if isinstance(expr, ScalarRef):
        if expr.name in indices or expr.name in params:
            return 0, {expr.name: 1}
        return None
    if isinstance(expr, Neg):
        sub = affine_form(expr.operand, indices, params)
        if sub is None:
            return None
        c, coefs = sub
        return -c, {k: -v for k, v in coefs.items()}
    if isinstance(expr, BinOp):
        if expr.op in "+-":
            a = affine_form(expr.lhs, indices, params)
            b = affine_form(expr.rhs, indices, params)
            if a is None or b is None:
                return None
            sign = 1 if expr.op == "+" else -1
            c = a[0] + sign * b[0]
            coefs = dict(a[1])
            for k, v in b[1].items():
                coefs[k] = coefs.get(k, 0) + sign * v
            return c, {k: v for k, v in coefs.items() if v != 0}
        if expr.op == "*":
            a = affine_form(expr.lhs, indices, params)
            b = affine_form(expr.rhs, indices, params)
            if a is None or b is None:
                return None
            for const_side, var_side in ((a, b), (b, a)):
                if not const_side[1]:
                    k = const_side[0]
                    return k * var_side[0], {
                        name: k * v for name, v in var_side[1].items() if k * v != 0
                    }
            return None
        return None  # division
    return None  # FloatLit, Load


# ---------------------------------------------------------------------------
# Tokenizer


_KEYWORDS = {"func", "loop", "in", "step", "call", "return", "void", "i64", "f64"}

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t]+)
  | (?P<comment>\#[^\n]*)
  | (?P<newline>\n)
  | (?P<float>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)|\d+\.\d*|\.\d+)
  | (?P<int>\d+)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<arrow>->)
  | (?P<punct>[()\[\]{},:=+\-*/])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str  # NEWLINE, INT, FLOAT, NAME, KW, or the punct/arrow text itself
    text: str
    line: int
    col: int


class ParseError(Exception):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"line {line}, col {col}: {message}")
        self.line = line
        self.col = col


class ValidationError(Exception):
    def __init__(self, report: "ValidationReport"):
        msgs = "; ".join(str(d) for d in report.diagnostics)
        super().__init__(f"invalid program: {msgs}")
        self.report = report


def _tokenize(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    line, col = 1, 1
    pos = 0
    n = len(text)
    while pos < n:
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, col)
        kind = m.lastgroup
        tok = m.group()
        if kind == "newline":
            tokens.append(_Token("NEWLINE", tok, line, col))
            line += 1
            col = 1
        else:
            if kind == "name":
                tkind = "KW" if tok in _KEYWORDS else "NAME"
                tokens.append(_Token(tkind, tok, line, col))
            elif kind == "int":
                tokens.append(_Token("INT", tok, line, col))
            elif kind == "float":
                tokens.append(_Token("FLOAT", tok, line, col))
            elif kind in ("punct", "arrow"):
                tokens.append(_Token(tok, tok, line, col))
            # ws and comment tokens are dropped
            col += len(tok)
        pos = m.end()
    tokens.append(_Token("EOF", "", line, col))
    return tokens


# ---------------------------------------------------------------------------
# Parser


class _Parser:
    def __init__(self, tokens: list[_Token]):
        self.tokens = tokens
        self.pos = 0

    # -- token plumbing

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def next(self) -> _Token:
        t = self.tokens[self.pos]
        if t.kind != "EOF":
            self.pos += 1
        return t

    def expect(self, kind: str, what: str | None = None) -> _Token:
        t = self.peek()
        if t.kind != kind:
            want = what or kind
            raise ParseError(f"expected {want}, found {t.text or 'end of input'!r}", t.line, t.col)
        return self.next()

    def expect_kw(self, word: str) -> _Token:
        t = self.peek()
        if t.kind != "KW" or t.text != word:
            raise ParseError(f"expected {word!r}, found {t.text or 'end of input'!r}", t.line, t.col)
        return self.next()

    def skip_newlines(self) -> None:
        while self.peek().kind == "NEWLINE":
            self.next()

    def end_statement(self) -> None:
        """One statement per line: a statement must be followed by a
        newline, a closing brace, or end of input."""
        t = self.peek()
        if t.kind == "NEWLINE":
            self.skip_newlines()
        elif t.kind not in ("}", "EOF"):
            raise ParseError(
                f"expected end of line after statement, found {t.text!r}", t.line, t.col
            )

    # -- grammar

    def program(self) -> list[Function]:
        funcs = []
        self.skip_newlines()
        while self.peek().kind != "EOF":
            funcs.append(self.function())
            self.end_statement()
            self.skip_newlines()
        return funcs

    def function(self) -> Function:
        kw = self.expect_kw("func")
        name = self.expect("NAME", "function name").text
        self.expect("(")
        params: list[tuple[str, ValueType]] = []
        if self.peek().kind != ")":
            while True:
                pname = self.expect("NAME", "parameter name").text
                self.expect(":")
                params.append((pname, self.type_()))
                if self.peek().kind == ",":
                    self.next()
                    continue
                break
        self.expect(")")
        self.expect("->")
        t = self.peek()
        if t.kind == "KW" and t.text == "void":
            self.next()
            result = None
        elif t.kind == "KW" and t.text in ("i64", "f64"):
            result = self.type_()
        else:
            raise ParseError(f"expected return type, found {t.text!r}", t.line, t.col)
        body = self.block()
        return Function(name, tuple(params), result, body, line=kw.line)

    def type_(self) -> ValueType:
        t = self.peek()
        if t.kind != "KW" or t.text not in ("i64", "f64"):
            raise ParseError(f"expected type, found {t.text!r}", t.line, t.col)
        self.next()
        base = Scalar.I64 if t.text == "i64" else Scalar.F64
        shape = []
        while self.peek().kind == "[":
            self.next()
            d = self.expect("INT", "array extent")
            extent = int(d.text)
            if extent < 1:
                raise ParseError("array extent must be positive", d.line, d.col)
            shape.append(extent)
            self.expect("]")
        return ValueType(base, tuple(shape))

    def block(self) -> Block:
        self.expect("{")
        stmts: list[Statement] = []
        self.skip_newlines()
        while self.peek().kind != "}":
            if self.peek().kind == "EOF":
                t = self.peek()
                raise ParseError("unexpected end of input, expected '}'", t.line, t.col)
            stmts.append(self.statement())
            self.end_statement()
        self.expect("}")
        return Block(tuple(stmts))

    def statement(self) -> Statement:
        t = self.peek()
        if t.kind == "KW" and t.text == "loop":
            return self.loop()
        if t.kind == "KW" and t.text == "return":
            self.next()
            nxt = self.peek()
            if nxt.kind in ("NEWLINE", "}", "EOF"):
                return Return(None, line=t.line)
            return Return(self.expr(), line=t.line)
        if t.kind == "KW" and t.text == "call":
            return self.call(result=None)
        if t.kind == "NAME":
            name = self.next()
            if self.peek().kind == "[":
                indices = []
                while self.peek().kind == "[":
                    self.next()
                    indices.append(self.expr())
                    self.expect("]")
                self.expect("=")
                value = self.expr()
                return Store(name.text, tuple(indices), value, line=name.line)
            self.expect("=")
            nxt = self.peek()
            if nxt.kind == "KW" and nxt.text == "call":
                return self.call(result=name.text, line=name.line)
            return Assign(name.text, self.expr(), line=name.line)
        raise ParseError(f"expected a statement, found {t.text or 'end of input'!r}", t.line, t.col)

    def loop(self) -> Loop:
        kw = self.expect_kw("loop")
        index = self.expect("NAME", "loop index").text
        self.expect_kw("in")
        self.expect("[")
        lower = self.expr()
        self.expect(",")
        upper = self.expr()
        self.expect(")")
        self.expect_kw("step")
        digits = self.expect("INT", "literal step")
        step = int(digits.text)
        if step < 1:
            raise ParseError("step must be positive", digits.line, digits.col)
        body = self.block()
        return Loop(index, lower, upper, step, body, line=kw.line)

    def call(self, result: str | None, line: int | None = None) -> Call:
        kw = self.expect_kw("call")
        target = self.expect("NAME", "function name").text
        self.expect("(")
        args: list[Expr] = []
        if self.peek().kind != ")":
            while True:
                args.append(self.expr())
                if self.peek().kind == ",":
                    self.next()
                    continue
                break
        self.expect(")")
        return Call(target, tuple(args), result, line=line if line is not None else kw.line)

    # -- expressions

    def expr(self) -> Expr:
        node = self.term()
        while self.peek().kind in ("+", "-"):
            op = self.next().text
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Expr:
        node = self.unary()
        while self.peek().kind in ("*", "/"):
            op = self.next().text
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Expr:
        if self.peek().kind == "-":
            tok = self.next()
            operand = self.unary()
            # fold a negated literal into the literal so canonical text
            # like "-3" or "-0.5" round-trips to a single node
            if isinstance(operand, IntLit):
                return IntLit(-operand.value)
            if isinstance(operand, FloatLit):
                return FloatLit(-operand.value)
            return Neg(operand)
        return self.primary()

    def primary(self) -> Expr:
        t = self.peek()
        if t.kind == "INT":
            self.next()
            return IntLit(int(t.text))
        if t.kind == "FLOAT":
            self.next()
            value = float(t.text)
            if not math.isfinite(value):
                raise ParseError("float literal overflows f64", t.line, t.col)
            return FloatLit(value)
        if t.kind == "NAME":
            self.next()
            if self.peek().kind == "[":
                indices = []
                while self.peek().kind == "[":
                    self.next()
                    indices.append(self.expr())
                    self.expect("]")
                return Load(t.text, tuple(indices))
            return ScalarRef(t.text)
        if t.kind == "(":
            self.next()
            node = self.expr()
            self.expect(")")
            return node
        raise ParseError(f"expected an expression, found {t.text or 'end of input'!r}", t.line, t.col)


def parse_program(text: str, *, entry: str | None = None, check: bool = True) -> Program:
    """Parse ``.bir`` source into a Program.

    The entry function is ``entry`` if given, else ``main`` if defined,
    else the first function. With ``check`` (the default) the program
    is validated and a ValidationError carrying all diagnostics is
    raised if anything is wrong; syntax problems raise ParseError.
    """
    funcs = _Parser(_tokenize(text)).program()
    if not funcs:
        raise ParseError("empty program: no functions", 1, 1)
    names = [f.name for f in funcs]
    if entry is None:
        entry = "main" if "main" in names else names[0]
    program = Program(tuple(funcs), entry)
    if check:
        report = validate(program)
        if report.diagnostics:
            raise ValidationError(report)
    return program


# ---------------------------------------------------------------------------
# Canonical printer

_PRECEDENCE = {"+": 1, "-": 1, "*": 2, "/": 2}


def _print_expr(e: Expr, parent_prec: int = 0, right_side: bool = False) -> str:
    if isinstance(e, IntLit):
        s = str(e.value)
    elif isinstance(e, FloatLit):
        s = repr(e.value)
    elif isinstance(e, ScalarRef):
        s = e.name
    elif isinstance(e, Load):
        s = e.array + "".join(f"[{_print_expr(i)}]" for i in e.indices)
    elif isinstance(e, Neg):
        s = "-" + _print_expr(e.operand, 3)
        return s if parent_prec < 3 else f"({s})"
    elif isinstance(e, BinOp):
        prec = _PRECEDENCE[e.op]
        s = (
            _print_expr(e.lhs, prec)
            + f" {e.op} "
            + _print_expr(e.rhs, prec, right_side=True)
        )
        # all binary ops are left-associative: a right child at equal
        # precedence, or any child at lower precedence, needs parentheses
        if prec < parent_prec or (prec == parent_prec and right_side):
            return f"({s})"
        return s
    else:  # pragma: no cover
        raise TypeError(f"not an expression: {e!r}")
    if parent_prec >= 3 and isinstance(e, (IntLit, FloatLit)) and s.startswith("-"):
        return f"({s})"
    if right_side and isinstance(e, (IntLit, FloatLit)) and s.startswith("-") and parent_prec >= 1:
        return f"({s})"
    return s


def _print_stmt(stmt: Statement, indent: int, out: list[str]) -> None:
    pad = "  " * indent
    if isinstance(stmt, Assign):
        out.append(f"{pad}{stmt.name} = {_print_expr(stmt.value)}")
    elif isinstance(stmt, Store):
        subs = "".join(f"[{_print_expr(i)}]" for i in stmt.indices)
        out.append(f"{pad}{stmt.array}{subs} = {_print_expr(stmt.value)}")
    elif isinstance(stmt, Loop):
        out.append(
            f"{pad}loop {stmt.index} in [{_print_expr(stmt.lower)}, "
            f"{_print_expr(stmt.upper)}) step {stmt.step} {{"
        )
        for s in stmt.body.statements:
            _print_stmt(s, indent + 1, out)
        out.append(f"{pad}}}")
    elif isinstance(stmt, Call):
        args = ", ".join(_print_expr(a) for a in stmt.args)
        prefix = f"{stmt.result} = " if stmt.result is not None else ""
        out.append(f"{pad}{prefix}call {stmt.target}({args})")
    elif isinstance(stmt, Return):
        if stmt.value is None:
            out.append(f"{pad}return")
        else:
            out.append(f"{pad}return {_print_expr(stmt.value)}")
    else:  # pragma: no cover
        raise TypeError(f"not a statement: {stmt!r}")


def print_program(p: Program) -> str:
    """Emit canonical ``.bir`` text: one statement per line, two-space
    indentation, functions separated by a blank line."""
    out: list[str] = []
    for f in p.functions:
        params = ", ".join(f"{n}: {t.render()}" for n, t in f.params)
        result = f.result.render() if f.result is not None else "void"
        out.append(f"func {f.name}({params}) -> {result} {{")
        for s in f.body.statements:
            _print_stmt(s, 1, out)
        out.append("}")
        out.append("")
    return "\n".join(out)


# ---------------------------------------------------------------------------
# Validation


@dataclass(frozen=True)
class Diagnostic:
    message: str
    function: str | None = None
    line: int = 0

    def __str__(self) -> str:
        where = f"{self.function}: " if self.function else ""
        at = f" (line {self.line})" if self.line else ""
        return f"{where}{self.message}{at}"


@dataclass
class ValidationReport:
    diagnostics: list[Diagnostic]

    @property
    def ok(self) -> bool:
        return not self.diagnostics


class _FuncChecker:
    """Per-function semantic checks. Tracks, in statement order, which
    scalars are certainly defined (a definition inside a loop body only
    counts within that body: the loop may run zero times)."""

    def __init__(self, program: Program, f: Function, out: list[Diagnostic]):
        self.program = program
        self.f = f
        self.out = out
        self.param_types = dict(f.params)
        self.i64_params = {n for n, t in f.params if t == I64}
        self.local_types: dict[str, ValueType] = {}

    def err(self, message: str, line: int = 0) -> None:
        self.out.append(Diagnostic(message, self.f.name, line))

    def run(self) -> None:
        seen = set()
        for name, ptype in self.f.params:
            if name in seen:
                self.err(f"duplicate parameter {name!r}", self.f.line)
            seen.add(name)
        if self.f.result is not None and self.f.result.is_array:
            self.err("array result types are not supported", self.f.line)
        defined = self.check_block(self.f.body, set(), frozenset(), top=True)
        if self.f.result is not None:
            stmts = self.f.body.statements
            if not stmts or not isinstance(stmts[-1], Return) or stmts[-1].value is None:
                self.err("function must end with 'return <expr>'", self.f.line)
        del defined

    # -- scoping and typing

    def check_block(
        self,
        block: Block,
        defined: set[str],
        indices: frozenset[str],
        top: bool = False,
    ) -> set[str]:
        """Returns the set of certainly-defined locals after the block.
        ``defined`` is not mutated."""
        now = set(defined)
        stmts = block.statements
        for pos, stmt in enumerate(stmts):
            is_last_top = top and pos == len(stmts) - 1
            if isinstance(stmt, Return):
                if not is_last_top:
                    self.err("'return' is allowed only as the final statement", stmt.line)
                if stmt.value is not None:
                    t = self.expr_type(stmt.value, now, indices, stmt.line)
                    if self.f.result is None:
                        self.err("void function cannot return a value", stmt.line)
                    elif t is not None and t != self.f.result:
                        self.err(
                            f"return type mismatch: expected {self.f.result}, got {t}",
                            stmt.line,
                        )
                elif self.f.result is not None:
                    self.err("function must end with 'return <expr>'", stmt.line)
            elif isinstance(stmt, Assign):
                self.check_assign(stmt, now, indices)
            elif isinstance(stmt, Store):
                self.check_store(stmt, now, indices)
            elif isinstance(stmt, Loop):
                self.check_loop(stmt, now, indices)
            elif isinstance(stmt, Call):
                self.check_call(stmt, now, indices)
        return now

    def check_assign(self, stmt: Assign, defined: set[str], indices: frozenset[str]) -> None:
        t = self.expr_type(stmt.value, defined, indices, stmt.line)
        name = stmt.name
        if name in indices:
            self.err(f"loop index {name!r} may not be reassigned", stmt.line)
            return
        if name in self.param_types:
            self.err(f"parameter {name!r} may not be reassigned", stmt.line)
            return
        if t is None:
            return
        if t.is_array:
            self.err("cannot assign an array value", stmt.line)
            return
        prior = self.local_types.get(name)
        if prior is None:
            self.local_types[name] = t
        elif prior != t:
            self.err(
                f"local {name!r} was {prior} and cannot be reassigned as {t}", stmt.line
            )
        defined.add(name)

    def check_store(self, stmt: Store, defined: set[str], indices: frozenset[str]) -> None:
        at = self.param_types.get(stmt.array)
        if at is None or not at.is_array:
            self.err(f"{stmt.array!r} is not an array parameter", stmt.line)
            at = None
        elif len(stmt.indices) != len(at.shape):
            self.err(
                f"{stmt.array!r} has rank {len(at.shape)}, got {len(stmt.indices)} subscripts",
                stmt.line,
            )
        for idx in stmt.indices:
            it = self.expr_type(idx, defined, indices, stmt.line)
            if it is not None and it != I64:
                self.err("subscripts must be i64", stmt.line)
        vt = self.expr_type(stmt.value, defined, indices, stmt.line)
        if at is not None and vt is not None and vt != ValueType(at.base):
            self.err(
                f"store type mismatch: {stmt.array} holds {at.base}, got {vt}", stmt.line
            )

    def check_loop(self, stmt: Loop, defined: set[str], indices: frozenset[str]) -> None:
        if stmt.index in self.param_types or stmt.index in indices:
            self.err(f"loop index {stmt.index!r} shadows an existing name", stmt.line)
        for which, bound in (("lower", stmt.lower), ("upper", stmt.upper)):
            t = self.expr_type(bound, defined, indices, stmt.line)
            if t is not None and t != I64:
                self.err(f"{which} bound must be i64", stmt.line)
            if affine_form(bound, indices, self.i64_params) is None:
                self.err(
                    f"{which} bound must be affine in loop indices and i64 parameters",
                    stmt.line,
                )
        inner = self.check_block(stmt.body, defined, indices | {stmt.index})
        # definitions inside the loop are only maybe-definitions outside it
        del inner

    def check_call(self, stmt: Call, defined: set[str], indices: frozenset[str]) -> None:
        if not self.program.has_function(stmt.target):
            self.err(f"call to undefined function {stmt.target!r}", stmt.line)
            return
        callee = self.program.function(stmt.target)
        if len(stmt.args) != len(callee.params):
            self.err(
                f"{stmt.target} takes {len(callee.params)} arguments, got {len(stmt.args)}",
                stmt.line,
            )
        for arg, (pname, ptype) in zip(stmt.args, callee.params):
            if ptype.is_array:
                if not (
                    isinstance(arg, ScalarRef)
                    and self.param_types.get(arg.name, ValueType(Scalar.I64)).is_array
                ):
                    self.err(
                        f"argument for array parameter {pname!r} must name an array",
                        stmt.line,
                    )
                elif self.param_types[arg.name] != ptype:
                    self.err(
                        f"array argument {arg.name!r} is {self.param_types[arg.name]}, "
                        f"expected {ptype}",
                        stmt.line,
                    )
            else:
                t = self.expr_type(arg, defined, indices, stmt.line)
                if t is not None and t != ptype:
                    self.err(
                        f"argument for {pname!r} must be {ptype}, got {t}", stmt.line
                    )
        if stmt.result is not None:
            if callee.result is None:
                self.err(f"{stmt.target} returns void; nothing to bind", stmt.line)
                return
            name = stmt.result
            if name in indices:
                self.err(f"loop index {name!r} may not be reassigned", stmt.line)
                return
            if name in self.param_types:
                self.err(f"parameter {name!r} may not be reassigned", stmt.line)
                return
            prior = self.local_types.get(name)
            if prior is None:
                self.local_types[name] = callee.result
            elif prior != callee.result:
                self.err(
                    f"local {name!r} was {prior} and cannot be reassigned as {callee.result}",
                    stmt.line,
                )
            defined.add(name)

    def expr_type(
        self, e: Expr, defined: set[str], indices: frozenset[str], line: int
    ) -> ValueType | None:
        """Type of the expression, or None if an error was reported."""
        if isinstance(e, IntLit):
            if not -(2**63) <= e.value < 2**63:
                self.err("integer literal out of i64 range", line)
                return None
            return I64
        if isinstance(e, FloatLit):
            if not math.isfinite(e.value):
                self.err("float literals must be finite", line)
                return None
            return F64
        if isinstance(e, ScalarRef):
            if e.name in indices:
                return I64
            pt = self.param_types.get(e.name)
            if pt is not None:
                if pt.is_array:
                    self.err(f"array {e.name!r} used as a scalar", line)
                    return None
                return pt
            lt = self.local_types.get(e.name)
            if lt is not None:
                if e.name not in defined:
                    self.err(f"{e.name!r} may be undefined here", line)
                return lt
            self.err(f"unknown identifier {e.name!r}", line)
            return None
        if isinstance(e, Load):
            at = self.param_types.get(e.array)
            if at is None or not at.is_array:
                self.err(f"{e.array!r} is not an array parameter", line)
                return None
            if len(e.indices) != len(at.shape):
                self.err(
                    f"{e.array!r} has rank {len(at.shape)}, got {len(e.indices)} subscripts",
                    line,
                )
            for idx in e.indices:
                it = self.expr_type(idx, defined, indices, line)
                if it is not None and it != I64:
                    self.err("subscripts must be i64", line)
            return ValueType(at.base)
        if isinstance(e, Neg):
            return self.expr_type(e.operand, defined, indices, line)
        if isinstance(e, BinOp):
            lt = self.expr_type(e.lhs, defined, indices, line)
            rt = self.expr_type(e.rhs, defined, indices, line)
            if lt is None or rt is None:
                return None
            if lt != rt:
                self.err(f"operand type mismatch: {lt} {e.op} {rt}", line)
                return None
            if lt.is_array:
                self.err("arrays cannot appear in arithmetic", line)
                return None
            return lt
        raise TypeError(f"not an expression: {e!r}")  # pragma: no cover


def validate(p: Program) -> ValidationReport:
    """Structural and semantic checks; one diagnostic per violation.

    Covers: unique function/parameter names, entry resolution, calls
    (arity, types, defined targets, acyclic call graph), identifier
    scoping with certain-definedness, loop bounds affine and i64, no
    reassignment of parameters or loop indices, stores/loads shaped by
    the array's declared rank, operand type agreement, `return`
    placement, finite float literals.
    """
    out: list[Diagnostic] = []
    seen: set[str] = set()
    for f in p.functions:
        if f.name in seen:
            out.append(Diagnostic(f"duplicate function name {f.name!r}", None, f.line))
        seen.add(f.name)
    if p.entry not in seen:
        out.append(Diagnostic(f"entry function {p.entry!r} is not defined"))

    for f in p.functions:
        _FuncChecker(p, f, out).run()

    # call graph must be a DAG
    graph: dict[str, set[str]] = {f.name: set() for f in p.functions}
    for f in p.functions:
        for _, stmt in walk_statements(f.body):
            if isinstance(stmt, Call) and stmt.target in graph:
                graph[f.name].add(stmt.target)
    state: dict[str, int] = {}

    def dfs(node: str, trail: list[str]) -> bool:
        state[node] = 1
        for succ in sorted(graph[node]):
            if state.get(succ) == 1:
                cycle = trail[trail.index(succ):] if succ in trail else trail
                out.append(
                    Diagnostic(
                        "recursive call cycle: " + " -> ".join(cycle + [succ]), None
                    )
                )
                return False
            if state.get(succ) is None and not dfs(succ, trail + [succ]):
                return False
        state[node] = 2
        return True

    for name in sorted(graph):
        if state.get(name) is None:
            if not dfs(name, [name]):
                break

    return ValidationReport(out)
