"""Client-side offload machinery: package hot functions for the
server, rewrite calls to carry a local/remote guard, and make the
per-call placement decision.

The flow: analysis marks functions exportable (hot and positively
scored); ``build_remote_part`` bundles them, plus any loop-free helpers
they call, into a self-contained unit the server can validate on its
own; after the server signals readiness, ``transform_to_local_part``
installs per-function guards. Each guarded call computes the transfer
footprint of its live arguments and goes remote only when
score / bytes strictly exceeds the configured constant.

Remote faults carry the same diagnostic a local run would have raised.
A remote fault leaves the local array buffers untouched (the partial
writes happened on the server's copies); a local fault leaves partial
writes visible. Transport failures mark the endpoint dead, and every
later call runs locally.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field, replace
from fractions import Fraction

from . import ir
from .analysis import (
    ALIAS_MODES,
    AnalysisConfig,
    FunctionAnalysis,
    Region,
    analyze_program,
)
from .interp import InterpError, Interpreter, Value
from .proto import (
    DEFAULT_PORT,
    PROTOCOL_VERSION,
    FrameStream,
    Message,
    MessageKind,
    ProtocolError,
    SessionTracker,
    decode_result,
    encode_call,
)

__all__ = [
    "REMOTE_PART_FORMAT",
    "BuildError",
    "ExportEntry",
    "RemotePart",
    "build_remote_part",
    "transfer_bytes",
    "Placement",
    "decide",
    "OffloadConfig",
    "RemoteRejected",
    "RemoteFault",
    "OffloadTransportError",
    "RemoteEndpoint",
    "RemoteBinding",
    "GuardedProgram",
    "transform_to_local_part",
    "ClientRuntime",
]

REMOTE_PART_FORMAT = 1


class BuildError(Exception):
    """The program cannot be split at the requested boundary."""


# ---------------------------------------------------------------------------
# Remote part


@dataclass(frozen=True)
class ExportEntry:
    """One exported function: its score and the analyzable regions the
    score came from. The server re-derives both; they travel for
    logging and inspection."""

    name: str
    score: Fraction
    regions: tuple[Region, ...]


@dataclass(frozen=True)
class RemotePart:
    """Self-contained bundle for the server: canonical source of every
    exported function and helper, which alias assumption the analysis
    ran under, and per-export metadata."""

    source: str
    exports: tuple[ExportEntry, ...]
    helpers: tuple[str, ...]
    alias_mode: str
    format_version: int = REMOTE_PART_FORMAT

    def __post_init__(self):
        for e in self.exports:
            if e.score <= 0 or not e.regions:
                raise BuildError(
                    f"{e.name}: exported functions need a positive score "
                    f"and at least one analyzable region"
                )

    @property
    def empty(self) -> bool:
        return not self.exports

    def to_payload(self) -> str:
        return json.dumps({
            "format_version": self.format_version,
            "alias_mode": self.alias_mode,
            "source": self.source,
            "exports": [
                {
                    "name": e.name,
                    "score": str(e.score),
                    "regions": [[list(r.block_path), r.start, r.stop]
                                for r in e.regions],
                }
                for e in self.exports
            ],
            "helpers": list(self.helpers),
        })

    @staticmethod
    def from_payload(text: str) -> "RemotePart":
        try:
            doc = json.loads(text)
            version = doc["format_version"]
            if version != REMOTE_PART_FORMAT:
                raise ProtocolError(f"unsupported remote-part format {version}")
            alias_mode = doc["alias_mode"]
            if alias_mode not in ALIAS_MODES:
                raise ProtocolError(f"unknown alias mode {alias_mode!r}")
            exports = tuple(
                ExportEntry(
                    e["name"],
                    Fraction(e["score"]),
                    tuple(
                        Region(e["name"], tuple(bp), start, stop)
                        for bp, start, stop in e["regions"]
                    ),
                )
                for e in doc["exports"]
            )
            return RemotePart(
                source=doc["source"],
                exports=exports,
                helpers=tuple(doc["helpers"]),
                alias_mode=alias_mode,
                format_version=version,
            )
        except ProtocolError:
            raise
        except (KeyError, TypeError, ValueError) as e:
            raise ProtocolError(f"malformed remote part payload: {e}") from None


def _has_loops(f: ir.Function) -> bool:
    return any(isinstance(s, ir.Loop) for s, _ in _walk_all(f.body))


def _walk_all(block: ir.Block, path=()):
    for i, s in enumerate(block.statements):
        yield s, path + (i,)
        if isinstance(s, ir.Loop):
            yield from _walk_all(s.body, path + (i,))


def _callees(f: ir.Function) -> list[str]:
    return [s.target for s, _ in _walk_all(f.body) if isinstance(s, ir.Call)]


def build_remote_part(program: ir.Program,
                      analyses: dict[str, FunctionAnalysis],
                      alias_mode: str) -> RemotePart:
    """Bundle every exportable function plus, transitively, the
    loop-free helpers it calls. A call from exported code into a
    function that has loops but was not itself exported cannot be
    split and is a build error."""
    exported = [a.name for a in analyses.values() if a.exportable]
    exported_set = set(exported)
    helpers: list[str] = []
    seen = set(exported)
    frontier = list(exported)
    while frontier:
        fname = frontier.pop()
        for callee in _callees(program.function(fname)):
            if callee in seen:
                continue
            seen.add(callee)
            target = program.function(callee)
            if _has_loops(target):
                raise BuildError(
                    f"{fname} calls {callee}, which contains loops but is not "
                    f"exported; splitting a call chain between hosts is not "
                    f"supported"
                )
            helpers.append(callee)
            frontier.append(callee)

    if not exported:
        return RemotePart("", (), (), alias_mode)
    # exports first so the bundle's entry is an exported function,
    # helpers after, both in original program order
    export_funcs = [f for f in program.functions if f.name in exported_set]
    helper_funcs = [f for f in program.functions
                    if f.name in seen and f.name not in exported_set]
    sub = ir.Program(tuple(export_funcs + helper_funcs), export_funcs[0].name)
    entries = tuple(
        ExportEntry(a.name, a.report.total, a.regions)
        for a in analyses.values() if a.exportable
    )
    return RemotePart(ir.print_program(sub), entries,
                      tuple(f.name for f in helper_funcs), alias_mode)


# ---------------------------------------------------------------------------
# Transfer size and placement


def transfer_bytes(f: ir.Function) -> int:
    """Bytes crossing the wire for one call by declared signature:
    each scalar once, each array twice (it travels out and back), plus
    a scalar result. Value-independent by construction."""
    total = 0
    for _, vt in f.params:
        if vt.is_array:
            total += 2 * 8 * vt.element_count
        else:
            total += 8
    if f.result is not None:
        total += 8
    return total


@dataclass(frozen=True)
class Placement:
    """A placement decision and the fraction that produced it; None
    stands for an infinite fraction (nothing to transfer)."""

    remote: bool
    fraction: Fraction | None
    score: Fraction
    bytes: int
    c: Fraction


def decide(score: Fraction | int, bytes_: int, c: Fraction | int) -> Placement:
    score = Fraction(score)
    c = Fraction(c)
    if score < 0 or c < 0 or bytes_ < 0:
        raise ValueError("score, bytes, and c must be nonnegative")
    if bytes_ == 0:
        if score > 0:
            return Placement(True, None, score, bytes_, c)
        return Placement(False, Fraction(0), score, bytes_, c)
    fraction = score / bytes_
    return Placement(fraction > c, fraction, score, bytes_, c)


# ---------------------------------------------------------------------------
# Remote endpoint (blocking RPC client)


class RemoteRejected(Exception):
    """Server refused the session or the remote part."""


class RemoteFault(InterpError):
    """The remote execution faulted; message is the diagnostic the
    local interpreter would have produced."""


class OffloadTransportError(Exception):
    """Connection-level failure during handshake or a call."""


@dataclass(frozen=True)
class OffloadConfig:
    c: Fraction = Fraction(0)
    host: str = "127.0.0.1"
    port: int = DEFAULT_PORT
    connect_timeout: float = 10.0
    call_timeout: float | None = None
    force: str | None = None  # None | "local" | "remote"

    def __post_init__(self):
        if self.c < 0:
            raise ValueError("c must be nonnegative")
        if self.force not in (None, "local", "remote"):
            raise ValueError("force must be None, 'local', or 'remote'")


class RemoteEndpoint:
    """One client connection: handshake once, then blocking calls, one
    outstanding at a time."""

    def __init__(self, stream: FrameStream):
        self._stream = stream
        self._tracker = SessionTracker("client")
        self._lock = threading.Lock()
        self.alive = False
        self.last_raw_seconds: float | None = None
        self.raw_seconds_accum = 0.0

    @staticmethod
    def connect(host: str, port: int, timeout: float = 10.0) -> "RemoteEndpoint":
        import socket as _socket

        try:
            sock = _socket.create_connection((host, port), timeout=timeout)
            sock.settimeout(None)
        except OSError as e:
            raise OffloadTransportError(f"cannot connect to {host}:{port}: {e}") from e
        return RemoteEndpoint(FrameStream(sock))

    def _send(self, m: Message) -> None:
        self._tracker.on_send(m.kind)
        self._stream.send(m)

    def _recv(self) -> Message:
        m = self._stream.recv()
        if m is None:
            raise OffloadTransportError("server closed the connection")
        self._tracker.on_recv(m.kind)
        return m

    def handshake(self, part: RemotePart) -> None:
        """HELLO + REMOTE_PART, then block until READY or REJECT."""
        try:
            self._send(Message(MessageKind.HELLO, PROTOCOL_VERSION))
            self._send(Message(MessageKind.REMOTE_PART, part.to_payload()))
            reply = self._recv()
        except (OSError, ProtocolError) as e:
            self.close()
            raise OffloadTransportError(f"handshake failed: {e}") from e
        if reply.kind == MessageKind.REJECT:
            self.close()
            raise RemoteRejected(reply.payload)
        self.alive = True

    def call(self, function: str, args: list[Value]) -> Value | None:
        """Execute remotely; copies returned array contents into the
        argument buffers and returns the result value. Raises
        RemoteFault on a remote runtime fault (buffers untouched)."""
        with self._lock:
            try:
                self._send(encode_call(function, args))
                reply = self._recv()
            except (OSError, ProtocolError) as e:
                self.alive = False
                self.close()
                raise OffloadTransportError(f"remote call failed: {e}") from e
            if reply.kind == MessageKind.FAULT:
                raise RemoteFault(reply.payload)
            resp = decode_result(reply.payload)
            self.last_raw_seconds = resp.raw_seconds
            self.raw_seconds_accum += resp.raw_seconds
            array_args = [a for a in args if a.vt.is_array]
            if len(resp.arrays) != len(array_args):
                self.alive = False
                self.close()
                raise OffloadTransportError(
                    f"server returned {len(resp.arrays)} arrays, "
                    f"expected {len(array_args)}"
                )
            for local, remote in zip(array_args, resp.arrays):
                if local.vt != remote.vt:
                    self.alive = False
                    self.close()
                    raise OffloadTransportError(
                        f"server returned {remote.vt}, expected {local.vt}"
                    )
                local.raw[:] = remote.raw
            return resp.result

    def close(self) -> None:
        self.alive = False
        self._stream.close()


# ---------------------------------------------------------------------------
# Guarded program


class RemoteBinding:
    """The per-function guard: placement decision plus the remote
    invocation path."""

    def __init__(self, f: ir.Function, score: Fraction, endpoint: RemoteEndpoint,
                 config: OffloadConfig):
        self.function = f
        self.score = score
        self.endpoint = endpoint
        self.config = config
        self.last_placement: Placement | None = None

    def take_remote(self, args: list[Value]) -> bool:
        if not self.endpoint.alive:
            return False
        if self.config.force == "local":
            return False
        if self.config.force == "remote":
            return True
        live_bytes = 0
        for v in args:
            if v.vt.is_array:
                live_bytes += 2 * 8 * v.vt.element_count
            else:
                live_bytes += 8
        if self.function.result is not None:
            live_bytes += 8
        placement = decide(self.score, live_bytes, self.config.c)
        self.last_placement = placement
        return placement.remote

    def invoke(self, args: list[Value]) -> Value | None:
        return self.endpoint.call(self.function.name, args)


class GuardedProgram:
    """A program view whose exported functions carry remote bindings.
    The interpreter resolves functions through it unchanged and asks
    guard_for() at each call."""

    def __init__(self, program: ir.Program, bindings: dict[str, RemoteBinding]):
        self._program = program
        self._bindings = bindings

    @property
    def entry(self) -> str:
        return self._program.entry

    @property
    def functions(self):
        return self._program.functions

    def function(self, name: str) -> ir.Function:
        return self._program.function(name)

    def has_function(self, name: str) -> bool:
        return self._program.has_function(name)

    def guard_for(self, name: str) -> RemoteBinding | None:
        return self._bindings.get(name)


def transform_to_local_part(program: ir.Program, part: RemotePart,
                            endpoint: RemoteEndpoint,
                            config: OffloadConfig) -> GuardedProgram:
    """Attach a guard to every exported function; everything else is
    untouched. Only call once the server has signalled READY."""
    bindings: dict[str, RemoteBinding] = {}
    for entry in part.exports:
        if not program.has_function(entry.name):
            raise BuildError(f"remote part names {entry.name}, "
                             f"which is not in the program")
        bindings[entry.name] = RemoteBinding(
            program.function(entry.name), entry.score, endpoint, config
        )
    return GuardedProgram(program, bindings)


# ---------------------------------------------------------------------------
# Client runtime


class ClientRuntime:
    """Drives a program while, in the background, exporting its hot
    functions to a server. Until READY arrives every call runs
    locally; after the atomic install, guarded calls decide per call.
    Calls already dispatched keep the program view they started with.
    """

    def __init__(self, program: ir.Program, config: OffloadConfig = OffloadConfig(),
                 analysis: AnalysisConfig = AnalysisConfig()):
        report = ir.validate(program)
        if not report.ok:
            raise ir.ValidationError(report)
        self._base = program
        self.config = config
        self.analysis = analysis
        self._current: ir.Program | GuardedProgram = program
        self._endpoint: RemoteEndpoint | None = None
        self._thread: threading.Thread | None = None
        self.settled = threading.Event()
        self.state = "local"  # local | connecting | installed | no-exports | rejected | unreachable
        self.detail = ""
        self.remote_part: RemotePart | None = None
        self.interpreter = Interpreter(lambda: self._current)

    # -- offload pipeline

    def start_offload(self, *, background: bool = True) -> None:
        """Analyze, export, and (on READY) install the guarded program.
        Runs on a daemon thread by default, mirroring how interpretation
        continues while the pipeline works."""
        if self._thread is not None:
            raise RuntimeError("offload pipeline already started")
        self.state = "connecting"
        if background:
            self._thread = threading.Thread(target=self._pipeline, daemon=True)
            self._thread.start()
        else:
            self._pipeline()

    def _pipeline(self) -> None:
        try:
            analyses = analyze_program(self._base, self.analysis)
            part = build_remote_part(self._base, analyses, self.analysis.alias_mode)
            self.remote_part = part
            if part.empty:
                self.state = "no-exports"
                return
            endpoint = RemoteEndpoint.connect(
                self.config.host, self.config.port, self.config.connect_timeout
            )
            endpoint.handshake(part)
            self._endpoint = endpoint
            guarded = transform_to_local_part(self._base, part, endpoint, self.config)
            self._current = guarded  # atomic publication
            self.state = "installed"
        except RemoteRejected as e:
            self.state = "rejected"
            self.detail = str(e)
        except (OffloadTransportError, BuildError) as e:
            self.state = "unreachable" if isinstance(e, OffloadTransportError) else "rejected"
            self.detail = str(e)
        finally:
            self.settled.set()

    def wait_settled(self, timeout: float | None = None) -> bool:
        """Block until the pipeline reached a terminal state (installed,
        no-exports, rejected, or unreachable)."""
        if self._thread is None and self.state == "local":
            return True
        return self.settled.wait(timeout)

    @property
    def endpoint(self) -> RemoteEndpoint | None:
        """The live server connection, or None before install / on no-export."""
        return self._endpoint

    # -- execution

    def run(self, entry: str | None = None, args: list[Value] | tuple[Value, ...] = ()):
        return self.interpreter.run(entry, args)

    def close(self) -> None:
        if self._endpoint is not None:
            self._endpoint.close()
