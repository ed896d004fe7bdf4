"""Client/server wire protocol: framing, value marshalling, session
state tracking, and the blocking client session.

Frame layout, fixed for interoperability: 4-byte big-endian payload
length, 1-byte message kind, then the UTF-8 payload. Payloads are
text; values inside them marshal so that decoding is the exact inverse
of encoding, bit for bit:

* i64 as decimal,
* f64 as the 16 lowercase hex digits of its big-endian binary64 bit
  pattern (NaN payloads, signed zeros, and subnormals survive),
* arrays as their extents followed by every element, space separated.

Session order is part of the protocol: a client sends HELLO (carrying
the protocol version) then REMOTE_PART then only CALL; a server sends
READY or REJECT once, then exactly one RESULT or FAULT per CALL, in
order. One call may be outstanding at a time. Anything else is a
protocol fault and closes the connection.
"""

from __future__ import annotations

import binascii
import enum
import socket
import struct
from dataclasses import dataclass

import numpy as np

from . import ir
from .interp import Value

__all__ = [
    "PROTOCOL_VERSION",
    "DEFAULT_PORT",
    "MAX_PAYLOAD",
    "MessageKind",
    "Message",
    "ProtocolError",
    "SessionOrderError",
    "encode_message",
    "decode_message",
    "FrameStream",
    "marshal_value",
    "unmarshal_value",
    "CallRequest",
    "encode_call",
    "decode_call",
    "CallResponse",
    "encode_result",
    "decode_result",
    "SessionTracker",
]

PROTOCOL_VERSION = "1"
DEFAULT_PORT = 47701
MAX_PAYLOAD = 2**31 - 1

_HEADER = struct.Struct(">IB")


class MessageKind(enum.IntEnum):
    HELLO = 1
    REMOTE_PART = 2
    READY = 3
    REJECT = 4
    CALL = 5
    RESULT = 6
    FAULT = 7


@dataclass(frozen=True)
class Message:
    kind: MessageKind
    payload: str = ""


class ProtocolError(Exception):
    """Malformed frame or marshalling, or an out-of-order message."""


class SessionOrderError(ProtocolError):
    """A message legal in some session state arrived in the wrong one."""


# ---------------------------------------------------------------------------
# Framing


def encode_message(m: Message) -> bytes:
    body = m.payload.encode("utf-8")
    if len(body) > MAX_PAYLOAD:
        raise ProtocolError(f"payload of {len(body)} bytes exceeds frame limit")
    return _HEADER.pack(len(body), int(m.kind)) + body


def decode_message(buf: bytes) -> Message:
    """Decode exactly one complete frame; trailing bytes are an error."""
    if len(buf) < _HEADER.size:
        raise ProtocolError(f"short frame: {len(buf)} bytes, header needs 5")
    length, tag = _HEADER.unpack_from(buf)
    if length > MAX_PAYLOAD:
        raise ProtocolError(f"oversize frame: payload length {length}")
    if len(buf) != _HEADER.size + length:
        raise ProtocolError(
            f"frame length mismatch: header says {length}, "
            f"got {len(buf) - _HEADER.size} payload bytes"
        )
    try:
        kind = MessageKind(tag)
    except ValueError:
        raise ProtocolError(f"unknown message kind tag {tag}") from None
    try:
        payload = buf[_HEADER.size:].decode("utf-8")
    except UnicodeDecodeError as e:
        raise ProtocolError(f"payload is not valid UTF-8: {e}") from None
    return Message(kind, payload)


class FrameStream:
    """Blocking framed messages over a connected socket."""

    def __init__(self, sock: socket.socket):
        self._sock = sock

    def send(self, m: Message) -> None:
        self._sock.sendall(encode_message(m))

    def _recv_exactly(self, n: int, *, at_boundary: bool) -> bytes | None:
        chunks = []
        got = 0
        while got < n:
            chunk = self._sock.recv(min(n - got, 1 << 20))
            if not chunk:
                if got == 0 and at_boundary:
                    return None
                raise ProtocolError(
                    f"connection closed mid-frame: wanted {n} bytes, got {got}"
                )
            chunks.append(chunk)
            got += len(chunk)
        return b"".join(chunks)

    def recv(self) -> Message | None:
        """Next message, or None on a clean close between frames."""
        header = self._recv_exactly(_HEADER.size, at_boundary=True)
        if header is None:
            return None
        length, tag = _HEADER.unpack(header)
        if length > MAX_PAYLOAD:
            raise ProtocolError(f"oversize frame: payload length {length}")
        body = self._recv_exactly(length, at_boundary=False) if length else b""
        return decode_message(header + (body or b""))

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()


# ---------------------------------------------------------------------------
# Value marshalling


def _f64_hex(x: float) -> str:
    return struct.pack(">d", x).hex()


def _f64_unhex(text: str) -> float:
    raw = bytes.fromhex(text)
    if len(raw) != 8:
        raise ProtocolError(f"f64 literal must be 16 hex digits, got {text!r}")
    return struct.unpack(">d", raw)[0]


def marshal_value(v: Value) -> str:
    vt = v.vt
    if not vt.is_array:
        if vt.base == ir.Scalar.I64:
            return str(v.raw)
        return _f64_hex(v.raw)
    head = " ".join(str(d) for d in vt.shape)
    buf: np.ndarray = v.raw
    if vt.base == ir.Scalar.I64:
        return head + " " + " ".join(str(x) for x in buf.tolist())
    be = buf.view(np.uint64).astype(">u8").tobytes()
    return head + " " + binascii.hexlify(be, " ", 8).decode("ascii")


def unmarshal_value(text: str, vt: ir.ValueType) -> Value:
    try:
        if not vt.is_array:
            if vt.base == ir.Scalar.I64:
                return Value.i64(_parse_i64(text.strip()))
            return Value(ir.F64, _f64_unhex(text.strip()))
        tokens = text.split()
        rank = len(vt.shape)
        if len(tokens) < rank:
            raise ProtocolError(f"array payload too short for rank {rank}")
        extents = tuple(int(t) for t in tokens[:rank])
        if extents != vt.shape:
            raise ProtocolError(
                f"extent mismatch: declared {vt}, payload says {extents}"
            )
        elems = tokens[rank:]
        if len(elems) != vt.element_count:
            raise ProtocolError(
                f"element count mismatch: {vt} holds {vt.element_count}, "
                f"payload has {len(elems)}"
            )
        if vt.base == ir.Scalar.I64:
            buf = np.array([_parse_i64(t) for t in elems], dtype=np.int64)
        else:
            raw = bytes.fromhex("".join(elems))
            if len(raw) != 8 * vt.element_count:
                raise ProtocolError("f64 array elements must be 16 hex digits each")
            buf = np.frombuffer(raw, dtype=">u8").astype(np.uint64).view(np.float64)
        return Value(vt, buf)
    except (ValueError, binascii.Error) as e:
        raise ProtocolError(f"malformed {vt} literal: {e}") from None


def _parse_i64(tok: str) -> int:
    v = int(tok)
    if not (-(1 << 63) <= v < (1 << 63)):
        raise ProtocolError(f"integer out of i64 range: {tok}")
    return v


def _parse_type(text: str) -> ir.ValueType:
    base_txt, _, rest = text.partition("[")
    try:
        base = ir.Scalar(base_txt)
    except ValueError:
        raise ProtocolError(f"unknown type {text!r}") from None
    if not rest:
        return ir.ValueType(base)
    dims = ("[" + rest).replace("[", " ").replace("]", " ").split()
    try:
        shape = tuple(int(d) for d in dims)
    except ValueError:
        raise ProtocolError(f"malformed type {text!r}") from None
    if any(d < 1 for d in shape):
        raise ProtocolError(f"non-positive extent in type {text!r}")
    return ir.ValueType(base, shape)


# ---------------------------------------------------------------------------
# Calls


@dataclass(frozen=True)
class CallRequest:
    function: str
    args: tuple[Value, ...]


def encode_call(function: str, args: list[Value] | tuple[Value, ...]) -> Message:
    lines = [function]
    for v in args:
        lines.append(f"{v.vt.render()} {marshal_value(v)}")
    return Message(MessageKind.CALL, "\n".join(lines))


def decode_call(payload: str) -> CallRequest:
    lines = payload.split("\n")
    if not lines or not lines[0]:
        raise ProtocolError("call payload missing function name")
    args = []
    for line in lines[1:]:
        type_txt, _, value_txt = line.partition(" ")
        args.append(unmarshal_value(value_txt, _parse_type(type_txt)))
    return CallRequest(lines[0], tuple(args))


@dataclass(frozen=True)
class CallResponse:
    """A remote call's outcome: the wall time the server measured for
    the bare execution (its raw seconds, excluding transfer), the
    result value (None for void), and the final contents of every array
    argument in argument order."""

    raw_seconds: float
    result: Value | None
    arrays: tuple[Value, ...]


def encode_result(resp: CallResponse) -> Message:
    lines = [_f64_hex(resp.raw_seconds)]
    if resp.result is None:
        lines.append("void")
    else:
        lines.append(f"{resp.result.vt.render()} {marshal_value(resp.result)}")
    for v in resp.arrays:
        lines.append(f"{v.vt.render()} {marshal_value(v)}")
    return Message(MessageKind.RESULT, "\n".join(lines))


def decode_result(payload: str) -> CallResponse:
    lines = payload.split("\n")
    if len(lines) < 2:
        raise ProtocolError("result payload needs a timing line and a result line")
    raw_seconds = _f64_unhex(lines[0].strip())
    if lines[1] == "void":
        result = None
    else:
        type_txt, _, value_txt = lines[1].partition(" ")
        result = unmarshal_value(value_txt, _parse_type(type_txt))
    arrays = []
    for line in lines[2:]:
        type_txt, _, value_txt = line.partition(" ")
        vt = _parse_type(type_txt)
        if not vt.is_array:
            raise ProtocolError("result array section holds a scalar")
        arrays.append(unmarshal_value(value_txt, vt))
    return CallResponse(raw_seconds, result, tuple(arrays))


# ---------------------------------------------------------------------------
# Session order


class SessionTracker:
    """Legal-order automaton for one session endpoint.

    Feed it every message the endpoint sends and receives; it raises
    SessionOrderError on the first out-of-order message. The client and
    server trackers are mirror images (a client 'send' is the server's
    'recv' of the same kind).
    """

    _CLIENT = {
        ("start", "send", MessageKind.HELLO): "hello_sent",
        ("hello_sent", "send", MessageKind.REMOTE_PART): "awaiting_decision",
        ("awaiting_decision", "recv", MessageKind.READY): "ready",
        ("awaiting_decision", "recv", MessageKind.REJECT): "rejected",
        ("ready", "send", MessageKind.CALL): "call_pending",
        ("call_pending", "recv", MessageKind.RESULT): "ready",
        ("call_pending", "recv", MessageKind.FAULT): "ready",
    }
    _SERVER = {
        ("start", "recv", MessageKind.HELLO): "hello_seen",
        ("hello_seen", "send", MessageKind.REJECT): "rejected",
        ("hello_seen", "recv", MessageKind.REMOTE_PART): "deciding",
        ("deciding", "send", MessageKind.READY): "serving",
        ("deciding", "send", MessageKind.REJECT): "rejected",
        ("serving", "recv", MessageKind.CALL): "responding",
        ("responding", "send", MessageKind.RESULT): "serving",
        ("responding", "send", MessageKind.FAULT): "serving",
    }

    def __init__(self, role: str):
        if role not in ("client", "server"):
            raise ValueError("role must be 'client' or 'server'")
        self.role = role
        self.state = "start"
        self._table = self._CLIENT if role == "client" else self._SERVER

    def _step(self, direction: str, kind: MessageKind) -> None:
        key = (self.state, direction, kind)
        nxt = self._table.get(key)
        if nxt is None:
            raise SessionOrderError(
                f"{self.role} may not {direction} {kind.name} in state {self.state}"
            )
        self.state = nxt

    def on_send(self, kind: MessageKind) -> None:
        self._step("send", kind)

    def on_recv(self, kind: MessageKind) -> None:
        self._step("recv", kind)
