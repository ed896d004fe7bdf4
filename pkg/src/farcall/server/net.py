"""TCP front end for the acceleration server.

One client session at a time: HELLO (version check), REMOTE_PART
(validated, scheduled, compiled while the client waits), then READY and
a CALL/RESULT loop until the client disconnects. Any rejection reason
travels back verbatim in a REJECT frame; execution faults travel in
FAULT frames and leave the session open for further calls.

Protocol violations (bad frames, out-of-order messages) close the
connection; the listener then accepts the next client.
"""

from __future__ import annotations

import logging
import socket
import threading
import time
from dataclasses import dataclass

from ..interp import InterpError
from ..offload import RemotePart
from ..proto import (
    DEFAULT_PORT,
    PROTOCOL_VERSION,
    FrameStream,
    Message,
    MessageKind,
    ProtocolError,
    SessionTracker,
    CallResponse,
    decode_call,
    encode_result,
)
from .engine import ExecutablePart, PartRejected, WorkerPool, execute_call, optimize

__all__ = ["Server", "ServerConfig"]

log = logging.getLogger("farcall.server")


@dataclass(frozen=True)
class ServerConfig:
    host: str = "127.0.0.1"
    port: int = DEFAULT_PORT  # 0 picks an ephemeral port
    workers: int = 1
    vector_width: int = 1

    def __post_init__(self):
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.vector_width < 1:
            raise ValueError("vector_width must be >= 1")


class Server:
    """Accepts one session at a time and serves calls until closed.

    Construction binds the listening socket, so ``server.port`` is
    final immediately (useful with port 0). Run ``serve_forever``
    directly or via ``start`` on a background thread.
    """

    def __init__(self, config: ServerConfig = ServerConfig()):
        self.config = config
        self.pool = WorkerPool(config.workers)
        self._listener = socket.create_server((config.host, config.port))
        self.port = self._listener.getsockname()[1]
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self._conn_lock = threading.Lock()
        self._conn: socket.socket | None = None

    # -- lifecycle

    def start(self) -> "Server":
        self._thread = threading.Thread(target=self.serve_forever,
                                        name="farcall-server", daemon=True)
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        log.info("listening on %s:%d (workers=%d, vector_width=%d)",
                 self.config.host, self.port, self.config.workers,
                 self.config.vector_width)
        while not self._stop.is_set():
            try:
                conn, peer = self._listener.accept()
            except OSError:
                break
            with self._conn_lock:
                self._conn = conn
            try:
                log.info("session from %s:%d", *peer[:2])
                self._session(conn)
            except ProtocolError as e:
                log.warning("session ended on protocol violation: %s", e)
            except OSError as e:
                log.warning("session ended on transport error: %s", e)
            finally:
                with self._conn_lock:
                    self._conn = None
                try:
                    conn.close()
                except OSError:
                    pass

    def shutdown(self) -> None:
        self._stop.set()
        try:
            self._listener.close()
        except OSError:
            pass
        with self._conn_lock:
            if self._conn is not None:
                try:
                    self._conn.shutdown(socket.SHUT_RDWR)
                except OSError:
                    pass
                try:
                    self._conn.close()
                except OSError:
                    pass
        if self._thread is not None:
            self._thread.join(timeout=10)
            self._thread = None
        self.pool.shutdown()

    def __enter__(self) -> "Server":
        return self

    def __exit__(self, *exc) -> None:
        self.shutdown()

    # -- session

    def _session(self, conn: socket.socket) -> None:
        stream = FrameStream(conn)
        tracker = SessionTracker("server")

        def reject(reason: str) -> None:
            tracker.on_send(MessageKind.REJECT)
            stream.send(Message(MessageKind.REJECT, reason))
            log.info("rejected part: %s", reason)

        msg = stream.recv()
        if msg is None:
            return
        tracker.on_recv(msg.kind)
        if msg.payload != PROTOCOL_VERSION:
            reject(f"unsupported protocol version {msg.payload!r}, "
                   f"server speaks {PROTOCOL_VERSION}")
            return

        msg = stream.recv()
        if msg is None:
            return
        tracker.on_recv(msg.kind)
        try:
            part = RemotePart.from_payload(msg.payload)
            exports = ", ".join(f"{e.name} (score {e.score})" for e in part.exports)
            log.info("remote part received: alias=%s, exports: %s",
                     part.alias_mode, exports or "none")
            t0 = time.perf_counter()
            executable = optimize(part, workers=self.config.workers,
                                  vector_width=self.config.vector_width)
        except (ProtocolError, PartRejected) as e:
            reject(str(e))
            return
        for line in executable.describe():
            log.info("schedule: %s", line)
        log.info("part compiled in %.3fs", time.perf_counter() - t0)
        tracker.on_send(MessageKind.READY)
        stream.send(Message(MessageKind.READY))

        while True:
            msg = stream.recv()
            if msg is None:
                log.info("client disconnected")
                return
            tracker.on_recv(msg.kind)
            req = decode_call(msg.payload)
            t0 = time.perf_counter()
            try:
                result, arrays, raw = execute_call(
                    executable, self.pool, req.function, list(req.args))
            except (InterpError, ValueError, KeyError) as e:
                reply = Message(MessageKind.FAULT, str(e))
                log.info("call %s faulted: %s", req.function, e)
            else:
                reply = encode_result(CallResponse(raw, result, tuple(arrays)))
                log.info("call %s: raw %.6fs, total %.6fs",
                         req.function, raw, time.perf_counter() - t0)
            tracker.on_send(reply.kind)
            stream.send(reply)
