"""Point-to-point transports for halo messages.

Both transports deliver into a per-rank :class:`Mailbox` that matches
receives by ``(peer, step, face)`` and buffers early arrivals. Nonblocking
sends are deferred: nothing moves until the request is waited on, which is
how a message-passing library behaves without an asynchronous progress
engine.
"""
from __future__ import annotations

import logging
import socket
import struct
import threading
import time

from ..errors import ExchangeError
from ..grid import Face
from .wire import HEADER_SIZE, HaloMessage, decode_header, decode_message, encode_message, payload_bytes

log = logging.getLogger(__name__)

HANDSHAKE = struct.Struct("<4sIQ")
HANDSHAKE_MAGIC = b"HSHK"


class Mailbox:
    def __init__(self, rank: int):
        self.rank = rank
        self._cond = threading.Condition()
        self._pending: dict[tuple[int, int, int], tuple[float, HaloMessage]] = {}
        self._last_step: dict[tuple[int, int], int] = {}
        self._dead: set[int] = set()
        self._errors: list[ExchangeError] = []

    def deliver(self, msg: HaloMessage, available_at: float = 0.0) -> None:
        with self._cond:
            key = (msg.src, int(msg.face))
            last = self._last_step.get(key)
            if last is not None and msg.step <= last:
                self._errors.append(ExchangeError(
                    f"rank {self.rank}: message from {msg.src} for step {msg.step} "
                    f"arrived after step {last}", face=msg.face, step=msg.step, rank=self.rank,
                ))
            self._last_step[key] = msg.step
            self._pending[(msg.src, msg.step, int(msg.face))] = (available_at, msg)
            self._cond.notify_all()

    def mark_dead(self, peer: int) -> None:
        with self._cond:
            self._dead.add(peer)
            self._cond.notify_all()

    def take(self, src: int, step: int, face: Face, timeout: float | None) -> HaloMessage:
        """Block until the message ``src`` sent through ``face`` for ``step`` is visible."""
        key = (src, step, int(face))
        deadline = None if timeout is None else time.monotonic() + timeout
        with self._cond:
            while True:
                if self._errors:
                    raise self._errors.pop(0)
                item = self._pending.get(key)
                now = time.monotonic()
                if item is not None:
                    wait = item[0] - now
                    if wait <= 0:
                        del self._pending[key]
                        return item[1]
                else:
                    if src in self._dead:
                        raise ExchangeError(
                            f"rank {self.rank}: peer {src} disconnected before step {step}",
                            face=face.opposite, step=step, rank=self.rank,
                        )
                    wait = None
                if deadline is not None:
                    left = deadline - now
                    if left <= 0:
                        raise ExchangeError(
                            f"rank {self.rank}: timed out waiting for peer {src} at step {step}",
                            face=face.opposite, step=step, rank=self.rank,
                        )
                    wait = left if wait is None else min(wait, left)
                self._cond.wait(wait)


class _DeferredSend:
    def __init__(self, transport: "Transport", msg: HaloMessage):
        self._transport = transport
        self._msg = msg
        self.done = False

    def wait(self) -> None:
        if not self.done:
            self._transport.send(self._msg)
            self.done = True


class Transport:
    """Endpoint of one rank."""

    rank: int
    mailbox: Mailbox

    def send(self, msg: HaloMessage) -> None:
        raise NotImplementedError

    def isend(self, msg: HaloMessage) -> _DeferredSend:
        return _DeferredSend(self, msg)

    def recv(self, src: int, step: int, face: Face, timeout: float | None = None) -> HaloMessage:
        """Receive what ``src`` sent through its ``face`` for ``step``."""
        return self.mailbox.take(src, step, face, timeout)

    def close(self) -> None:
        pass


class InProcessNetwork:
    """Ranks as threads of one process; ``latency`` seconds of wire delay per message."""

    def __init__(self, size: int, latency: float = 0.0):
        self.size = size
        self.latency = latency
        self.mailboxes = [Mailbox(r) for r in range(size)]
        self.sent = [0] * size
        self._lock = threading.Lock()

    def endpoint(self, rank: int) -> "InProcessTransport":
        return InProcessTransport(self, rank)

    def fail(self, rank: int) -> None:
        """Simulate ``rank`` disconnecting from every peer."""
        for box in self.mailboxes:
            box.mark_dead(rank)


class InProcessTransport(Transport):
    def __init__(self, network: InProcessNetwork, rank: int):
        self.network = network
        self.rank = rank
        self.mailbox = network.mailboxes[rank]

    def send(self, msg: HaloMessage) -> None:
        if msg.src != self.rank:
            raise ValueError(f"rank {self.rank} cannot send as {msg.src}")
        with self.network._lock:
            self.network.sent[self.rank] += 1
        self.network.mailboxes[msg.dst].deliver(msg, time.monotonic() + self.network.latency)


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ConnectionError("connection closed")
        buf += chunk
    return bytes(buf)


class TcpTransport(Transport):
    """One long-lived connection per neighbor pair.

    Rank ``i`` listens on ``base_port + i``. The higher rank of each pair
    connects to the lower one and both sides exchange (rank, checksum).
    A reader thread per connection drains frames into the mailbox.
    """

    def __init__(
        self,
        rank: int,
        peers,
        base_port: int,
        checksum: int,
        host: str = "127.0.0.1",
        connect_timeout: float = 30.0,
    ):
        self.rank = rank
        self.mailbox = Mailbox(rank)
        self.checksum = checksum
        self._socks: dict[int, socket.socket] = {}
        self._send_locks: dict[int, threading.Lock] = {}
        self._readers: list[threading.Thread] = []
        self._closing = False
        peers = sorted(set(peers))
        listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        listener.bind((host, base_port + rank))
        listener.listen(max(1, len(peers)))
        listener.settimeout(connect_timeout)
        try:
            for peer in (p for p in peers if p < rank):
                self._connect(host, base_port + peer, peer, connect_timeout)
            for _ in (p for p in peers if p > rank):
                try:
                    conn, _addr = listener.accept()
                except socket.timeout:
                    raise ExchangeError(f"rank {rank}: timed out waiting for peers", rank=rank) from None
                conn.settimeout(connect_timeout)
                peer = self._handshake(conn)
                if peer not in peers:
                    conn.close()
                    raise ExchangeError(f"rank {rank}: unexpected peer {peer}", rank=rank)
                self._add(peer, conn)
        except BaseException:
            self.close()
            raise
        finally:
            listener.close()
        for peer, sock in self._socks.items():
            t = threading.Thread(target=self._read_loop, args=(peer, sock),
                                 name=f"tcp-reader-{rank}-{peer}", daemon=True)
            t.start()
            self._readers.append(t)

    def _connect(self, host, port, peer, timeout):
        deadline = time.monotonic() + timeout
        while True:
            try:
                sock = socket.create_connection((host, port), timeout=timeout)
                break
            except OSError:
                if time.monotonic() > deadline:
                    raise ExchangeError(
                        f"rank {self.rank}: cannot reach rank {peer} on port {port}", rank=self.rank
                    ) from None
                time.sleep(0.05)
        got = self._handshake(sock)
        if got != peer:
            sock.close()
            raise ExchangeError(f"rank {self.rank}: expected rank {peer}, got {got}", rank=self.rank)
        self._add(peer, sock)

    def _handshake(self, sock: socket.socket) -> int:
        sock.sendall(HANDSHAKE.pack(HANDSHAKE_MAGIC, self.rank, self.checksum))
        magic, peer, checksum = HANDSHAKE.unpack(_recv_exact(sock, HANDSHAKE.size))
        if magic != HANDSHAKE_MAGIC:
            raise ExchangeError(f"rank {self.rank}: bad handshake", rank=self.rank)
        if checksum != self.checksum:
            raise ExchangeError(
                f"rank {self.rank}: decomposition checksum mismatch with rank {peer}",
                rank=self.rank,
            )
        return peer

    def _add(self, peer, sock):
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        sock.settimeout(None)
        self._socks[peer] = sock
        self._send_locks[peer] = threading.Lock()

    def _read_loop(self, peer, sock):
        try:
            while True:
                head = _recv_exact(sock, HEADER_SIZE)
                code, *_rest, length = decode_header(head)
                body = _recv_exact(sock, payload_bytes(code, length))
                msg = decode_message(head + body)
                if msg.src != peer or msg.dst != self.rank:
                    raise ExchangeError(f"misaddressed frame {msg.src}->{msg.dst} on link to {peer}")
                self.mailbox.deliver(msg)
        except Exception as exc:  # noqa: BLE001 - reported through the mailbox
            if not self._closing:
                log.debug("rank %d: link to %d closed: %r", self.rank, peer, exc)
        finally:
            self.mailbox.mark_dead(peer)

    def send(self, msg: HaloMessage) -> None:
        sock = self._socks.get(msg.dst)
        if sock is None:
            raise ExchangeError(f"rank {self.rank}: no link to rank {msg.dst}",
                                face=msg.face, step=msg.step, rank=self.rank)
        frame = encode_message(msg)
        try:
            with self._send_locks[msg.dst]:
                sock.sendall(frame)
        except OSError as exc:
            raise ExchangeError(f"rank {self.rank}: send to {msg.dst} failed: {exc}",
                                face=msg.face, step=msg.step, rank=self.rank) from exc

    def close(self) -> None:
        self._closing = True
        for sock in self._socks.values():
            try:
                sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            sock.close()
        for t in self._readers:
            t.join(timeout=5)
        self._socks.clear()
