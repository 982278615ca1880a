"""The three halo exchange strategies.

A message carries the sender's face, so a rank receives its ``face`` ghosts
from the neighbor's ``face.opposite`` message.
"""
from __future__ import annotations

import enum
import queue
import threading
import time

import numpy as np

from ..errors import ConfigError, ExchangeError
from ..grid import Face
from .transport import Transport
from .wire import HaloMessage

_ALIASES = {
    "blocking": "blocking", "blockingsequential": "blocking",
    "posted": "posted", "postedoverlap": "posted",
    "commthread": "commthread", "comm_thread": "commthread", "thread": "commthread",
}


class ExchangeStrategy(enum.Enum):
    BLOCKING_SEQUENTIAL = "blocking"
    POSTED_OVERLAP = "posted"
    COMM_THREAD = "commthread"

    @classmethod
    def parse(cls, text) -> "ExchangeStrategy":
        if isinstance(text, cls):
            return text
        key = _ALIASES.get(str(text).lower().replace("-", ""))
        if key is None:
            raise ConfigError(
                f"unknown exchange strategy {text!r} (expected blocking, posted or commthread)"
            )
        return cls(key)


class HaloExchanger:
    """Per-rank driver of one exchange per step.

    ``post`` is called in the PostComm phase and ``wait`` in WaitComm.
    """

    def __init__(
        self,
        rank: int,
        neighbors: dict[Face, int],
        transport: Transport,
        strategy,
        timeout: float | None = 60.0,
    ):
        self.rank = rank
        self.neighbors = dict(sorted(neighbors.items()))
        self.transport = transport
        self.strategy = ExchangeStrategy.parse(strategy)
        self.timeout = timeout
        self.sent = 0
        self.received = 0
        # (start_ns, end_ns, step) of each exchange run by the comm thread
        self.comm_spans: list[tuple[int, int, int]] = []
        self._pending = None
        self._work: queue.Queue | None = None
        self._done: queue.Queue | None = None
        self._thread = None
        if self.strategy is ExchangeStrategy.COMM_THREAD and self.neighbors:
            self._work = queue.Queue()
            self._done = queue.Queue()
            self._thread = threading.Thread(
                target=self._comm_loop, name=f"comm-{rank}", daemon=True
            )
            self._thread.start()

    def _messages(self, step, outgoing):
        if set(outgoing) != set(self.neighbors):
            raise ExchangeError(
                f"rank {self.rank}: outgoing faces {sorted(outgoing)} do not match "
                f"neighbors {sorted(self.neighbors)}", step=step, rank=self.rank,
            )
        return [
            HaloMessage(self.rank, peer, step, face, outgoing[face])
            for face, peer in self.neighbors.items()
        ]

    def _receive(self, face, step):
        peer = self.neighbors[face]
        msg = self.transport.recv(peer, step, face.opposite, self.timeout)
        if msg.step != step:
            raise ExchangeError(
                f"rank {self.rank}: expected step {step} on {face.name}, got {msg.step}",
                face=face, step=step, rank=self.rank,
            )
        return msg.payload

    def _send_recv_all(self, step, msgs) -> dict[Face, np.ndarray]:
        for m in msgs:
            self.transport.send(m)
        return {face: self._receive(face, step) for face in self.neighbors}

    def _comm_loop(self):
        while True:
            item = self._work.get()
            if item is None:
                return
            step, msgs = item
            t0 = time.perf_counter_ns()
            try:
                result = self._send_recv_all(step, msgs)
            except BaseException as exc:  # noqa: BLE001 - handed to wait()
                result = exc
            self.comm_spans.append((t0, time.perf_counter_ns(), step))
            self._done.put((step, result))

    def post(self, step: int, outgoing: dict[Face, np.ndarray]) -> None:
        if not self.neighbors:
            return
        msgs = self._messages(step, outgoing)
        self.sent += len(msgs)
        if self.strategy is ExchangeStrategy.BLOCKING_SEQUENTIAL:
            self._pending = (step, msgs)
        elif self.strategy is ExchangeStrategy.POSTED_OVERLAP:
            self._pending = (step, [self.transport.isend(m) for m in msgs])
        else:
            self._pending = (step, None)
            self._work.put((step, msgs))

    def wait(self, step: int) -> dict[Face, np.ndarray]:
        if not self.neighbors:
            return {}
        if self._pending is None or self._pending[0] != step:
            raise ExchangeError(f"rank {self.rank}: wait for step {step} without post",
                                step=step, rank=self.rank)
        _, pending = self._pending
        self._pending = None
        if self.strategy is ExchangeStrategy.BLOCKING_SEQUENTIAL:
            out = {}
            # one face at a time: send, then block on the matching receive
            for m in pending:
                self.transport.send(m)
                out[m.face] = self._receive(m.face, step)
        elif self.strategy is ExchangeStrategy.POSTED_OVERLAP:
            for req in pending:
                req.wait()
            out = {face: self._receive(face, step) for face in self.neighbors}
        else:
            got_step, result = self._done.get()
            if isinstance(result, BaseException):
                raise result
            if got_step != step:
                raise ExchangeError(f"rank {self.rank}: comm thread finished step {got_step}, "
                                    f"expected {step}", step=step, rank=self.rank)
            out = result
        self.received += len(out)
        return out

    def close(self) -> None:
        if self._thread is not None:
            self._work.put(None)
            self._thread.join(timeout=10)
            self._thread = None


def exchange(strategy, transport: Transport, neighbors: dict[Face, int],
             outgoing: dict[Face, np.ndarray], step: int, timeout: float | None = 60.0):
    """One-shot post + wait; returns received payloads keyed by local face."""
    ex = HaloExchanger(transport.rank, neighbors, transport, strategy, timeout)
    try:
        ex.post(step, outgoing)
        return ex.wait(step)
    finally:
        ex.close()
