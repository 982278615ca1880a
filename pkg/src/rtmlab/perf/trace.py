"""Phase trace events and Chrome trace-format output."""
from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass
from pathlib import Path


@dataclass(frozen=True)
class TraceEvent:
    rank: int
    thread: int
    name: str
    start_ns: int
    dur_ns: int
    step: int
    cat: str = "phase"

    @property
    def end_ns(self) -> int:
        return self.start_ns + self.dur_ns


class TraceRecorder:
    """Collects events against a shared run epoch (monotonic nanoseconds)."""

    def __init__(self, epoch_ns: int | None = None, enabled: bool = True):
        self.epoch_ns = time.perf_counter_ns() if epoch_ns is None else epoch_ns
        self.enabled = enabled
        self._events: list[TraceEvent] = []
        self._lock = threading.Lock()

    def add(self, rank, thread, name, start_ns, end_ns, step, cat="phase") -> None:
        if not self.enabled:
            return
        ev = TraceEvent(rank, thread, name, start_ns - self.epoch_ns,
                        max(0, end_ns - start_ns), step, cat)
        with self._lock:
            self._events.append(ev)

    def extend(self, events) -> None:
        with self._lock:
            self._events.extend(events)

    @property
    def events(self) -> list[TraceEvent]:
        with self._lock:
            return sorted(self._events, key=lambda e: (e.rank, e.thread, e.start_ns))


def chrome_trace(events) -> dict:
    return {
        "traceEvents": [
            {
                "name": e.name,
                "cat": e.cat,
                "ph": "X",
                "ts": e.start_ns / 1000.0,
                "dur": e.dur_ns / 1000.0,
                "pid": e.rank,
                "tid": e.thread,
                "args": {"step": e.step},
            }
            for e in events
        ]
    }


def emit_trace(events, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(chrome_trace(events)), encoding="utf-8")
    return path


def load_trace(path) -> list[TraceEvent]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return [
        TraceEvent(e["pid"], e["tid"], e["name"], round(e["ts"] * 1000),
                   round(e["dur"] * 1000), e.get("args", {}).get("step", -1), e.get("cat", "phase"))
        for e in data["traceEvents"]
    ]
