"""Buffer views that either copy a block into scratch space or alias it.

Copy mode reproduces an abstraction layer built for accelerators, which
stages data into a separate buffer and writes it back; Alias mode hands out
the original storage.
"""
from __future__ import annotations

import enum
import threading

import numpy as np

from ..errors import ConfigError, UsageError


class ViewMode(enum.Enum):
    COPY = "copy"
    ALIAS = "alias"

    @classmethod
    def parse(cls, text) -> "ViewMode":
        if isinstance(text, cls):
            return text
        try:
            return cls(str(text).lower())
        except ValueError:
            raise ConfigError(f"unknown view mode {text!r} (expected copy or alias)") from None


class CopyCounter:
    def __init__(self):
        self._lock = threading.Lock()
        self.bytes_copied = 0
        self.copies = 0

    def count(self, nbytes: int) -> None:
        with self._lock:
            self.bytes_copied += nbytes
            self.copies += 1


class BlockView:
    def __init__(self, block: np.ndarray, mode: ViewMode, counter: CopyCounter):
        self.block = block
        self.mode = mode
        self.counter = counter
        self.live = True
        if mode is ViewMode.COPY:
            self.array = np.empty_like(block)
            np.copyto(self.array, block)
            counter.count(block.nbytes)
        else:
            self.array = block


def acquire_view(block: np.ndarray, mode, counter: CopyCounter) -> BlockView:
    return BlockView(block, ViewMode.parse(mode), counter)


def release(view) -> None:
    """Finish a view; Copy mode writes the scratch data back."""
    if not isinstance(view, BlockView) or not view.live:
        raise UsageError("release of a view that is not currently acquired")
    view.live = False
    if view.mode is ViewMode.COPY:
        np.copyto(view.block, view.array)
        view.counter.count(view.block.nbytes)
