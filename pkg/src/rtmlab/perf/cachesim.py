"""Address streams of the stencil loop nest and a set-associative LRU cache model.

This is a locality model, not a timing model: it sees the pressure-block
reads and the laplacian writes of each cell, nothing else.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from ..errors import ConfigError
from ..stencil import Box, LoopOrder

KIB = 1024


@dataclass(frozen=True)
class CacheModel:
    capacity: int = 256 * KIB
    line: int = 64
    ways: int = 8
    value_size: int = 4

    def __post_init__(self):
        if self.line < 1 or self.line & (self.line - 1):
            raise ConfigError(f"line size must be a power of two, got {self.line}")
        if self.ways < 1 or self.capacity < 1:
            raise ConfigError("capacity and associativity must be positive")
        if self.capacity % (self.line * self.ways):
            raise ConfigError(
                f"capacity {self.capacity} is not a multiple of line*ways = {self.line * self.ways}"
            )

    @property
    def sets(self) -> int:
        return self.capacity // (self.line * self.ways)

    @classmethod
    def fully_associative(cls, capacity: int, line: int = 64, value_size: int = 4) -> "CacheModel":
        return cls(capacity, line, capacity // line, value_size)


@dataclass(frozen=True)
class CacheStats:
    accesses: int
    hits: int
    misses: int
    evictions: int

    @property
    def miss_rate(self) -> float:
        return self.misses / self.accesses if self.accesses else 0.0


@numba.njit(cache=True)
def _stream(order_zyx, lx, ly, lz, rx, ry, rz, bx0, by0, bz0, bx1, by1, bz1,
            vsize, in_base, out_base, out):
    px = lx + 2 * rx
    py = ly + 2 * ry
    n = 0
    if order_zyx:
        o0, o1, i0, i1 = bz0, bz1, by0, by1
    else:
        o0, o1, i0, i1 = by0, by1, bz0, bz1
    for a in range(o0, o1):
        for b in range(i0, i1):
            if order_zyx:
                z, y = a, b
            else:
                y, z = a, b
            for x in range(bx0, bx1):
                cz = z + rz
                cy = y + ry
                cx = x + rx
                for i in range(-rx, rx + 1):
                    out[n] = in_base + ((cz * py + cy) * px + cx + i) * vsize
                    n += 1
                for j in range(-ry, ry + 1):
                    if j != 0:
                        out[n] = in_base + ((cz * py + cy + j) * px + cx) * vsize
                        n += 1
                for k in range(-rz, rz + 1):
                    if k != 0:
                        out[n] = in_base + (((cz + k) * py + cy) * px + cx) * vsize
                        n += 1
                out[n] = out_base + ((z * ly + y) * lx + x) * vsize
                n += 1
    return n


def _as_box(tile) -> Box:
    if isinstance(tile, Box):
        return tile
    tx, ty, tz = tile
    return Box(0, tx, 0, ty, 0, tz)


def access_stream(tile, radii, order=LoopOrder.ZYX, value_size=4, block=None,
                  in_base=0, out_base=None) -> np.ndarray:
    """Byte addresses touched by the stencil over ``tile`` in loop-nest order.

    ``tile`` is a Box in interior coordinates or an ``(x, y, z)`` extent
    triple. ``block`` is the interior extent ``(lx, ly, lz)`` of the
    enclosing block (defaults to the tile). The input block is padded by
    the radii; the output block follows it, page aligned, unless
    ``out_base`` is given. Per cell: X arm, Y arm, Z arm in ascending
    offset order (centre once, in the X arm), then the write.
    """
    order = LoopOrder.parse(order)
    box = _as_box(tile)
    rx, ry, rz = radii
    if block is None:
        block = (box.x1, box.y1, box.z1)
    lx, ly, lz = block
    if box.x1 > lx or box.y1 > ly or box.z1 > lz or min(box.x0, box.y0, box.z0) < 0:
        raise IndexError(f"tile {box} outside block {block}")
    if out_base is None:
        in_bytes = (lx + 2 * rx) * (ly + 2 * ry) * (lz + 2 * rz) * value_size
        out_base = in_base + -(-in_bytes // 4096) * 4096
    per_cell = 2 * (rx + ry + rz) + 2
    out = np.empty(box.cells * per_cell, dtype=np.int64)
    n = _stream(order is LoopOrder.ZYX, lx, ly, lz, rx, ry, rz,
                box.x0, box.y0, box.z0, box.x1, box.y1, box.z1,
                value_size, in_base, out_base, out)
    assert n == out.size
    return out


@numba.njit(cache=True)
def _simulate(stream, line_shift, sets, ways):
    tags = np.full((sets, ways), -1, dtype=np.int64)
    stamp = np.zeros((sets, ways), dtype=np.int64)
    hits = 0
    evictions = 0
    clock = 0
    for a in stream:
        clock += 1
        line = a >> line_shift
        s = line % sets
        row = tags[s]
        found = -1
        for w in range(ways):
            if row[w] == line:
                found = w
                break
        if found >= 0:
            hits += 1
            stamp[s, found] = clock
            continue
        victim = 0
        oldest = stamp[s, 0]
        for w in range(ways):
            if row[w] == -1:
                victim = w
                break
            if stamp[s, w] < oldest:
                oldest = stamp[s, w]
                victim = w
        if row[victim] != -1:
            evictions += 1
        row[victim] = line
        stamp[s, victim] = clock
    return hits, evictions


def cache_simulate(stream, model: CacheModel) -> CacheStats:
    """Exact LRU replay of ``stream`` through ``model``, starting cold."""
    arr = np.ascontiguousarray(stream, dtype=np.int64)
    if arr.size and arr.min() < 0:
        raise ValueError("addresses must be non-negative")
    hits, evictions = _simulate(arr, model.line.bit_length() - 1, model.sets, model.ways)
    return CacheStats(int(arr.size), int(hits), int(arr.size - hits), int(evictions))
