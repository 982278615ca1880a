"""Independent reference implementations used only by the tests."""
from __future__ import annotations

from collections import OrderedDict
from fractions import Fraction

import numpy as np


def taylor_weights(radius: int) -> list[Fraction]:
    """Exact second-derivative weights on offsets -r..r from the moment system.

    Solves sum_i w_i * i^k = k! * [k == 2] for k = 0..2r by Gauss-Jordan
    elimination over the rationals.
    """
    offsets = range(-radius, radius + 1)
    n = 2 * radius + 1
    rows = [[Fraction(i) ** k for i in offsets] + [Fraction(2 if k == 2 else 0)]
            for k in range(n)]
    for col in range(n):
        piv = next(r for r in range(col, n) if rows[r][col] != 0)
        rows[col], rows[piv] = rows[piv], rows[col]
        p = rows[col][col]
        rows[col] = [v / p for v in rows[col]]
        for r in range(n):
            if r != col and rows[r][col] != 0:
                f = rows[r][col]
                rows[r] = [a - f * b for a, b in zip(rows[r], rows[col])]
    return [rows[i][n] for i in range(n)]


class LruOracle:
    """Set-associative LRU cache, one OrderedDict per set."""

    def __init__(self, capacity: int, line: int, ways: int):
        self.line = line
        self.ways = ways
        self.nsets = capacity // (line * ways)
        self.sets = [OrderedDict() for _ in range(self.nsets)]
        self.hits = self.misses = self.evictions = 0

    def access(self, addr: int) -> None:
        ln = addr // self.line
        s = self.sets[ln % self.nsets]
        if ln in s:
            s.move_to_end(ln)
            self.hits += 1
            return
        self.misses += 1
        if len(s) >= self.ways:
            s.popitem(last=False)
            self.evictions += 1
        s[ln] = True

    def run(self, stream) -> "LruOracle":
        for a in stream:
            self.access(int(a))
        return self


def naive_stream(tile, radii, order, value_size, block=None, in_base=0, out_base=None):
    """Address stream built with plain Python loops."""
    tx, ty, tz = tile
    rx, ry, rz = radii
    lx, ly, lz = block or tile
    px, py = lx + 2 * rx, ly + 2 * ry
    if out_base is None:
        nbytes = px * py * (lz + 2 * rz) * value_size
        out_base = in_base + -(-nbytes // 4096) * 4096

    def a_in(x, y, z):
        return in_base + ((z * py + y) * px + x) * value_size

    def a_out(x, y, z):
        return out_base + ((z * ly + y) * lx + x) * value_size

    def cell(x, y, z):
        X, Y, Z = x + rx, y + ry, z + rz
        out = [a_in(X + i, Y, Z) for i in range(-rx, rx + 1)]
        out += [a_in(X, Y + j, Z) for j in range(-ry, ry + 1) if j]
        out += [a_in(X, Y, Z + k) for k in range(-rz, rz + 1) if k]
        out.append(a_out(x, y, z))
        return out

    stream = []
    if order == "zyx":
        nest = ((y, z) for z in range(tz) for y in range(ty))
    else:
        nest = ((y, z) for y in range(ty) for z in range(tz))
    for y, z in nest:
        for x in range(tx):
            stream.extend(cell(x, y, z))
    return stream


def laplacian_oracle(padded: np.ndarray, cx, cy, cz, radii) -> np.ndarray:
    """Whole-block star stencil with numpy slicing, same per-cell order as the kernel.

    Per arm: centre term, then c[r+i] * (f[-i] + f[+i]) for i = 1..r.
    """
    rx, ry, rz = radii
    nz, ny, nx = padded.shape
    lz, ly, lx = nz - 2 * rz, ny - 2 * ry, nx - 2 * rx

    def sl(dz, dy, dx):
        return padded[rz + dz:rz + dz + lz, ry + dy:ry + dy + ly, rx + dx:rx + dx + lx]

    acc = cx[rx] * sl(0, 0, 0)
    for i in range(1, rx + 1):
        acc = acc + cx[rx + i] * (sl(0, 0, -i) + sl(0, 0, i))
    acc = acc + cy[ry] * sl(0, 0, 0)
    for j in range(1, ry + 1):
        acc = acc + cy[ry + j] * (sl(0, -j, 0) + sl(0, j, 0))
    acc = acc + cz[rz] * sl(0, 0, 0)
    for k in range(1, rz + 1):
        acc = acc + cz[rz + k] * (sl(-k, 0, 0) + sl(k, 0, 0))
    return acc


def propagate_oracle(nx, ny, nz, spec, vdt2, n_steps, src=None, src_values=None):
    """Single-block leapfrog propagation with zero boundaries, in numpy."""
    rx, ry, rz = spec.radii
    dt = spec.dtype
    shape = (nz + 2 * rz, ny + 2 * ry, nx + 2 * rx)
    prev = np.zeros(shape, dt)
    curr = np.zeros(shape, dt)
    inner = (slice(rz, rz + nz), slice(ry, ry + ny), slice(rx, rx + nx))
    for step in range(n_steps):
        lap = laplacian_oracle(curr, spec.cx, spec.cy, spec.cz, spec.radii)
        c = curr[inner]
        nxt = (c + c - prev[inner]) + vdt2 * lap
        if src is not None:
            x, y, z = src
            nxt[z, y, x] += dt.type(src_values[step])
        prev[inner] = nxt
        prev, curr = curr, prev
    return curr[inner].copy()
