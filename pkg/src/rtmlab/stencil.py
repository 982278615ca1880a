"""High-order star stencil: coefficients, footprints and the tiled kernel."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numba
import numpy as np

from ._fpenv import FTZ_DAZ, mxcsr_get, mxcsr_set
from .errors import ConfigError

DEFAULT_RADII = (12, 12, 8)


class LoopOrder(enum.Enum):
    """Loop nest order over a tile; X is always innermost."""

    YZX = "yzx"
    ZYX = "zyx"

    @classmethod
    def parse(cls, text) -> "LoopOrder":
        if isinstance(text, cls):
            return text
        try:
            return cls(str(text).lower())
        except ValueError:
            raise ConfigError(f"unknown loop order {text!r} (expected yzx or zyx)") from None


def fornberg(x0: float, points, m: int) -> np.ndarray:
    """Weights for the m-th derivative at ``x0`` from samples at ``points``.

    Fornberg's recursion, returns one weight per point.
    """
    x = np.asarray(points, dtype=np.float64)
    n = len(x)
    c = np.zeros((n, m + 1))
    c[0, 0] = 1.0
    c1 = 1.0
    c4 = x[0] - x0
    for i in range(1, n):
        mn = min(i, m)
        c2 = 1.0
        c5 = c4
        c4 = x[i] - x0
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c[:, m].copy()


def fd_weights(radius: int, spacing: float = 1.0) -> np.ndarray:
    """Central second-derivative weights on ``2*radius+1`` points, in float64."""
    if int(radius) != radius or radius < 1:
        raise ValueError(f"radius must be a positive integer, got {radius!r}")
    if not spacing > 0:
        raise ValueError(f"spacing must be positive, got {spacing!r}")
    w = fornberg(0.0, np.arange(-radius, radius + 1), 2)
    w = 0.5 * (w + w[::-1])
    return w / (spacing * spacing)


@dataclass(frozen=True)
class StencilSpec:
    rx: int
    ry: int
    rz: int
    dx: float = 1.0
    dtype: np.dtype = field(default=np.dtype(np.float32))
    flush_denormals: bool = True
    cx: np.ndarray = field(init=False, repr=False, compare=False)
    cy: np.ndarray = field(init=False, repr=False, compare=False)
    cz: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        for r in self.radii:
            if r < 1:
                raise ConfigError(f"stencil radii must be >= 1, got {self.radii}")
        dt = np.dtype(self.dtype)
        if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
            raise ConfigError(f"unsupported value type {dt}")
        object.__setattr__(self, "dtype", dt)
        for name, r in zip(("cx", "cy", "cz"), self.radii):
            w = fd_weights(r, self.dx).astype(dt)
            w.flags.writeable = False
            object.__setattr__(self, name, w)

    @property
    def radii(self) -> tuple[int, int, int]:
        return (self.rx, self.ry, self.rz)

    @property
    def points(self) -> int:
        return 2 * (self.rx + self.ry + self.rz) + 1


def plane_footprints(spec: StencilSpec) -> tuple[int, int]:
    """Points of the star lying in the X-Y and X-Z planes through the centre."""
    return (2 * spec.rx + 2 * spec.ry + 1, 2 * spec.rx + 2 * spec.rz + 1)


def positive_weight_sum(spec: StencilSpec) -> float:
    """Sum of positive unit-spacing weights over all three arms (for the CFL bound)."""
    return float(sum(fd_weights(r)[fd_weights(r) > 0].sum() for r in spec.radii))


# Each kernel accumulates every cell in the same order: per arm (X, then
# Y, then Z) the centre term, then c[i]*(f[-i] + f[+i]) for i = 1..r.
# Only the row visiting order differs, so outputs are bitwise identical
# for either order and any tiling, and pairing the mirrored offsets keeps
# the result exactly symmetric under reflections. With flush_denormals the
# kernels run with FTZ|DAZ set (see _fpenv).

@numba.njit(nogil=True, cache=True)
def _row(f, lap, cx, cy, cz, rx, ry, rz, x0, x1, y, z):
    zz = z + rz
    yy = y + ry
    c = cx[rx]
    for x in range(x0, x1):
        lap[z, y, x] = c * f[zz, yy, x + rx]
    for i in range(1, rx + 1):
        c = cx[rx + i]
        for x in range(x0, x1):
            lap[z, y, x] += c * (f[zz, yy, x + rx - i] + f[zz, yy, x + rx + i])
    c = cy[ry]
    for x in range(x0, x1):
        lap[z, y, x] += c * f[zz, yy, x + rx]
    for j in range(1, ry + 1):
        c = cy[ry + j]
        for x in range(x0, x1):
            lap[z, y, x] += c * (f[zz, yy - j, x + rx] + f[zz, yy + j, x + rx])
    c = cz[rz]
    for x in range(x0, x1):
        lap[z, y, x] += c * f[zz, yy, x + rx]
    for k in range(1, rz + 1):
        c = cz[rz + k]
        for x in range(x0, x1):
            lap[z, y, x] += c * (f[zz - k, yy, x + rx] + f[zz + k, yy, x + rx])


@numba.njit(nogil=True, cache=True)
def _stencil_yzx(f, lap, cx, cy, cz, rx, ry, rz, x0, x1, y0, y1, z0, z1, ftz):
    saved = mxcsr_get()
    if ftz:
        mxcsr_set(saved | FTZ_DAZ)
    for y in range(y0, y1):
        for z in range(z0, z1):
            _row(f, lap, cx, cy, cz, rx, ry, rz, x0, x1, y, z)
    mxcsr_set(saved)


@numba.njit(nogil=True, cache=True)
def _stencil_zyx(f, lap, cx, cy, cz, rx, ry, rz, x0, x1, y0, y1, z0, z1, ftz):
    saved = mxcsr_get()
    if ftz:
        mxcsr_set(saved | FTZ_DAZ)
    for z in range(z0, z1):
        for y in range(y0, y1):
            _row(f, lap, cx, cy, cz, rx, ry, rz, x0, x1, y, z)
    mxcsr_set(saved)


_KERNELS = {LoopOrder.YZX: _stencil_yzx, LoopOrder.ZYX: _stencil_zyx}


@dataclass(frozen=True)
class Box:
    """Half-open cell range in interior coordinates."""

    x0: int
    x1: int
    y0: int
    y1: int
    z0: int
    z1: int

    @property
    def cells(self) -> int:
        return (
            max(0, self.x1 - self.x0) * max(0, self.y1 - self.y0) * max(0, self.z1 - self.z0)
        )

    def intersect(self, other: "Box") -> "Box":
        return Box(
            max(self.x0, other.x0), min(self.x1, other.x1),
            max(self.y0, other.y0), min(self.y1, other.y1),
            max(self.z0, other.z0), min(self.z1, other.z1),
        )


def apply_stencil(field_in, laplacian, box: Box, spec: StencilSpec, order=LoopOrder.ZYX) -> None:
    """Write the star-stencil result for every cell of ``box`` into ``laplacian``.

    ``field_in`` is padded by the stencil radii on every axis; ``laplacian``
    has the interior shape. Both must have the spec's value type.
    """
    order = LoopOrder.parse(order)
    lz, ly, lx = laplacian.shape
    if field_in.shape != (lz + 2 * spec.rz, ly + 2 * spec.ry, lx + 2 * spec.rx):
        raise IndexError(
            f"input block {field_in.shape} does not match output {laplacian.shape} "
            f"padded by radii {spec.radii}"
        )
    if (box.x0 < 0 or box.y0 < 0 or box.z0 < 0
            or box.x1 > lx or box.y1 > ly or box.z1 > lz):
        raise IndexError(f"tile {box} exceeds block extents {(lx, ly, lz)}")
    if box.cells == 0:
        return
    if field_in.dtype != spec.dtype or laplacian.dtype != spec.dtype:
        raise TypeError(f"blocks must be {spec.dtype}")
    _KERNELS[order](
        field_in, laplacian, spec.cx, spec.cy, spec.cz, spec.rx, spec.ry, spec.rz,
        box.x0, box.x1, box.y0, box.y1, box.z0, box.z1, spec.flush_denormals,
    )
