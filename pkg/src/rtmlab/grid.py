"""Global grid, X-Y plane decomposition across ranks, and Y-Z tiling.

Arrays throughout the package are indexed ``[z, y, x]`` so that X is the
fastest-varying (contiguous) axis.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .errors import ConfigError


class Face(enum.IntEnum):
    XLOW = 0
    XHIGH = 1
    YLOW = 2
    YHIGH = 3

    @property
    def opposite(self) -> "Face":
        return Face(self.value ^ 1)

    @property
    def axis(self) -> str:
        return "x" if self.value < 2 else "y"


@dataclass(frozen=True)
class GlobalGrid:
    nx: int
    ny: int
    nz: int
    dx: float = 1.0

    def __post_init__(self):
        if min(self.nx, self.ny, self.nz) < 1:
            raise ConfigError(f"grid extents must be >= 1, got {self.nx}x{self.ny}x{self.nz}")
        if not self.dx > 0:
            raise ConfigError(f"grid spacing must be positive, got {self.dx}")

    @property
    def cells(self) -> int:
        return self.nx * self.ny * self.nz


@dataclass(frozen=True)
class Decomposition:
    px: int
    py: int

    def __post_init__(self):
        if self.px < 1 or self.py < 1:
            raise ConfigError(f"rank counts must be >= 1, got {self.px}x{self.py}")

    @property
    def size(self) -> int:
        return self.px * self.py

    def rank_of(self, cx: int, cy: int) -> int:
        return cx * self.py + cy

    def coords_of(self, rank: int) -> tuple[int, int]:
        return divmod(rank, self.py)

    @classmethod
    def parse(cls, text: str) -> "Decomposition":
        """Parse ``"4x4"`` style descriptors."""
        try:
            px, py = (int(v) for v in text.lower().split("x"))
        except ValueError:
            raise ConfigError(f"bad decomposition {text!r}, expected PXxPY") from None
        return cls(px, py)

    def __str__(self):
        return f"{self.px}x{self.py}"


@dataclass(frozen=True)
class Subdomain:
    rank: int
    cx: int
    cy: int
    lx: int
    ly: int
    lz: int
    ox: int
    oy: int
    hx: int
    hy: int
    hz: int = 0

    @property
    def interior_shape(self) -> tuple[int, int, int]:
        return (self.lz, self.ly, self.lx)

    @property
    def padded_shape(self) -> tuple[int, int, int]:
        return (self.lz + 2 * self.hz, self.ly + 2 * self.hy, self.lx + 2 * self.hx)

    def owns(self, gx: int, gy: int) -> bool:
        return self.ox <= gx < self.ox + self.lx and self.oy <= gy < self.oy + self.ly


def _split(n: int, parts: int) -> list[int]:
    base = n // parts
    sizes = [base] * parts
    sizes[-1] += n - base * parts
    return sizes


def decompose(grid: GlobalGrid, dec: Decomposition, radii: tuple[int, int, int]) -> list[Subdomain]:
    """Split the grid over the X-Y plane; remainder cells go to the last rank on each axis.

    Raises ConfigError naming the first rank whose interior is thinner than its halo.
    """
    rx, ry, rz = radii
    if dec.px > grid.nx or dec.py > grid.ny:
        raise ConfigError(
            f"decomposition {dec} does not fit grid {grid.nx}x{grid.ny}x{grid.nz}"
        )
    xs = _split(grid.nx, dec.px)
    ys = _split(grid.ny, dec.py)
    subs = []
    for cx in range(dec.px):
        for cy in range(dec.py):
            rank = dec.rank_of(cx, cy)
            lx, ly = xs[cx], ys[cy]
            # only split axes need interiors at least as wide as the halo
            if (dec.px > 1 and lx < rx) or (dec.py > 1 and ly < ry):
                raise ConfigError(
                    f"rank {rank} at ({cx},{cy}) has interior {lx}x{ly} "
                    f"smaller than halo {rx}x{ry}"
                )
            subs.append(
                Subdomain(
                    rank=rank, cx=cx, cy=cy, lx=lx, ly=ly, lz=grid.nz,
                    ox=sum(xs[:cx]), oy=sum(ys[:cy]), hx=rx, hy=ry, hz=rz,
                )
            )
    return subs


def neighbors_of(sub: Subdomain, dec: Decomposition) -> dict[Face, int]:
    """Face-adjacent neighbor ranks; global boundary faces are absent."""
    out = {}
    if sub.cx > 0:
        out[Face.XLOW] = dec.rank_of(sub.cx - 1, sub.cy)
    if sub.cx < dec.px - 1:
        out[Face.XHIGH] = dec.rank_of(sub.cx + 1, sub.cy)
    if sub.cy > 0:
        out[Face.YLOW] = dec.rank_of(sub.cx, sub.cy - 1)
    if sub.cy < dec.py - 1:
        out[Face.YHIGH] = dec.rank_of(sub.cx, sub.cy + 1)
    return out


def face_adjacencies(dec: Decomposition) -> int:
    """Number of neighbor pairs sharing a face."""
    return (dec.px - 1) * dec.py + dec.px * (dec.py - 1)


@dataclass(frozen=True)
class Tile:
    y0: int
    y1: int
    z0: int
    z1: int

    @property
    def cells_yz(self) -> int:
        return (self.y1 - self.y0) * (self.z1 - self.z0)


def _axis_ranges(extent: int, size: int) -> list[tuple[int, int]]:
    return [(s, min(s + size, extent)) for s in range(0, extent, size)]


@dataclass(frozen=True)
class TileMap:
    """Collapsed Y-Z tiling; index ``k = iy * ntz + iz`` (Y tiles outer)."""

    ty: int
    tz: int
    y_ranges: tuple[tuple[int, int], ...]
    z_ranges: tuple[tuple[int, int], ...]
    tiles: tuple[Tile, ...] = field(repr=False)

    def __len__(self):
        return len(self.tiles)

    def __getitem__(self, k):
        return self.tiles[k]

    def __iter__(self):
        return iter(self.tiles)

    @property
    def nty(self) -> int:
        return len(self.y_ranges)

    @property
    def ntz(self) -> int:
        return len(self.z_ranges)

    def unflatten(self, k: int) -> tuple[int, int]:
        if not 0 <= k < len(self.tiles):
            raise IndexError(k)
        return divmod(k, self.ntz)

    def flatten(self, iy: int, iz: int) -> int:
        return iy * self.ntz + iz


def tile_partition(extent_y: int, extent_z: int, ty: int, tz: int) -> TileMap:
    if ty < 1 or tz < 1:
        raise ConfigError(f"tile sizes must be >= 1, got {ty}x{tz}")
    if extent_y <= 0 or extent_z <= 0:
        return TileMap(ty, tz, (), (), ())
    yr = tuple(_axis_ranges(extent_y, ty))
    zr = tuple(_axis_ranges(extent_z, tz))
    tiles = tuple(Tile(y0, y1, z0, z1) for (y0, y1) in yr for (z0, z1) in zr)
    return TileMap(ty, tz, yr, zr, tiles)
