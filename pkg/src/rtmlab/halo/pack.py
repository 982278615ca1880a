"""Face slabs of padded ``[z, y, x]`` blocks.

Payloads are C-order flattenings of the slab, i.e. Z outer, Y middle, X inner.
X faces span the interior Y-Z extent; Y faces span the interior X-Z extent,
so no corner cells are ever exchanged.
"""
from __future__ import annotations

import numpy as np

from ..errors import ProtocolError
from ..grid import Face


def _interior(shape, halo):
    hx, hy, hz = halo
    pz, py, px = shape
    return px - 2 * hx, py - 2 * hy, pz - 2 * hz


def slab_slices(shape, face: Face, halo, ghost: bool = False) -> tuple[slice, slice, slice]:
    """Slices of the interior slab next to ``face`` (or of the ghost slab beyond it)."""
    hx, hy, hz = halo
    lx, ly, lz = _interior(shape, halo)
    zs = slice(hz, hz + lz)
    if face is Face.XLOW:
        xs = slice(0, hx) if ghost else slice(hx, 2 * hx)
        return zs, slice(hy, hy + ly), xs
    if face is Face.XHIGH:
        xs = slice(hx + lx, lx + 2 * hx) if ghost else slice(lx, lx + hx)
        return zs, slice(hy, hy + ly), xs
    if face is Face.YLOW:
        ys = slice(0, hy) if ghost else slice(hy, 2 * hy)
        return zs, ys, slice(hx, hx + lx)
    if face is Face.YHIGH:
        ys = slice(hy + ly, ly + 2 * hy) if ghost else slice(ly, ly + hy)
        return zs, ys, slice(hx, hx + lx)
    raise ValueError(face)


def slab_volume(shape, face: Face, halo) -> int:
    hx, hy, _ = halo
    lx, ly, lz = _interior(shape, halo)
    if face.axis == "x":
        return hx * ly * lz
    return lx * hy * lz


def pack_halo(field: np.ndarray, face: Face, halo) -> np.ndarray:
    """Copy the interior cells the neighbor across ``face`` needs."""
    lx, ly, lz = _interior(field.shape, halo)
    hx, hy, _ = halo
    if (face.axis == "x" and lx < hx) or (face.axis == "y" and ly < hy):
        raise ValueError(f"interior {(lx, ly, lz)} thinner than halo {halo}")
    return np.ascontiguousarray(field[slab_slices(field.shape, face, halo)]).ravel()


def unpack_halo(field: np.ndarray, face: Face, payload: np.ndarray, halo) -> None:
    """Write ``payload`` into the ghost cells beyond ``face``."""
    sl = slab_slices(field.shape, face, halo, ghost=True)
    expected = slab_volume(field.shape, face, halo)
    if payload.size != expected:
        raise ProtocolError(
            f"payload for {face.name} has {payload.size} elements, expected {expected}"
        )
    field[sl] = payload.reshape(field[sl].shape)
