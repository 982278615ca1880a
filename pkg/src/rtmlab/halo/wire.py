"""Bit-exact HALO frame encoding.

Header, all little-endian (36 bytes)::

    magic     u32  0x48414C4F
    version   u16  1
    vtype     u16  0 = float32, 1 = float64
    src       u32
    dst       u32
    step      u64
    face      u8
    reserved  3 bytes, zero
    length    u64  payload length in elements

followed by the raw little-endian payload.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from ..errors import ProtocolError
from ..grid import Face

MAGIC = 0x48414C4F
VERSION = 1
HEADER = struct.Struct("<IHHIIQB3xQ")
HEADER_SIZE = HEADER.size

_VTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_VCODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


@dataclass(eq=False)
class HaloMessage:
    src: int
    dst: int
    step: int
    face: Face
    payload: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, HaloMessage):
            return NotImplemented
        return (
            (self.src, self.dst, self.step, self.face)
            == (other.src, other.dst, other.step, other.face)
            and self.payload.dtype == other.payload.dtype
            and np.array_equal(self.payload, other.payload)
        )


def encode_message(msg: HaloMessage) -> bytes:
    dtype = np.dtype(msg.payload.dtype)
    try:
        code = _VCODES[dtype.newbyteorder("=")]
    except KeyError:
        raise ProtocolError(f"unsupported payload type {dtype}") from None
    data = np.ascontiguousarray(msg.payload, dtype=_VTYPES[code]).ravel()
    head = HEADER.pack(MAGIC, VERSION, code, msg.src, msg.dst, msg.step, int(msg.face), data.size)
    return head + data.tobytes()


def decode_header(buf: bytes) -> tuple[int, int, int, int, Face, int]:
    """Validate a header; returns (vtype code, src, dst, step, face, length)."""
    if len(buf) < HEADER_SIZE:
        raise ProtocolError(f"truncated header: {len(buf)} of {HEADER_SIZE} bytes")
    magic, version, code, src, dst, step, face, length = HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise ProtocolError(f"bad magic 0x{magic:08X}")
    if version != VERSION:
        raise ProtocolError(f"unknown version {version}")
    if code not in _VTYPES:
        raise ProtocolError(f"unknown value-type code {code}")
    try:
        face = Face(face)
    except ValueError:
        raise ProtocolError(f"unknown face {face}") from None
    return code, src, dst, step, face, length


def payload_bytes(code: int, length: int) -> int:
    return _VTYPES[code].itemsize * length


def decode_message(buf: bytes) -> HaloMessage:
    code, src, dst, step, face, length = decode_header(buf)
    need = HEADER_SIZE + payload_bytes(code, length)
    if len(buf) < need:
        raise ProtocolError(f"truncated payload: {len(buf)} of {need} bytes")
    if len(buf) > need:
        raise ProtocolError(f"{len(buf) - need} trailing bytes after payload")
    payload = np.frombuffer(buf, dtype=_VTYPES[code], count=length, offset=HEADER_SIZE)
    # native byte order, writable, independent of buf
    payload = payload.astype(_VTYPES[code].newbyteorder("="))
    return HaloMessage(src, dst, step, face, payload)
