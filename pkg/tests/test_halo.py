import struct
import threading
import time

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rtmlab.errors import ExchangeError, ProtocolError
from rtmlab.grid import Decomposition, Face, GlobalGrid, decompose, neighbors_of
from rtmlab.halo import (HEADER_SIZE, ExchangeStrategy, HaloExchanger, HaloMessage,
                         InProcessNetwork, TcpTransport, decode_message, encode_message,
                         exchange, pack_halo, slab_slices, slab_volume, unpack_halo)
from rtmlab.halo.bench import measure_wait
from rtmlab.runtime.launch import free_port_block

FACES = list(Face)
STRATEGIES = list(ExchangeStrategy)


def block(lx, ly, lz, halo, seed=0, dtype=np.float32):
    hx, hy, hz = halo
    rng = np.random.default_rng(seed)
    return rng.standard_normal((lz + 2 * hz, ly + 2 * hy, lx + 2 * hx)).astype(dtype)


# -- pack / unpack -------------------------------------------------------

def test_pack_xlow_enumeration():
    halo = (1, 1, 1)
    f = np.zeros((4, 4, 4), np.float32)
    inner = np.arange(8, dtype=np.float32).reshape(2, 2, 2)  # [z, y, x]
    f[1:3, 1:3, 1:3] = inner
    assert pack_halo(f, Face.XLOW, halo).tolist() == inner[:, :, 0].ravel().tolist()
    assert pack_halo(f, Face.XLOW, halo).tolist() == [0, 2, 4, 6]


def test_pack_constant_field():
    f = np.full((6, 8, 10), 2.5, np.float32)
    for face in FACES:
        p = pack_halo(f, face, (2, 2, 1))
        assert np.all(p == 2.5)
        assert p.size == slab_volume(f.shape, face, (2, 2, 1))


def test_payload_lengths():
    halo = (3, 2, 1)
    f = block(7, 5, 4, halo)
    assert pack_halo(f, Face.XLOW, halo).size == 3 * 5 * 4
    assert pack_halo(f, Face.YHIGH, halo).size == 7 * 2 * 4


@given(lx=st.integers(2, 8), ly=st.integers(2, 8), lz=st.integers(1, 5),
       h=st.tuples(st.integers(1, 2), st.integers(1, 2), st.integers(0, 2)),
       face=st.sampled_from(FACES), seed=st.integers(0, 1000))
def test_pack_unpack_roundtrip(lx, ly, lz, h, face, seed):
    src = block(lx, ly, lz, h, seed)
    payload = pack_halo(src, face, h)
    dst = np.zeros_like(src)
    unpack_halo(dst, face, payload, h)
    # what lands in the ghost slab is exactly the packed slab
    assert np.array_equal(dst[slab_slices(dst.shape, face, h, ghost=True)],
                          src[slab_slices(src.shape, face, h)])
    assert np.array_equal(pack_halo_ghost(dst, face, h), payload)
    # nothing else was touched
    mask = np.ones(dst.shape, bool)
    mask[slab_slices(dst.shape, face, h, ghost=True)] = False
    assert np.all(dst[mask] == 0)


def pack_halo_ghost(f, face, h):
    return np.ascontiguousarray(f[slab_slices(f.shape, face, h, ghost=True)]).ravel()


def test_unpack_keeps_interior_and_zero_payload():
    h = (2, 2, 1)
    f = block(6, 6, 3, h)
    interior = f[1:-1, 2:-2, 2:-2].copy()
    for face in FACES:
        unpack_halo(f, face, np.zeros(slab_volume(f.shape, face, h), np.float32), h)
        assert np.all(pack_halo_ghost(f, face, h) == 0)
    assert np.array_equal(f[1:-1, 2:-2, 2:-2], interior)


def test_unpack_length_mismatch():
    h = (1, 1, 1)
    f = block(3, 3, 3, h)
    with pytest.raises(ProtocolError, match="expected 9"):
        unpack_halo(f, Face.XLOW, np.zeros(8, np.float32), h)


# -- wire format ---------------------------------------------------------

def msg(n=5, dtype=np.float32, face=Face.YLOW, seed=0):
    payload = np.random.default_rng(seed).standard_normal(n).astype(dtype)
    return HaloMessage(3, 7, 123456789012, face, payload)


def test_header_layout():
    assert HEADER_SIZE == 36
    frame = encode_message(msg(0))
    assert len(frame) == 36
    magic, ver, code, src, dst, step, face, res, length = struct.unpack("<IHHIIQB3sQ", frame)
    assert (magic, ver, code, src, dst, step, face, res, length) == (
        0x48414C4F, 1, 0, 3, 7, 123456789012, int(Face.YLOW), b"\0\0\0", 0)
    assert frame[:4] == b"OLAH"  # "HALO" stored little-endian


def test_payload_is_little_endian():
    m = HaloMessage(0, 1, 0, Face.XLOW, np.array([1.0], np.float64))
    frame = encode_message(m)
    assert frame[HEADER_SIZE:] == struct.pack("<d", 1.0)
    assert struct.unpack_from("<H", frame, 6)[0] == 1


@given(n=st.integers(0, 200), dtype=st.sampled_from([np.float32, np.float64]),
       face=st.sampled_from(FACES), seed=st.integers(0, 100), step=st.integers(0, 2**64 - 1))
def test_wire_roundtrip(n, dtype, face, seed, step):
    m = msg(n, dtype, face, seed)
    m.step = step
    assert decode_message(encode_message(m)) == m


def test_big_endian_payload_roundtrips():
    m = HaloMessage(0, 1, 2, Face.XHIGH, np.arange(4, dtype=">f4"))
    back = decode_message(encode_message(m))
    assert back.payload.tolist() == [0, 1, 2, 3]


def test_corruption_rejected():
    frame = bytearray(encode_message(msg()))
    bad = bytearray(frame)
    bad[0] ^= 0xFF
    with pytest.raises(ProtocolError, match="magic"):
        decode_message(bytes(bad))
    bad = bytearray(frame)
    bad[4] = 2
    with pytest.raises(ProtocolError, match="version"):
        decode_message(bytes(bad))
    bad = bytearray(frame)
    bad[6] = 9
    with pytest.raises(ProtocolError, match="value-type"):
        decode_message(bytes(bad))
    bad = bytearray(frame)
    bad[24] = 7
    with pytest.raises(ProtocolError, match="face"):
        decode_message(bytes(bad))
    with pytest.raises(ProtocolError, match="truncated"):
        decode_message(bytes(frame[:-1]))
    with pytest.raises(ProtocolError, match="truncated header"):
        decode_message(bytes(frame[:10]))
    with pytest.raises(ProtocolError, match="trailing"):
        decode_message(bytes(frame) + b"\0")


@given(cut=st.integers(0, 55), seed=st.integers(0, 50))
def test_any_truncation_rejected(cut, seed):
    frame = encode_message(msg(5, seed=seed))
    if cut < len(frame):
        with pytest.raises(ProtocolError):
            decode_message(frame[:cut])


def test_unsupported_payload_type():
    with pytest.raises(ProtocolError):
        encode_message(HaloMessage(0, 1, 0, Face.XLOW, np.zeros(2, np.int32)))


# -- exchange over the in-process network --------------------------------

def run_ranks(dec, fn):
    errors = []
    results = {}
    subs = decompose(GlobalGrid(dec.px * 4, dec.py * 4, 2), dec, (1, 1, 1))

    def main(sub):
        try:
            results[sub.rank] = fn(sub)
        except BaseException as exc:  # noqa: BLE001
            errors.append(exc)

    threads = [threading.Thread(target=main, args=(s,)) for s in subs]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        raise errors[0]
    return results


def payload_for(src, step, face, n=6):
    return np.random.default_rng(src * 997 + step * 31 + int(face)).standard_normal(n)


@pytest.mark.parametrize("strategy", STRATEGIES)
def test_single_rank_exchange_is_empty(strategy):
    net = InProcessNetwork(1)
    assert exchange(strategy, net.endpoint(0), {}, {}, 0) == {}


@pytest.mark.parametrize("strategy", STRATEGIES)
@pytest.mark.parametrize("shape", [(2, 1), (4, 4), (2, 3)])
def test_delivery_and_conservation(strategy, shape):
    dec = Decomposition(*shape)
    net = InProcessNetwork(dec.size, latency=0.001)
    steps = 3

    def fn(sub):
        nbrs = neighbors_of(sub, dec)
        ex = HaloExchanger(sub.rank, nbrs, net.endpoint(sub.rank), strategy, timeout=10)
        try:
            for step in range(steps):
                ex.post(step, {f: payload_for(sub.rank, step, f) for f in nbrs})
                got = ex.wait(step)
                assert set(got) == set(nbrs)
                for face, data in got.items():
                    assert np.array_equal(data, payload_for(nbrs[face], step, face.opposite))
            return ex.sent, ex.received
        finally:
            ex.close()

    res = run_ranks(dec, fn)
    adj = (dec.px - 1) * dec.py + dec.px * (dec.py - 1)
    assert sum(s for s, _ in res.values()) == 2 * adj * steps
    assert sum(r for _, r in res.values()) == 2 * adj * steps
    assert sum(net.sent) == 2 * adj * steps


def test_two_ranks_one_message_each():
    dec = Decomposition(2, 1)
    net = InProcessNetwork(2)

    def fn(sub):
        nbrs = neighbors_of(sub, dec)
        return exchange("posted", net.endpoint(sub.rank), nbrs,
                        {f: payload_for(sub.rank, 0, f) for f in nbrs}, 0)

    res = run_ranks(dec, fn)
    assert net.sent == [1, 1]
    assert list(res[0]) == [Face.XHIGH] and list(res[1]) == [Face.XLOW]


def test_early_arrivals_buffered():
    net = InProcessNetwork(2)
    a, b = net.endpoint(0), net.endpoint(1)
    for step in (0, 1, 2):
        a.send(HaloMessage(0, 1, step, Face.XHIGH, np.full(2, step, np.float32)))
    for step in (2, 0, 1):  # any matching order works once buffered
        assert b.recv(0, step, Face.XHIGH, timeout=1).payload[0] == step


def test_out_of_order_delivery_detected():
    net = InProcessNetwork(2)
    a, b = net.endpoint(0), net.endpoint(1)
    a.send(HaloMessage(0, 1, 5, Face.XHIGH, np.zeros(1, np.float32)))
    a.send(HaloMessage(0, 1, 4, Face.XHIGH, np.zeros(1, np.float32)))
    with pytest.raises(ExchangeError, match="arrived after"):
        b.recv(0, 4, Face.XHIGH, timeout=1)


def test_timeout_and_disconnect_carry_face_and_step():
    net = InProcessNetwork(2)
    b = net.endpoint(1)
    with pytest.raises(ExchangeError) as info:
        b.recv(0, 3, Face.XHIGH, timeout=0.05)
    assert info.value.step == 3 and info.value.face is Face.XLOW
    net.fail(0)
    with pytest.raises(ExchangeError, match="disconnected"):
        b.recv(0, 4, Face.XHIGH, timeout=5)


def test_latency_is_wire_delay():
    net = InProcessNetwork(2, latency=0.05)
    a, b = net.endpoint(0), net.endpoint(1)
    t0 = time.monotonic()
    a.send(HaloMessage(0, 1, 0, Face.XHIGH, np.zeros(1, np.float32)))
    assert time.monotonic() - t0 < 0.03  # the sender does not block
    b.recv(0, 0, Face.XHIGH, timeout=1)
    assert time.monotonic() - t0 >= 0.049


def test_cannot_send_as_other_rank():
    net = InProcessNetwork(2)
    with pytest.raises(ValueError):
        net.endpoint(0).send(HaloMessage(1, 0, 0, Face.XLOW, np.zeros(1)))


def test_mismatched_outgoing_faces():
    net = InProcessNetwork(2)
    ex = HaloExchanger(0, {Face.XHIGH: 1}, net.endpoint(0), "blocking")
    with pytest.raises(ExchangeError):
        ex.post(0, {Face.XLOW: np.zeros(1)})
    with pytest.raises(ExchangeError, match="without post"):
        ex.wait(1)


def test_strategy_parse_aliases():
    assert ExchangeStrategy.parse("BlockingSequential") is ExchangeStrategy.BLOCKING_SEQUENTIAL
    assert ExchangeStrategy.parse("posted-overlap") is ExchangeStrategy.POSTED_OVERLAP
    assert ExchangeStrategy.parse("comm_thread") is ExchangeStrategy.COMM_THREAD
    with pytest.raises(ValueError):
        ExchangeStrategy.parse("rdma")


def test_comm_thread_hides_latency():
    blocking = measure_wait("blocking", latency=0.02, compute=0.04, px=2, py=2, steps=2)
    thread = measure_wait("commthread", latency=0.02, compute=0.04, px=2, py=2, steps=2)
    assert thread < blocking


# -- tcp -----------------------------------------------------------------

def tcp_ranks(dec, fn, checksums=None):
    base = free_port_block(dec.size)
    subs = decompose(GlobalGrid(dec.px * 4, dec.py * 4, 2), dec, (1, 1, 1))
    results, errors = {}, []

    def main(sub):
        nbrs = neighbors_of(sub, dec)
        try:
            cs = checksums[sub.rank] if checksums else 42
            tr = TcpTransport(sub.rank, nbrs.values(), base, cs, connect_timeout=5)
            try:
                results[sub.rank] = fn(sub, nbrs, tr)
            finally:
                tr.close()
        except BaseException as exc:  # noqa: BLE001
            errors.append(exc)

    threads = [threading.Thread(target=main, args=(s,)) for s in subs]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    return results, errors


@pytest.mark.parametrize("strategy", STRATEGIES)
def test_tcp_exchange(strategy):
    dec = Decomposition(2, 2)

    def fn(sub, nbrs, tr):
        ex = HaloExchanger(sub.rank, nbrs, tr, strategy, timeout=10)
        try:
            for step in range(3):
                ex.post(step, {f: payload_for(sub.rank, step, f, 50) for f in nbrs})
                got = ex.wait(step)
                for face, data in got.items():
                    assert np.array_equal(data, payload_for(nbrs[face], step, face.opposite, 50))
            return ex.received
        finally:
            ex.close()

    results, errors = tcp_ranks(dec, fn)
    assert not errors
    assert sum(results.values()) == 3 * 8


def test_tcp_checksum_mismatch():
    dec = Decomposition(2, 1)
    _, errors = tcp_ranks(dec, lambda *a: None, checksums=[1, 2])
    assert errors and all(isinstance(e, ExchangeError) for e in errors)
    assert any("checksum" in str(e) for e in errors)


def test_tcp_disconnect_surfaces_as_exchange_error():
    dec = Decomposition(2, 1)

    def fn(sub, nbrs, tr):
        if sub.rank == 1:
            return None  # leaves immediately, closing its link
        with pytest.raises(ExchangeError):
            tr.recv(1, 0, Face.XLOW, timeout=5)
        return True

    results, errors = tcp_ranks(dec, fn)
    assert not errors and results[0] is True
