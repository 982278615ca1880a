"""Synthetic overlap workload: real exchanges around a sleeping interior phase."""
from __future__ import annotations

import statistics
import threading
import time

import numpy as np

from ..grid import Decomposition, GlobalGrid, decompose, neighbors_of
from .exchange import HaloExchanger
from .transport import InProcessNetwork


def _payload(src, step, face, n):
    return np.full(n, src * 1000 + step * 10 + int(face), dtype=np.float32)


def measure_wait(strategy, latency=0.02, compute=0.04, px=3, py=3, steps=3, payload=4096,
                 timeout=30.0):
    """Median WaitComm seconds on the rank with the most neighbors.

    Every rank posts its faces, sleeps ``compute`` seconds in place of the
    interior stencil, then waits. Message delivery is checked on the way.
    """
    dec = Decomposition(px, py)
    subs = decompose(GlobalGrid(px, py, 1), dec, (1, 1, 1))
    net = InProcessNetwork(dec.size, latency=latency)
    waits = {s.rank: [] for s in subs}
    errors = []

    def rank_main(sub):
        nbrs = neighbors_of(sub, dec)
        ex = HaloExchanger(sub.rank, nbrs, net.endpoint(sub.rank), strategy, timeout)
        try:
            for step in range(steps):
                ex.post(step, {f: _payload(sub.rank, step, f, payload) for f in nbrs})
                time.sleep(compute)
                t0 = time.perf_counter()
                got = ex.wait(step)
                waits[sub.rank].append(time.perf_counter() - t0)
                for face, data in got.items():
                    want = _payload(nbrs[face], step, face.opposite, payload)
                    if not np.array_equal(data, want):
                        raise AssertionError(f"rank {sub.rank} got wrong data on {face.name}")
        except BaseException as exc:  # noqa: BLE001
            errors.append(exc)
        finally:
            ex.close()

    threads = [threading.Thread(target=rank_main, args=(s,)) for s in subs]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        raise errors[0]
    busiest = max(subs, key=lambda s: len(neighbors_of(s, dec)))
    return statistics.median(waits[busiest.rank])
