import csv
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import LruOracle, naive_stream

from rtmlab.errors import ConfigError, UsageError
from rtmlab.perf import (CacheModel, CopyCounter, Report, ReportRow, TraceRecorder, ViewMode,
                         access_stream, acquire_view, cache_simulate, chrome_trace, emit_report,
                         emit_trace, improvement_table, relative_improvement, release)
from rtmlab.perf.report import CSV_HEADER, PHASE_NAMES
from rtmlab.perf.trace import load_trace
from rtmlab.stencil import Box

# -- views ---------------------------------------------------------------


def test_alias_counts_nothing():
    c = CopyCounter()
    b = np.arange(10, dtype=np.float32)
    v = acquire_view(b, "alias", c)
    assert v.array is b
    v.array[0] = 5
    release(v)
    assert c.bytes_copied == 0 and b[0] == 5


def test_copy_counts_both_ways_and_writes_back():
    c = CopyCounter()
    b = np.zeros(1000, np.float32)
    v = acquire_view(b, ViewMode.COPY, c)
    assert c.bytes_copied == 4000
    assert not np.shares_memory(v.array, b)
    v.array[:] = 3
    assert np.all(b == 0)
    release(v)
    assert c.bytes_copied == 8000 and c.copies == 2
    assert np.all(b == 3)


def test_release_twice_or_foreign():
    v = acquire_view(np.zeros(2), "copy", CopyCounter())
    release(v)
    with pytest.raises(UsageError):
        release(v)
    with pytest.raises(UsageError):
        release(np.zeros(2))


def test_view_mode_parse():
    assert ViewMode.parse("COPY") is ViewMode.COPY
    with pytest.raises(ConfigError):
        ViewMode.parse("mmap")


# -- cache model ---------------------------------------------------------

def test_model_geometry():
    m = CacheModel()
    assert m.sets * m.ways * m.line == m.capacity == 256 * 1024
    with pytest.raises(ConfigError):
        CacheModel(line=48)
    with pytest.raises(ConfigError):
        CacheModel(capacity=1000)
    fa = CacheModel.fully_associative(4096)
    assert fa.sets == 1 and fa.ways == 64


def test_simple_stream():
    s = cache_simulate([0, 64, 0], CacheModel(capacity=128, line=64, ways=2))
    assert (s.misses, s.hits, s.accesses) == (2, 1, 3)


def test_lru_eviction_order():
    m = CacheModel(capacity=128, line=64, ways=2)
    s = cache_simulate([0, 64, 0, 128, 64], m)  # 128 evicts 64, the least recent
    assert (s.hits, s.misses, s.evictions) == (1, 4, 2)


def test_stream_lengths():
    assert len(access_stream((1, 1, 1), (1, 1, 1))) == 8
    assert len(access_stream((16, 8, 8), (12, 12, 8))) == 16 * 8 * 8 * 66


def test_stream_matches_naive_loops():
    for order in ("yzx", "zyx"):
        got = access_stream((5, 4, 3), (2, 3, 1), order, 4, block=(7, 6, 5), in_base=128)
        want = naive_stream((5, 4, 3), (2, 3, 1), order, 4, block=(7, 6, 5), in_base=128)
        assert got.tolist() == want


def test_stream_multiset_independent_of_order():
    a = access_stream((6, 5, 4), (2, 2, 1), "yzx")
    b = access_stream((6, 5, 4), (2, 2, 1), "zyx")
    assert np.array_equal(np.sort(a), np.sort(b))
    assert not np.array_equal(a, b)


def test_stream_box_offsets_and_bounds():
    s = access_stream(Box(1, 3, 0, 2, 0, 1), (1, 1, 1), block=(4, 4, 2))
    assert len(s) == 4 * 8
    with pytest.raises(IndexError):
        access_stream(Box(0, 5, 0, 1, 0, 1), (1, 1, 1), block=(4, 4, 2))


@given(seed=st.integers(0, 10**6), ways=st.sampled_from([1, 2, 4]),
       sets=st.sampled_from([1, 2, 3, 8]), n=st.integers(0, 400))
def test_simulator_matches_oracle_random(seed, ways, sets, n):
    rng = np.random.default_rng(seed)
    stream = rng.integers(0, 64 * 40, n)
    model = CacheModel(capacity=64 * ways * sets, line=64, ways=ways)
    got = cache_simulate(stream, model)
    want = LruOracle(model.capacity, 64, ways).run(stream)
    assert (got.hits, got.misses, got.evictions) == (want.hits, want.misses, want.evictions)
    assert got.accesses == got.hits + got.misses
    assert got.evictions <= got.misses


@pytest.mark.parametrize("order", ["yzx", "zyx"])
def test_simulator_matches_oracle_stencil(order):
    stream = access_stream((16, 8, 8), (4, 4, 2), order)
    model = CacheModel(capacity=8 * 1024, line=64, ways=4)
    got = cache_simulate(stream, model)
    want = LruOracle(model.capacity, 64, 4).run(stream)
    assert (got.hits, got.misses) == (want.hits, want.misses)


def test_cold_misses_only_when_everything_fits():
    stream = access_stream((8, 8, 8), (2, 2, 2), "yzx")
    lines = len(np.unique(stream // 64))
    model = CacheModel.fully_associative(64 * 1024 * 1024 // 64 * 64)
    first = cache_simulate(stream, model)
    assert first.misses == lines
    twice = cache_simulate(np.concatenate([stream, stream]), model)
    assert twice.misses == lines  # second pass all hits


@given(tx=st.integers(1, 24), ty=st.integers(1, 6), tz=st.integers(1, 6),
       ry=st.integers(1, 4), rz=st.integers(1, 4), order=st.sampled_from(["yzx", "zyx"]))
def test_footprint_monotonicity(tx, ty, tz, ry, rz, order):
    # value-sized lines and no evictions: misses count distinct values touched
    model = CacheModel(capacity=4 * 8192, line=4, ways=8192)
    misses = [cache_simulate(access_stream((tx, ty, tz), (rx, ry, rz), order), model).misses
              for rx in range(1, 6)]
    assert misses == sorted(misses)


def test_footprint_monotonicity_fails_under_lru_thrash():
    # even fully associative with value-sized lines, a tighter cache can miss less
    model = CacheModel(capacity=4 * 256, line=4, ways=256)
    misses = [cache_simulate(access_stream((15, 1, 2), (rx, 4, 4), "yzx"), model).misses
              for rx in (1, 2)]
    assert misses == [530, 521]


def test_footprint_monotonicity_realistic_tile():
    model = CacheModel.fully_associative(16 * 1024)
    misses = [cache_simulate(access_stream((32, 16, 16), (rx, 4, 2), "zyx"), model).misses
              for rx in range(1, 9)]
    assert misses == sorted(misses)


def test_footprint_monotonicity_fails_with_set_conflicts():
    # widening the padded row changes the set mapping; conflict misses can drop
    model = CacheModel(capacity=16 * 1024, line=64, ways=4)
    m2 = cache_simulate(access_stream((32, 8, 8), (2, 3, 2), "yzx"), model).misses
    m3 = cache_simulate(access_stream((32, 8, 8), (3, 3, 2), "yzx"), model).misses
    assert (m2, m3) == (811, 740)


def test_loop_interchange_direction_small():
    model = CacheModel(capacity=32 * 1024, line=64, ways=8)
    yzx = cache_simulate(access_stream((32, 16, 16), (6, 6, 4), "yzx"), model).misses
    zyx = cache_simulate(access_stream((32, 16, 16), (6, 6, 4), "zyx"), model).misses
    assert zyx < yzx


def test_negative_address_rejected():
    with pytest.raises(ValueError):
        cache_simulate([-1], CacheModel())


# -- trace ---------------------------------------------------------------

def test_empty_trace(tmp_path):
    path = emit_trace([], tmp_path / "t.json")
    assert json.loads(path.read_text()) == {"traceEvents": []}


def test_trace_events_and_roundtrip(tmp_path):
    rec = TraceRecorder(epoch_ns=1000)
    rec.add(0, 0, "Pack", 3000, 5500, step=2)
    rec.add(1, 2, "HaloCompute.worker", 1000, 900, step=0, cat="worker")
    ev = rec.events
    assert ev[1].dur_ns == 0  # negative spans clamp to zero
    data = chrome_trace(ev)
    e0 = data["traceEvents"][0]
    assert e0 == {"name": "Pack", "cat": "phase", "ph": "X", "ts": 2.0, "dur": 2.5,
                  "pid": 0, "tid": 0, "args": {"step": 2}}
    path = emit_trace(ev, tmp_path / "t.json")
    assert load_trace(path) == ev


def test_disabled_recorder():
    rec = TraceRecorder(enabled=False)
    rec.add(0, 0, "Pack", 0, 1, 0)
    assert rec.events == []


# -- report --------------------------------------------------------------

def row(name, wall, **desc):
    d = {"decomposition": "4x4", "threads": "8", "schedule": "static", "order": "yzx",
         "strategy": "blocking", "view": "copy"}
    d.update(desc)
    phases = {p: wall / 6 for p in PHASE_NAMES}
    return ReportRow(name, d, phases, dict(phases), wall)


def test_relative_improvement():
    assert relative_improvement(10.0, 7.0) == pytest.approx(0.3)
    assert relative_improvement(10.0, 10.0) == 0.0
    assert relative_improvement(0.0, 1.0) == 0.0


def test_report_csv(tmp_path):
    base = row("baseline", 1.0)
    rep = Report(base, [base, row("dyn", 0.8, schedule="dynamic")], ("schedule",)).finalize()
    assert rep.rows[0].improvement == 0.0
    assert rep.rows[1].improvement == pytest.approx(0.2)
    path = emit_report(rep, tmp_path / "r.csv")
    with path.open() as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == CSV_HEADER
    assert len(rows) == 1 + 2 * len(PHASE_NAMES)
    assert {r[7] for r in rows[1:]} == set(PHASE_NAMES)
    assert float(rows[-1][CSV_HEADER.index("improvement")]) == pytest.approx(0.2)


def test_improvement_table_fig3_layout():
    base = row("baseline", 1.0)
    rows = [base,
            row("a", 0.9, schedule="dynamic"),
            row("b", 0.8, decomposition="2x8"),
            row("c", 0.6, decomposition="2x8", schedule="dynamic")]
    text = improvement_table(Report(base, rows).finalize())
    lines = text.splitlines()
    assert lines[0].split() == ["optimization", "4x4", "2x8"]
    assert lines[1].split()[0] == "schedule=dynamic"
    assert lines[1].split()[1:] == ["+10.0%", "+25.0%"]
