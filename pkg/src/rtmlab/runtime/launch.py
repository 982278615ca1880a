"""Running configurations: in-process ranks, tcp rank processes, verification, matrices."""
from __future__ import annotations

import itertools
import json
import logging
import shutil
import statistics
import struct
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass
from dataclasses import field as dc_field
from pathlib import Path

import numpy as np

from ..errors import ConfigError, CorrectnessError, RtmError
from ..grid import decompose, neighbors_of
from ..halo import TcpTransport, slab_slices
from ..perf.cachesim import CacheModel, access_stream, cache_simulate
from ..perf.report import PHASE_NAMES, Report, ReportRow, emit_report
from ..perf.trace import TraceEvent, TraceRecorder, emit_trace
from ..scheduling import WorkerStats, imbalance_metric
from ..stencil import Box
from ..wavefield import PropagationResult, RankResult, assemble, make_solver, propagate
from .config import KEYS, RunConfig, apply_axis

log = logging.getLogger(__name__)

SNAPSHOT_HEADER = struct.Struct("<QQQ")


# -- snapshots -----------------------------------------------------------

def write_snapshot(path, field: np.ndarray) -> Path:
    """24-byte header (nx, ny, nz as u64 LE), then values X-fastest, little-endian."""
    nz, ny, nx = field.shape
    le = field.dtype.newbyteorder("<")
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(SNAPSHOT_HEADER.pack(nx, ny, nz))
        fh.write(np.ascontiguousarray(field, dtype=le).tobytes())
    return path


def read_snapshot(path) -> np.ndarray:
    """Inverse of write_snapshot; the value type is inferred from the file size."""
    data = Path(path).read_bytes()
    if len(data) < SNAPSHOT_HEADER.size:
        raise ValueError(f"{path}: truncated snapshot header")
    nx, ny, nz = SNAPSHOT_HEADER.unpack_from(data)
    n = nx * ny * nz
    body = len(data) - SNAPSHOT_HEADER.size
    if n == 0 or body % n or body // n not in (4, 8):
        raise ValueError(f"{path}: {body} payload bytes do not fit {nx}x{ny}x{nz} floats")
    dtype = np.dtype("<f4" if body // n == 4 else "<f8")
    arr = np.frombuffer(data, dtype=dtype, offset=SNAPSHOT_HEADER.size).reshape(nz, ny, nx)
    return arr.astype(dtype.newbyteorder("="))


def write_config(cfg: RunConfig, path) -> Path:
    lines = [f"{k} = {cfg[k]}" for k in KEYS]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return Path(path)


# -- hooks ---------------------------------------------------------------

def _hooks(cfg: RunConfig):
    corrupt = cfg["debug.corrupt_halo_step"]
    if corrupt < 0:
        return None

    def after_unpack(solver, step):
        if solver.sub.rank != 0 or step != corrupt or not solver.faces:
            return
        face = solver.faces[0]
        ghost = solver._target[slab_slices(solver._target.shape, face, solver.halo, ghost=True)]
        idx = tuple(n // 2 for n in ghost.shape)
        ghost[idx] += ghost.dtype.type(1.0)
        log.warning("corrupted %s ghost cell %s of rank 0 at step %d", face.name, idx, step)
    return {"after_unpack": after_unpack}


# -- execution -----------------------------------------------------------

def _execute_inprocess(cfg: RunConfig) -> PropagationResult:
    return propagate(
        cfg.problem(), cfg["run.steps"], cfg.variant(),
        latency=cfg["transport.latency_ms"] * 1e-3, timeout=cfg["run.timeout"],
        nan_check=cfg["debug.nan_check"], hooks=_hooks(cfg),
    )


def run_tcp_rank(cfg: RunConfig) -> RankResult:
    """Run one rank of a tcp launch and leave its results in ``launch.partdir``."""
    rank = cfg["launch.rank"]
    problem, variant = cfg.problem(), cfg.variant()
    dec = variant.decomposition
    sub = decompose(problem.grid, dec, problem.spec.radii)[rank]
    peers = list(neighbors_of(sub, dec).values())
    transport = None
    if peers:
        transport = TcpTransport(rank, peers, cfg["transport.base_port"], cfg.checksum(),
                                 cfg["transport.host"], connect_timeout=cfg["run.timeout"])
    trace = TraceRecorder(epoch_ns=0)
    solver = make_solver(problem, variant, rank, transport, trace, cfg["run.timeout"],
                         cfg["debug.nan_check"], _hooks(cfg))
    t0 = time.perf_counter()
    try:
        solver.propagate(cfg["run.steps"])
    finally:
        solver.close()
        if transport is not None:
            transport.close()
    wall = time.perf_counter() - t0
    result = solver.result()
    partdir = cfg["launch.partdir"]
    if partdir:
        d = Path(partdir)
        write_snapshot(d / f"rank{rank}.field", result.field)
        meta = {
            "rank": rank, "wall": wall, "bytes_copied": result.bytes_copied,
            "copies": result.copies, "sent": result.sent, "received": result.received,
            "steps": result.steps,
            "busy": {k: v.busy for k, v in result.loop_stats.items()},
            "events": [e.__dict__ for e in trace.events],
        }
        (d / f"rank{rank}.json").write_text(json.dumps(meta), encoding="utf-8")
    return result


def _spawn_tcp(cfg: RunConfig) -> PropagationResult:
    dec = cfg.decomposition
    own_dir = not cfg["launch.partdir"]
    partdir = Path(cfg["launch.partdir"] or tempfile.mkdtemp(prefix="rtmlab-"))
    partdir.mkdir(parents=True, exist_ok=True)
    child = cfg
    for key in ("output.trace", "output.csv", "output.snapshot"):
        child = child.set(key, "")
    child = child.set("launch.spawn", "none").set("launch.partdir", str(partdir))
    cfg_path = write_config(child, partdir / "run.cfg")
    procs = []
    t0 = time.perf_counter()
    try:
        for r in range(dec.size):
            cmd = [sys.executable, "-m", "rtmlab", "run", "--config", str(cfg_path),
                   f"--launch.rank={r}"]
            err = open(partdir / f"rank{r}.stderr", "wb")
            procs.append((subprocess.Popen(cmd, stdout=subprocess.DEVNULL, stderr=err), err))
        failed = []
        for r, (p, err) in enumerate(procs):
            code = p.wait()
            err.close()
            if code != 0:
                tail = (partdir / f"rank{r}.stderr").read_text(errors="replace")[-2000:]
                failed.append(f"rank {r} exited with {code}:\n{tail}")
        wall = time.perf_counter() - t0
        if failed:
            raise RtmError("tcp launch failed\n" + "\n".join(failed))
        return _collect_parts(cfg, partdir, wall)
    finally:
        for p, err in procs:
            if p.poll() is None:
                p.kill()
            err.close()
        if own_dir:
            shutil.rmtree(partdir, ignore_errors=True)


def _collect_parts(cfg: RunConfig, partdir: Path, wall: float) -> PropagationResult:
    problem = cfg.problem()
    subs = decompose(problem.grid, cfg.decomposition, problem.spec.radii)
    ranks, events = [], []
    for sub in subs:
        meta = json.loads((partdir / f"rank{sub.rank}.json").read_text(encoding="utf-8"))
        part = read_snapshot(partdir / f"rank{sub.rank}.field")
        stats = {}
        for name, busy in meta["busy"].items():
            ws = WorkerStats.empty(len(busy))
            ws.busy = list(busy)
            stats[name] = ws
        ranks.append(RankResult(sub.rank, sub, part, stats, meta["bytes_copied"],
                                meta["copies"], meta["sent"], meta["received"], meta["steps"]))
        events.extend(TraceEvent(**e) for e in meta["events"])
    if events:
        epoch = min(e.start_ns for e in events)
        events = [TraceEvent(e.rank, e.thread, e.name, e.start_ns - epoch, e.dur_ns, e.step, e.cat)
                  for e in events]
    events.sort(key=lambda e: (e.rank, e.thread, e.start_ns))
    return PropagationResult(assemble(problem.grid, ranks, problem.spec.dtype), events, ranks, wall)


def execute(cfg: RunConfig) -> PropagationResult:
    """Run ``cfg`` without writing any artifacts."""
    if cfg["transport.kind"] == "inprocess":
        return _execute_inprocess(cfg)
    if cfg["launch.spawn"] == "local":
        return _spawn_tcp(cfg)
    raise ConfigError("tcp transport needs --spawn=local, or --rank=i for a single rank")


# -- reporting -----------------------------------------------------------

def report_row(name: str, cfg: RunConfig, result: PropagationResult,
               cache_misses: int | None = None) -> ReportRow:
    steps = max(1, cfg["run.steps"])
    per_rank: dict[int, dict[str, float]] = {r.rank: dict.fromkeys(PHASE_NAMES, 0.0)
                                             for r in result.ranks}
    for e in result.events:
        if e.cat == "phase" and e.name in PHASE_NAMES:
            per_rank[e.rank][e.name] += e.dur_ns * 1e-9 / steps
    mean = {p: statistics.fmean(r[p] for r in per_rank.values()) for p in PHASE_NAMES}
    peak = {p: max(r[p] for r in per_rank.values()) for p in PHASE_NAMES}
    imbalances = []
    for r in result.ranks:
        busy = [sum(v) for v in zip(*(s.busy for s in r.loop_stats.values()))]
        if busy and sum(busy) > 0:
            imbalances.append(imbalance_metric(busy))
    return ReportRow(
        name=name, descriptor=cfg.descriptor(), phase_mean=mean, phase_max=peak,
        wall=result.wall, imbalance=statistics.fmean(imbalances) if imbalances else 0.0,
        bytes_copied=result.bytes_copied, cache_misses=cache_misses,
    )


def simulate_tile_misses(cfg: RunConfig) -> int:
    """Cache misses for rank 0's first tile under the configured loop order."""
    problem, variant = cfg.problem(), cfg.variant()
    sub = decompose(problem.grid, variant.decomposition, problem.spec.radii)[0]
    ty, tz = variant.tile
    box = Box(0, sub.lx, 0, min(ty, sub.ly), 0, min(tz, sub.lz))
    model = CacheModel(value_size=problem.spec.dtype.itemsize)
    stream = access_stream(box, problem.spec.radii, variant.order, model.value_size,
                           block=(sub.lx, sub.ly, sub.lz))
    return cache_simulate(stream, model).misses


@dataclass
class RunOutcome:
    status: int
    result: PropagationResult | None
    report: Report | None = None
    artifacts: dict[str, Path] = dc_field(default_factory=dict)


def write_artifacts(cfg: RunConfig, result: PropagationResult, report: Report | None = None):
    out = {}
    if cfg["output.trace"]:
        out["trace"] = emit_trace(result.events, cfg["output.trace"])
    if cfg["output.csv"]:
        if report is None:
            row = report_row("baseline", cfg, result)
            report = Report(row, [row]).finalize()
        out["csv"] = emit_report(report, cfg["output.csv"])
    if cfg["output.snapshot"]:
        out["snapshot"] = write_snapshot(cfg["output.snapshot"], result.field)
    return out


def run(cfg: RunConfig) -> RunOutcome:
    """Execute one configuration and write its trace, CSV and snapshot."""
    if cfg["transport.kind"] == "tcp" and cfg["launch.rank"] >= 0:
        run_tcp_rank(cfg)
        return RunOutcome(0, None)
    result = execute(cfg)
    return RunOutcome(0, result, artifacts=write_artifacts(cfg, result))


# -- verification --------------------------------------------------------

@dataclass
class VerifyResult:
    max_abs_diff: float
    bitwise_equal: bool
    field: np.ndarray = dc_field(repr=False)
    reference: np.ndarray = dc_field(repr=False)

    @property
    def diff(self) -> np.ndarray:
        return np.abs(self.field.astype(np.float64) - self.reference.astype(np.float64))


def serial_reference(cfg: RunConfig) -> RunConfig:
    return (cfg.set("decomp.px", 1).set("decomp.py", 1).set("run.threads", 1)
            .set("transport.kind", "inprocess").set("transport.latency_ms", 0.0)
            .set("debug.corrupt_halo_step", -1).set("launch.spawn", "none")
            .set("launch.rank", -1).set("launch.ranks", 0))


def compare_fields(field_a: np.ndarray, field_b: np.ndarray) -> tuple[float, bool]:
    if field_a.shape != field_b.shape:
        raise ValueError(f"shape mismatch: {field_a.shape} vs {field_b.shape}")
    equal = field_a.dtype == field_b.dtype and field_a.tobytes() == field_b.tobytes()
    diff = float(np.max(np.abs(field_a.astype(np.float64) - field_b.astype(np.float64)),
                        initial=0.0))
    return diff, equal


def verify_against_serial(cfg: RunConfig) -> VerifyResult:
    """Run ``cfg`` and its 1-rank, 1-thread twin and compare final fields."""
    got = execute(cfg).field
    ref = execute(serial_reference(cfg)).field
    diff, equal = compare_fields(got, ref)
    return VerifyResult(diff, equal, got, ref)


# -- experiment matrix ---------------------------------------------------

@dataclass
class ExperimentMatrix:
    baseline: RunConfig
    axes: dict[str, list[str]] = dc_field(default_factory=dict)
    repetitions: int = 3
    cachesim: bool = False

    @classmethod
    def from_config(cls, cfg: RunConfig) -> "ExperimentMatrix":
        return cls(cfg, cfg.matrix_axes(), cfg["matrix.repetitions"], cfg["matrix.cachesim"])

    def variants(self) -> list[tuple[str, RunConfig]]:
        names = list(self.axes)
        out = []
        if not names:
            return out
        for combo in itertools.product(*(self.axes[n] for n in names)):
            cfg = self.baseline
            for axis, value in zip(names, combo):
                cfg = apply_axis(cfg, axis, value)
            cfg.validate()
            out.append((",".join(f"{a}={v}" for a, v in zip(names, combo)), cfg))
        return out


def _timed(cfg: RunConfig, repetitions: int) -> PropagationResult:
    runs = [execute(cfg) for _ in range(max(1, repetitions))]
    runs.sort(key=lambda r: r.wall)
    return runs[(len(runs) - 1) // 2]


def run_matrix(matrix: ExperimentMatrix, progress=None) -> Report:
    """Run baseline and every variant, check bitwise equality, and compare timings."""
    base_cfg = matrix.baseline
    execute(base_cfg.set("run.steps", min(2, base_cfg["run.steps"])))  # compile kernels untimed
    base = _timed(base_cfg, matrix.repetitions)
    misses = simulate_tile_misses(base_cfg) if matrix.cachesim else None
    base_row = report_row("baseline", base_cfg, base, misses)
    rows = [base_row]
    if progress:
        progress(base_row)
    for name, cfg in matrix.variants():
        res = _timed(cfg, matrix.repetitions)
        diff, equal = compare_fields(res.field, base.field)
        if not equal:
            raise CorrectnessError(
                f"variant {name} differs from baseline (max abs diff {diff:g})", variant=name
            )
        misses = simulate_tile_misses(cfg) if matrix.cachesim else None
        row = report_row(name, cfg, res, misses)
        bad = row.differs_from(base_row) - set(matrix.axes)
        if bad:
            raise CorrectnessError(f"variant {name} also changed {sorted(bad)}", variant=name)
        rows.append(row)
        if progress:
            progress(row)
    return Report(base_row, rows, tuple(matrix.axes)).finalize()


def free_port_block(n: int) -> int:
    """A base port with ``n`` consecutive ports that are currently free."""
    import socket
    for _ in range(50):
        with socket.socket() as s:
            s.bind(("127.0.0.1", 0))
            base = s.getsockname()[1]
        if base + n >= 65535:
            continue
        ok = True
        for p in range(base, base + n):
            with socket.socket() as s:
                try:
                    s.bind(("127.0.0.1", p))
                except OSError:
                    ok = False
                    break
        if ok:
            return base
    raise RuntimeError("no free port block")
