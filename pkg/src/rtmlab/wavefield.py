"""Acoustic propagation through the six-phase distributed time step, and RTM imaging.

Each rank owns a :class:`RankSolver`. A step runs, in order:

1. HaloCompute      stencil + update on strips next to faces that have neighbors
2. Pack             copy those strips into outgoing payloads
3. PostComm         hand payloads to the exchange strategy
4. InteriorCompute  stencil + update on the rest of the block
5. WaitComm         wait for the neighbors' payloads
6. UnpackInterp     write ghosts, interpolation hook (identity)

Strips cover every cell that is packed, so neighbors always receive fully
updated values and the ghosts of the new field are valid for the next step.
"""
from __future__ import annotations

import enum
import math
import threading
import time
from dataclasses import dataclass, field
from typing import Callable

import numba
import numpy as np

from ._fpenv import FTZ_DAZ, mxcsr_get, mxcsr_set
from .errors import ConfigError, ExchangeError, StepError
from .grid import (Decomposition, Face, GlobalGrid, Subdomain, TileMap, decompose,
                   neighbors_of, tile_partition)
from .halo import (ExchangeStrategy, HaloExchanger, InProcessNetwork, Transport, pack_halo,
                   unpack_halo)
from .perf.trace import TraceRecorder
from .perf.views import CopyCounter, ViewMode, acquire_view, release
from .scheduling import SchedulePolicy, WorkerPool, WorkerStats, execute_collapsed_loop
from .stencil import Box, LoopOrder, StencilSpec, apply_stencil, positive_weight_sum


class PhaseId(enum.IntEnum):
    HaloCompute = 0
    Pack = 1
    PostComm = 2
    InteriorCompute = 3
    WaitComm = 4
    UnpackInterp = 5


PHASES = tuple(PhaseId)


def ricker(t, f):
    """Ricker wavelet ``(1 - 2 pi^2 f^2 t^2) exp(-pi^2 f^2 t^2)``."""
    a = (math.pi * f * t) ** 2
    return (1.0 - 2.0 * a) * math.exp(-a)


@dataclass(frozen=True)
class SourceSpec:
    x: int
    y: int
    z: int
    freq: float = 10.0
    amplitude: float = 1.0
    delay: float | None = None

    def __post_init__(self):
        if not self.freq > 0:
            raise ConfigError(f"source frequency must be positive, got {self.freq}")

    @property
    def t0(self) -> float:
        return 1.0 / self.freq if self.delay is None else self.delay

    def value(self, step: int, dt: float) -> float:
        return self.amplitude * ricker(step * dt - self.t0, self.freq)

    def check(self, grid: GlobalGrid) -> None:
        if not (0 <= self.x < grid.nx and 0 <= self.y < grid.ny and 0 <= self.z < grid.nz):
            raise ConfigError(f"source cell {(self.x, self.y, self.z)} outside the grid")


@dataclass(frozen=True)
class Medium:
    """Velocity ``v0 + gradient * depth``; depth runs along Z."""

    v0: float = 2000.0
    gradient: float = 0.0

    def vmax(self, grid: GlobalGrid) -> float:
        return max(self.v0, self.v0 + self.gradient * (grid.nz - 1) * grid.dx)

    def velocity(self, grid: GlobalGrid, sub: Subdomain) -> np.ndarray:
        z = np.arange(sub.lz, dtype=np.float64) * grid.dx
        v = self.v0 + self.gradient * z
        return np.broadcast_to(v[:, None, None], sub.interior_shape).copy()


def cfl_limit(spec: StencilSpec, dx: float, vmax: float) -> float:
    """Largest stable dt under the positive-weight-sum rule."""
    return dx * math.sqrt(1.0 / (vmax * vmax * positive_weight_sum(spec)))


def check_cfl(dt: float, spec: StencilSpec, dx: float, vmax: float) -> None:
    limit = cfl_limit(spec, dx, vmax)
    if not 0 < dt <= limit:
        raise ConfigError(f"dt={dt:g} violates the CFL bound {limit:g} for vmax={vmax:g}")


@dataclass
class WavefieldState:
    p_prev: np.ndarray
    p_curr: np.ndarray
    velocity: np.ndarray
    vdt2: np.ndarray
    dt: float
    spec: StencilSpec
    step: int = 0

    @classmethod
    def zeros(cls, sub: Subdomain, spec: StencilSpec, velocity: np.ndarray, dt: float):
        shape = (sub.lz + 2 * spec.rz, sub.ly + 2 * spec.ry, sub.lx + 2 * spec.rx)
        vdt2 = ((velocity * dt) ** 2).astype(spec.dtype)
        return cls(np.zeros(shape, spec.dtype), np.zeros(shape, spec.dtype),
                   velocity, vdt2, dt, spec)

    def interior(self, block=None) -> np.ndarray:
        b = self.p_curr if block is None else block
        r = self.spec
        return b[r.rz:b.shape[0] - r.rz, r.ry:b.shape[1] - r.ry, r.rx:b.shape[2] - r.rx]

    def check_finite(self) -> None:
        if not np.isfinite(self.interior()).all():
            raise FloatingPointError(f"non-finite pressure after step {self.step}")


@numba.njit(nogil=True, cache=True)
def _leapfrog(prev, curr, vdt2, lap, rx, ry, rz, x0, x1, y0, y1, z0, z1, ftz):
    saved = mxcsr_get()
    if ftz:
        mxcsr_set(saved | FTZ_DAZ)
    for z in range(z0, z1):
        for y in range(y0, y1):
            for x in range(x0, x1):
                c = curr[z + rz, y + ry, x + rx]
                prev[z + rz, y + ry, x + rx] = (c + c - prev[z + rz, y + ry, x + rx]) \
                    + vdt2[z, y, x] * lap[z, y, x]
    mxcsr_set(saved)


def step_update(state: WavefieldState, laplacian: np.ndarray, box: Box, target=None) -> None:
    """Leapfrog update of ``box``, written over p_prev (or ``target``).

    ``pNext = (2 pCurr - pPrev) + (v dt)^2 * laplacian``
    """
    prev = state.p_prev if target is None else target
    s = state.spec
    _leapfrog(prev, state.p_curr, state.vdt2, laplacian, s.rx, s.ry, s.rz,
              box.x0, box.x1, box.y0, box.y1, box.z0, box.z1, s.flush_denormals)


def image_accumulate(image: np.ndarray, p_src: np.ndarray, p_rcv: np.ndarray) -> None:
    """Zero-lag cross-correlation: ``image += p_src * p_rcv``."""
    if not (image.shape == p_src.shape == p_rcv.shape):
        raise ValueError(f"extent mismatch: {image.shape}, {p_src.shape}, {p_rcv.shape}")
    image += p_src * p_rcv


def split_regions(sub: Subdomain, neighbors) -> tuple[list[Box], Box]:
    """Disjoint strip boxes next to faces with neighbors, and the interior remainder."""
    lx, ly, lz = sub.lx, sub.ly, sub.lz
    x0 = sub.hx if Face.XLOW in neighbors else 0
    x1 = lx - sub.hx if Face.XHIGH in neighbors else lx
    y0 = sub.hy if Face.YLOW in neighbors else 0
    y1 = ly - sub.hy if Face.YHIGH in neighbors else ly
    x1 = max(x0, x1)
    y1 = max(y0, y1)
    strips = [
        Box(0, lx, 0, y0, 0, lz),
        Box(0, lx, y1, ly, 0, lz),
        Box(0, x0, y0, y1, 0, lz),
        Box(x1, lx, y0, y1, 0, lz),
    ]
    return [b for b in strips if b.cells], Box(x0, x1, y0, y1, 0, lz)


@dataclass
class RankResult:
    rank: int
    sub: Subdomain
    field: np.ndarray
    loop_stats: dict[str, WorkerStats]
    bytes_copied: int
    copies: int
    sent: int
    received: int
    steps: int


class RankSolver:
    """One rank's state, workers and exchange endpoint."""

    def __init__(
        self,
        sub: Subdomain,
        dec: Decomposition,
        state: WavefieldState,
        tiles: TileMap,
        transport: Transport | None,
        *,
        threads: int = 1,
        schedule=SchedulePolicy.DYNAMIC,
        order=LoopOrder.ZYX,
        strategy=ExchangeStrategy.POSTED_OVERLAP,
        view=ViewMode.ALIAS,
        source: SourceSpec | None = None,
        trace: TraceRecorder | None = None,
        chunk: int = 1,
        timeout: float | None = 60.0,
        nan_check: bool = False,
        hooks: dict[str, Callable] | None = None,
    ):
        self.sub = sub
        self.dec = dec
        self.state = state
        self.tiles = tiles
        self.threads = threads
        self.schedule = SchedulePolicy.parse(schedule)
        self.order = LoopOrder.parse(order)
        self.strategy = ExchangeStrategy.parse(strategy)
        self.view_mode = ViewMode.parse(view)
        self.source = source
        self.trace = trace or TraceRecorder(enabled=False)
        self.chunk = chunk
        self.nan_check = nan_check
        self.hooks = hooks or {}
        self.neighbors = neighbors_of(sub, dec)
        self.faces = sorted(self.neighbors)
        self.counter = CopyCounter()
        self.pool = WorkerPool(threads, name=f"rank{sub.rank}-w")
        self.exchanger = (
            HaloExchanger(sub.rank, self.neighbors, transport, self.strategy, timeout)
            if transport is not None else None
        )
        if self.neighbors and self.exchanger is None:
            raise ConfigError(f"rank {sub.rank} has neighbors but no transport")
        self.halo = (sub.hx, sub.hy, sub.hz)
        self.laplacian = np.zeros(sub.interior_shape, state.spec.dtype)
        strips, interior = split_regions(sub, self.neighbors)
        self.halo_work = [self._clip(strips, t) for t in tiles]
        self.interior_work = [self._clip([interior], t) for t in tiles]
        self.loop_stats = {
            "HaloCompute": WorkerStats.empty(threads),
            "InteriorCompute": WorkerStats.empty(threads),
        }
        self._src_cell = None
        if source is not None and sub.owns(source.x, source.y):
            self._src_cell = (source.z, source.y - sub.oy, source.x - sub.ox)
        self._target = None
        self._comm_logged = 0

    @staticmethod
    def _clip(boxes, tile):
        tb = Box(-1 << 30, 1 << 30, tile.y0, tile.y1, tile.z0, tile.z1)
        return [c for c in (b.intersect(tb) for b in boxes) if c.cells]

    # -- phase helpers -------------------------------------------------

    def _compute(self, boxes, step) -> int:
        st = self.state
        cells = 0
        for box in boxes:
            apply_stencil(st.p_curr, self.laplacian, box, st.spec, self.order)
            step_update(st, self.laplacian, box, self._target)
            cells += box.cells
            if self._src_cell is not None:
                z, y, x = self._src_cell
                if box.z0 <= z < box.z1 and box.y0 <= y < box.y1 and box.x0 <= x < box.x1:
                    s = st.spec
                    self._target[z + s.rz, y + s.ry, x + s.rx] += st.spec.dtype.type(
                        self.source.value(step, st.dt)
                    )
        return cells

    def _loop(self, phase: PhaseId, work, step):
        stats = execute_collapsed_loop(
            self.tiles, self.schedule, self.pool,
            lambda k: self._compute(work[k], step), chunk=self.chunk,
        )
        self.loop_stats[phase.name].merge(stats)
        self._worker_events(phase, stats, step)

    def _faces_on_workers(self, phase: PhaseId, fn, step):
        stats = execute_collapsed_loop(len(self.faces), SchedulePolicy.STATIC, self.pool,
                                       lambda k: fn(self.faces[k]))
        self._worker_events(phase, stats, step)

    def _worker_events(self, phase, stats, step):
        for w, (t0, t1) in enumerate(stats.spans):
            if stats.tiles[w]:
                self.trace.add(self.sub.rank, w + 1, f"{phase.name}.worker", t0, t1, step, "worker")

    def _log_comm_thread(self):
        spans = self.exchanger.comm_spans if self.exchanger else []
        while self._comm_logged < len(spans):
            t0, t1, step = spans[self._comm_logged]
            self.trace.add(self.sub.rank, self.threads + 1, "CommThread.exchange", t0, t1, step,
                           "comm")
            self._comm_logged += 1

    # -- the time step ------------------------------------------------

    def run_time_step(self) -> None:
        st = self.state
        step = st.step
        rank = self.sub.rank
        trace = self.trace
        halo = self.halo
        outgoing: dict[Face, np.ndarray] = {}
        received: dict[Face, np.ndarray] = {}

        t = time.perf_counter_ns()
        view = acquire_view(st.p_prev, self.view_mode, self.counter)
        self._target = view.array
        self._loop(PhaseId.HaloCompute, self.halo_work, step)
        t, t_prev = time.perf_counter_ns(), t
        trace.add(rank, 0, PhaseId.HaloCompute.name, t_prev, t, step)

        def pack(face):
            outgoing[face] = pack_halo(self._target, face, halo)
        self._faces_on_workers(PhaseId.Pack, pack, step)
        t, t_prev = time.perf_counter_ns(), t
        trace.add(rank, 0, PhaseId.Pack.name, t_prev, t, step)

        try:
            if self.exchanger is not None:
                self.exchanger.post(step, outgoing)
            t, t_prev = time.perf_counter_ns(), t
            trace.add(rank, 0, PhaseId.PostComm.name, t_prev, t, step)

            self._loop(PhaseId.InteriorCompute, self.interior_work, step)
            t, t_prev = time.perf_counter_ns(), t
            trace.add(rank, 0, PhaseId.InteriorCompute.name, t_prev, t, step)

            if self.exchanger is not None:
                received = self.exchanger.wait(step)
            t, t_prev = time.perf_counter_ns(), t
            trace.add(rank, 0, PhaseId.WaitComm.name, t_prev, t, step)
        except ExchangeError as exc:
            raise StepError(f"rank {rank} step {step}: {exc}", rank=rank,
                            face=exc.face, step=step) from exc

        def unpack(face):
            unpack_halo(self._target, face, received[face], halo)
            self.interpolate(face)
        self._faces_on_workers(PhaseId.UnpackInterp, unpack, step)
        hook = self.hooks.get("after_unpack")
        if hook is not None:
            hook(self, step)
        release(view)
        self._target = None
        t, t_prev = time.perf_counter_ns(), t
        trace.add(rank, 0, PhaseId.UnpackInterp.name, t_prev, t, step)
        self._log_comm_thread()

        st.p_prev, st.p_curr = st.p_curr, st.p_prev
        st.step += 1
        if self.nan_check:
            st.check_finite()

    def interpolate(self, face: Face) -> None:
        """Resampling hook for ghosts from a neighbor on a different grid; identity here."""

    def propagate(self, n_steps: int) -> None:
        if n_steps < 0:
            raise ValueError("n_steps must be >= 0")
        for _ in range(n_steps):
            self.run_time_step()

    def result(self) -> RankResult:
        ex = self.exchanger
        return RankResult(
            self.sub.rank, self.sub, self.state.interior().copy(), self.loop_stats,
            self.counter.bytes_copied, self.counter.copies,
            ex.sent if ex else 0, ex.received if ex else 0, self.state.step,
        )

    def close(self) -> None:
        if self.exchanger is not None:
            self.exchanger.close()
        self.pool.close()


@dataclass
class Problem:
    """Everything that must agree across ranks and variants."""

    grid: GlobalGrid
    spec: StencilSpec
    source: SourceSpec | None
    medium: Medium = field(default_factory=Medium)
    dt: float | None = None
    noise: float = 0.0
    seed: int = 0
    cfl_fraction: float = 0.9

    def __post_init__(self):
        if self.spec.dx != self.grid.dx:
            raise ConfigError(f"stencil spacing {self.spec.dx} differs from grid dx {self.grid.dx}")
        if self.source is not None:
            self.source.check(self.grid)
        vmax = self.medium.vmax(self.grid)
        if self.dt is None:
            self.dt = self.cfl_fraction * cfl_limit(self.spec, self.grid.dx, vmax)
        check_cfl(self.dt, self.spec, self.grid.dx, vmax)

    def initial_state(self, sub: Subdomain) -> WavefieldState:
        vel = self.medium.velocity(self.grid, sub)
        state = WavefieldState.zeros(sub, self.spec, vel, self.dt)
        if self.noise:
            g = self.grid
            rng = np.random.default_rng(self.seed)
            full = (self.noise * rng.standard_normal((g.nz, g.ny, g.nx))).astype(self.spec.dtype)
            s = self.spec
            padded = np.zeros((g.nz + 2 * s.rz, g.ny + 2 * s.ry, g.nx + 2 * s.rx), s.dtype)
            padded[s.rz:s.rz + g.nz, s.ry:s.ry + g.ny, s.rx:s.rx + g.nx] = full
            block = padded[:, sub.oy:sub.oy + sub.ly + 2 * s.ry, sub.ox:sub.ox + sub.lx + 2 * s.rx]
            state.p_curr[...] = block
            state.p_prev[...] = block
        return state


@dataclass
class Variant:
    decomposition: Decomposition = field(default_factory=lambda: Decomposition(1, 1))
    threads: int = 1
    tile: tuple[int, int] = (32, 32)
    schedule: SchedulePolicy = SchedulePolicy.DYNAMIC
    order: LoopOrder = LoopOrder.ZYX
    strategy: ExchangeStrategy = ExchangeStrategy.POSTED_OVERLAP
    view: ViewMode = ViewMode.ALIAS
    chunk: int = 1


@dataclass
class PropagationResult:
    field: np.ndarray
    events: list
    ranks: list[RankResult]
    wall: float

    @property
    def bytes_copied(self) -> int:
        return sum(r.bytes_copied for r in self.ranks)


def make_solver(problem: Problem, variant: Variant, rank: int, transport, trace=None,
                timeout=60.0, nan_check=False, hooks=None) -> RankSolver:
    dec = variant.decomposition
    subs = decompose(problem.grid, dec, problem.spec.radii)
    sub = subs[rank]
    tiles = tile_partition(sub.ly, sub.lz, *variant.tile)
    return RankSolver(
        sub, dec, problem.initial_state(sub), tiles, transport,
        threads=variant.threads, schedule=variant.schedule, order=variant.order,
        strategy=variant.strategy, view=variant.view, source=problem.source,
        trace=trace, chunk=variant.chunk, timeout=timeout, nan_check=nan_check, hooks=hooks,
    )


def assemble(grid: GlobalGrid, results, dtype) -> np.ndarray:
    """Global ``[z, y, x]`` interior field from per-rank interiors."""
    out = np.zeros((grid.nz, grid.ny, grid.nx), dtype)
    for r in results:
        s = r.sub
        out[:, s.oy:s.oy + s.ly, s.ox:s.ox + s.lx] = r.field
    return out


def propagate(problem: Problem, n_steps: int, variant: Variant | None = None, *,
              latency: float = 0.0, trace: TraceRecorder | None = None,
              timeout: float | None = 60.0, nan_check: bool = False,
              hooks: dict | None = None) -> PropagationResult:
    """Run every rank of ``variant`` as a thread of this process."""
    if n_steps < 0:
        raise ValueError("n_steps must be >= 0")
    variant = variant or Variant()
    dec = variant.decomposition
    trace = trace or TraceRecorder()
    net = InProcessNetwork(dec.size, latency=latency)
    solvers = [
        make_solver(problem, variant, r, net.endpoint(r) if dec.size > 1 else None,
                    trace, timeout, nan_check, hooks)
        for r in range(dec.size)
    ]
    errors: list[BaseException] = []

    def rank_main(solver):
        try:
            solver.propagate(n_steps)
        except BaseException as exc:  # noqa: BLE001 - collected and re-raised
            errors.append(exc)
            net.fail(solver.sub.rank)

    t0 = time.perf_counter()
    try:
        if dec.size == 1:
            rank_main(solvers[0])
        else:
            threads = [threading.Thread(target=rank_main, args=(s,), name=f"rank-{s.sub.rank}")
                       for s in solvers]
            for th in threads:
                th.start()
            for th in threads:
                th.join()
    finally:
        for s in solvers:
            s.close()
    wall = time.perf_counter() - t0
    if errors:
        # the failing rank records its error before peers see the disconnect
        raise errors[0]
    results = [s.result() for s in solvers]
    return PropagationResult(assemble(problem.grid, results, problem.spec.dtype),
                             trace.events, results, wall)


def reverse_time_migration(problem: Problem, n_steps: int, receivers, variant=None) -> np.ndarray:
    """Image from a forward source run and a time-reversed receiver run.

    ``receivers`` is a list of ``((x, y, z), trace)`` pairs with ``trace`` of
    length ``n_steps``. The source wavefield is stored at every step, which
    limits this driver to small grids.
    """
    variant = variant or Variant()
    grid, spec = problem.grid, problem.spec
    if variant.decomposition.size != 1:
        raise ConfigError("the imaging driver runs on a single rank")
    src = make_solver(problem, variant, 0, None)
    history = []
    try:
        for _ in range(n_steps):
            src.run_time_step()
            history.append(src.state.interior().copy())
    finally:
        src.close()

    back = Problem(grid, spec, None, problem.medium, problem.dt)
    rcv = make_solver(back, variant, 0, None)
    image = np.zeros((grid.nz, grid.ny, grid.nx), spec.dtype)
    try:
        for it in range(n_steps):
            t_index = n_steps - 1 - it
            rcv.run_time_step()
            interior = rcv.state.interior()
            for (x, y, z), samples in receivers:
                interior[z, y, x] += spec.dtype.type(samples[t_index])
            image_accumulate(image, history[t_index], interior)
    finally:
        rcv.close()
    return image
