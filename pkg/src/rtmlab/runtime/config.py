"""Layered run configuration: defaults < file < environment < command-line flags.

The file format is flat ``key = value`` lines with dotted section keys;
``#`` starts a comment. Every key can also be given as ``--key=value`` on
the command line or as ``RTMLAB_<KEY>`` in the environment, where the key is
upper-cased with dots replaced by underscores (``RTMLAB_GRID_NX=96``).
"""
from __future__ import annotations

import os
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..errors import ConfigError
from ..grid import Decomposition, GlobalGrid, decompose
from ..halo import ExchangeStrategy
from ..perf.views import ViewMode
from ..scheduling import SchedulePolicy
from ..stencil import LoopOrder, StencilSpec
from ..wavefield import Medium, Problem, SourceSpec, Variant

ENV_PREFIX = "RTMLAB_"


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off", ""):
        return False
    raise ValueError(text)


# key -> (converter, default, description)
KEYS: dict[str, tuple] = {
    "grid.nx": (int, 64, "cells along X"),
    "grid.ny": (int, 64, "cells along Y"),
    "grid.nz": (int, 64, "cells along Z"),
    "grid.dx": (float, 10.0, "grid spacing"),
    "decomp.px": (int, 1, "ranks along X"),
    "decomp.py": (int, 1, "ranks along Y"),
    "stencil.rx": (int, 4, "stencil radius along X"),
    "stencil.ry": (int, 4, "stencil radius along Y"),
    "stencil.rz": (int, 2, "stencil radius along Z"),
    "tile.ty": (int, 32, "tile size along Y"),
    "tile.tz": (int, 32, "tile size along Z"),
    "run.threads": (int, 4, "worker threads per rank"),
    "run.steps": (int, 100, "time steps"),
    "run.dt": (str, "auto", "time step, or 'auto' for a fraction of the CFL bound"),
    "run.cfl_fraction": (float, 0.9, "fraction of the CFL bound used by dt=auto"),
    "run.schedule": (str, "dynamic", "static | dynamic"),
    "run.chunk": (int, 1, "dynamic schedule chunk size"),
    "run.order": (str, "zyx", "yzx | zyx"),
    "run.strategy": (str, "posted", "blocking | posted | commthread"),
    "run.view": (str, "alias", "copy | alias"),
    "run.dtype": (str, "float32", "float32 | float64"),
    "run.flush_denormals": (_bool, True, "run kernels with FTZ/DAZ"),
    "run.seed": (int, 0, "seed for init.noise"),
    "run.timeout": (float, 60.0, "seconds to wait for a halo message"),
    "medium.velocity": (float, 2000.0, "velocity at the top of the model"),
    "medium.gradient": (float, 0.0, "velocity increase per unit depth"),
    "source.x": (int, -1, "source cell X (-1 = centre)"),
    "source.y": (int, -1, "source cell Y (-1 = centre)"),
    "source.z": (int, -1, "source cell Z (-1 = centre)"),
    "source.freq": (float, 10.0, "Ricker peak frequency"),
    "source.amplitude": (float, 1.0, "source amplitude"),
    "source.delay": (str, "auto", "Ricker delay t0, or 'auto' for 1/freq"),
    "source.enabled": (_bool, True, "inject the source"),
    "init.noise": (float, 0.0, "std-dev of a seeded random initial field"),
    "transport.kind": (str, "inprocess", "inprocess | tcp"),
    "transport.host": (str, "127.0.0.1", "tcp host"),
    "transport.base_port": (int, 47000, "tcp: rank i listens on base_port + i"),
    "transport.latency_ms": (float, 0.0, "inprocess: injected per-message latency"),
    "launch.ranks": (int, 0, "launched rank count (0 = px*py)"),
    "launch.rank": (int, -1, "tcp: run only this rank"),
    "launch.spawn": (str, "none", "tcp: 'local' self-spawns one process per rank"),
    "launch.partdir": (str, "", "tcp: where rank processes leave their results"),
    "output.trace": (str, "", "Chrome trace JSON path"),
    "output.csv": (str, "", "report CSV path"),
    "output.snapshot": (str, "", "final-field snapshot path"),
    "debug.nan_check": (_bool, False, "check fields are finite after every step"),
    "debug.corrupt_halo_step": (int, -1, "add 1 to one ghost cell of rank 0 after this step"),
    "matrix.decomp": (str, "", "comma list of PXxPY"),
    "matrix.threads": (str, "", "comma list of thread counts"),
    "matrix.schedule": (str, "", "comma list of schedules"),
    "matrix.order": (str, "", "comma list of loop orders"),
    "matrix.strategy": (str, "", "comma list of strategies"),
    "matrix.view": (str, "", "comma list of view modes"),
    "matrix.repetitions": (int, 3, "timing repetitions per variant (median taken)"),
    "matrix.cachesim": (_bool, False, "simulate cache misses for each variant's loop order"),
}


def defaults() -> dict:
    return {k: v[1] for k, v in KEYS.items()}


def _convert(key, value):
    if key not in KEYS:
        raise ConfigError(f"unknown configuration key {key!r}")
    conv = KEYS[key][0]
    if isinstance(value, str):
        value = value.strip()
    try:
        return conv(value)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {value!r}") from None


def read_config_file(path) -> dict:
    values = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown configuration key {key!r}")
        values[key] = _convert(key, value)
    return values


def env_overrides(environ=None) -> dict:
    environ = os.environ if environ is None else environ
    out = {}
    for key in KEYS:
        name = ENV_PREFIX + key.upper().replace(".", "_")
        if name in environ:
            out[key] = _convert(key, environ[name])
    return out


def parse_flags(args) -> dict:
    """``--key=value`` / ``--key value`` tokens into a dict."""
    out = {}
    shorthand = {"rank": "launch.rank", "spawn": "launch.spawn", "ranks": "launch.ranks"}
    i = 0
    args = list(args)
    while i < len(args):
        tok = args[i]
        if not tok.startswith("--"):
            raise ConfigError(f"unexpected argument {tok!r}")
        body = tok[2:]
        if "=" in body:
            key, value = body.split("=", 1)
        else:
            if i + 1 >= len(args):
                raise ConfigError(f"flag {tok} needs a value")
            key, value = body, args[i + 1]
            i += 1
        key = shorthand.get(key, key)
        out[key] = _convert(key, value)
        i += 1
    return out


def _csv(text) -> list[str]:
    return [t.strip() for t in str(text).split(",") if t.strip()]


@dataclass(frozen=True)
class RunConfig:
    values: dict = field(default_factory=defaults)

    def __getitem__(self, key):
        return self.values[key]

    def with_overrides(self, **overrides) -> "RunConfig":
        """Copy with ``section__name=value`` style overrides, validated."""
        vals = dict(self.values)
        for k, v in overrides.items():
            key = k.replace("__", ".")
            vals[key] = _convert(key, v)
        cfg = replace(self, values=vals)
        cfg.validate()
        return cfg

    def set(self, key, value) -> "RunConfig":
        vals = dict(self.values)
        vals[key] = _convert(key, value)
        return replace(self, values=vals)

    # -- typed views --------------------------------------------------

    @property
    def grid(self) -> GlobalGrid:
        v = self.values
        return GlobalGrid(v["grid.nx"], v["grid.ny"], v["grid.nz"], v["grid.dx"])

    @property
    def decomposition(self) -> Decomposition:
        return Decomposition(self.values["decomp.px"], self.values["decomp.py"])

    @property
    def dtype(self) -> np.dtype:
        name = self.values["run.dtype"].lower()
        if name not in ("float32", "float64"):
            raise ConfigError(f"run.dtype must be float32 or float64, got {name!r}")
        return np.dtype(name)

    @property
    def spec(self) -> StencilSpec:
        v = self.values
        return StencilSpec(v["stencil.rx"], v["stencil.ry"], v["stencil.rz"], v["grid.dx"],
                           self.dtype, v["run.flush_denormals"])

    @property
    def source(self) -> SourceSpec | None:
        v = self.values
        if not v["source.enabled"]:
            return None
        g = self.grid
        delay = None if v["source.delay"].lower() == "auto" else float(v["source.delay"])

        def centre(val, n):
            return n // 2 if val < 0 else val
        return SourceSpec(centre(v["source.x"], g.nx), centre(v["source.y"], g.ny),
                          centre(v["source.z"], g.nz), v["source.freq"],
                          v["source.amplitude"], delay)

    @property
    def dt(self) -> float | None:
        text = self.values["run.dt"].strip().lower()
        if text == "auto":
            return None
        try:
            return float(text)
        except ValueError:
            raise ConfigError(f"run.dt must be a number or 'auto', got {text!r}") from None

    def problem(self) -> Problem:
        v = self.values
        return Problem(self.grid, self.spec, self.source,
                       Medium(v["medium.velocity"], v["medium.gradient"]), self.dt,
                       v["init.noise"], v["run.seed"], v["run.cfl_fraction"])

    def variant(self) -> Variant:
        v = self.values
        return Variant(
            decomposition=self.decomposition,
            threads=v["run.threads"],
            tile=(v["tile.ty"], v["tile.tz"]),
            schedule=SchedulePolicy.parse(v["run.schedule"]),
            order=LoopOrder.parse(v["run.order"]),
            strategy=ExchangeStrategy.parse(v["run.strategy"]),
            view=ViewMode.parse(v["run.view"]),
            chunk=v["run.chunk"],
        )

    def descriptor(self) -> dict[str, str]:
        var = self.variant()
        return {
            "decomposition": str(var.decomposition),
            "threads": str(var.threads),
            "schedule": var.schedule.value,
            "order": var.order.value,
            "strategy": var.strategy.value,
            "view": var.view.value,
        }

    def checksum(self) -> int:
        """Identity of everything ranks must agree on (used in the tcp handshake)."""
        v = self.values
        keys = ["grid.nx", "grid.ny", "grid.nz", "grid.dx", "decomp.px", "decomp.py",
                "stencil.rx", "stencil.ry", "stencil.rz", "run.dtype", "run.steps"]
        text = ";".join(f"{k}={v[k]}" for k in keys)
        return zlib.crc32(text.encode())

    def matrix_axes(self) -> dict[str, list[str]]:
        v = self.values
        axes = {}
        for axis, key in (("decomposition", "matrix.decomp"), ("threads", "matrix.threads"),
                          ("schedule", "matrix.schedule"), ("order", "matrix.order"),
                          ("strategy", "matrix.strategy"), ("view", "matrix.view")):
            items = _csv(v[key])
            if items:
                axes[axis] = items
        return axes

    # -- validation ---------------------------------------------------

    def validate(self) -> "RunConfig":
        v = self.values
        if v["run.threads"] < 1:
            raise ConfigError(f"run.threads must be >= 1, got {v['run.threads']}")
        if v["run.steps"] < 0:
            raise ConfigError(f"run.steps must be >= 0, got {v['run.steps']}")
        if v["tile.ty"] < 1 or v["tile.tz"] < 1:
            raise ConfigError("tile sizes must be >= 1")
        if v["run.chunk"] < 1:
            raise ConfigError("run.chunk must be >= 1")
        if v["transport.kind"] not in ("inprocess", "tcp"):
            raise ConfigError(f"transport.kind must be inprocess or tcp, got {v['transport.kind']!r}")
        if v["launch.spawn"] not in ("none", "local"):
            raise ConfigError(f"launch.spawn must be none or local, got {v['launch.spawn']!r}")
        dec = self.decomposition
        if v["launch.ranks"] and v["launch.ranks"] != dec.size:
            raise ConfigError(
                f"decomposition {dec} needs {dec.size} ranks but {v['launch.ranks']} were launched"
            )
        if v["launch.rank"] >= dec.size:
            raise ConfigError(f"launch.rank {v['launch.rank']} outside {dec.size} ranks")
        decompose(self.grid, dec, self.spec.radii)
        self.problem()
        self.variant()
        self.matrix_axes_checked()
        return self

    def matrix_axes_checked(self):
        parsers = {
            "decomposition": Decomposition.parse, "threads": int,
            "schedule": SchedulePolicy.parse, "order": LoopOrder.parse,
            "strategy": ExchangeStrategy.parse, "view": ViewMode.parse,
        }
        for axis, items in self.matrix_axes().items():
            for item in items:
                try:
                    parsers[axis](item)
                except ValueError:
                    raise ConfigError(f"bad {axis} value {item!r} in matrix axes") from None


AXIS_KEYS = {
    "decomposition": None, "threads": "run.threads", "schedule": "run.schedule",
    "order": "run.order", "strategy": "run.strategy", "view": "run.view",
}


def apply_axis(cfg: RunConfig, axis: str, value: str) -> RunConfig:
    if axis == "decomposition":
        dec = Decomposition.parse(value)
        return cfg.set("decomp.px", dec.px).set("decomp.py", dec.py)
    return cfg.set(AXIS_KEYS[axis], value)


def parse_config(path=None, flags=(), environ=None) -> RunConfig:
    """Resolve and validate a configuration."""
    values = defaults()
    if path:
        try:
            values.update(read_config_file(path))
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from None
    values.update(env_overrides(environ))
    values.update(parse_flags(flags) if not isinstance(flags, dict)
                  else {k: _convert(k, val) for k, val in flags.items()})
    return RunConfig(values).validate()
