"""Command line: ``rtmlab run|verify|matrix|cachesim|weights``.

Exit codes: 0 success, 1 runtime or correctness failure, 2 usage or
configuration error.
"""
from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from ..errors import ConfigError, CorrectnessError, RtmError
from ..perf.cachesim import CacheModel, access_stream, cache_simulate
from ..perf.report import emit_report, improvement_table
from ..stencil import LoopOrder, fd_weights
from .config import KEYS, parse_config
from .launch import ExperimentMatrix, run, run_matrix, verify_against_serial, write_artifacts

log = logging.getLogger("rtmlab")


def _triple(text: str, sep: str) -> tuple[int, int, int]:
    parts = [int(p) for p in text.replace(sep, " ").split()]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected three integers separated by {sep!r}: {text!r}")
    return tuple(parts)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rtmlab", description="Distributed RTM mini-app and performance lab.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("-c", "--config", help="key = value config file")
        sp.epilog = "Any config key can be given as --section.name=value."
        return sp

    with_config(sub.add_parser("run", help="propagate and write trace/CSV/snapshot"))
    with_config(sub.add_parser("verify", help="compare against the 1-rank, 1-thread run"))
    with_config(sub.add_parser("matrix", help="run the experiment matrix and report"))
    sub.add_parser("keys", help="list config keys and defaults")

    cs = sub.add_parser("cachesim", help="cache misses of one tile per loop order")
    cs.add_argument("--tile", type=lambda t: _triple(t, "x"), default=(64, 32, 32),
                    help="tile extent XxYxZ")
    cs.add_argument("--radii", type=lambda t: _triple(t, ","), default=(12, 12, 8))
    cs.add_argument("--order", choices=["yzx", "zyx", "both"], default="both")
    cs.add_argument("--capacity", type=int, default=256 * 1024)
    cs.add_argument("--line", type=int, default=64)
    cs.add_argument("--ways", type=int, default=8)
    cs.add_argument("--value-size", type=int, default=4, choices=[4, 8])

    w = sub.add_parser("weights", help="print second-derivative weights")
    w.add_argument("--radius", type=int, required=True)
    w.add_argument("--spacing", type=float, default=1.0)
    return p


def _cmd_run(cfg) -> int:
    outcome = run(cfg)
    if outcome.result is not None:
        f = outcome.result.field
        print(f"wall {outcome.result.wall:.3f}s  max|p| {float(np.max(np.abs(f), initial=0)):.6e}")
        for kind, path in outcome.artifacts.items():
            print(f"{kind}: {path}")
    return outcome.status


def _cmd_verify(cfg) -> int:
    res = verify_against_serial(cfg)
    print(f"max_abs_diff {res.max_abs_diff:.6e}")
    print(f"bitwise_equal {str(res.bitwise_equal).lower()}")
    if cfg["output.snapshot"]:
        from .launch import write_snapshot
        write_snapshot(cfg["output.snapshot"], res.field)
    return 0 if res.bitwise_equal else 1


def _cmd_matrix(cfg) -> int:
    matrix = ExperimentMatrix.from_config(cfg)
    report = run_matrix(matrix, progress=lambda r: print(f"  {r.name}: {r.wall * 1e3:.1f} ms"))
    if cfg["output.csv"]:
        print(f"csv: {emit_report(report, cfg['output.csv'])}")
    print(improvement_table(report), end="")
    return 0


def _cmd_cachesim(args) -> int:
    model = CacheModel(args.capacity, args.line, args.ways, args.value_size)
    orders = [LoopOrder.YZX, LoopOrder.ZYX] if args.order == "both" else [LoopOrder.parse(args.order)]
    for order in orders:
        stats = cache_simulate(access_stream(args.tile, args.radii, order, args.value_size), model)
        print(f"order={order.value} accesses={stats.accesses} misses={stats.misses} "
              f"miss_rate={stats.miss_rate:.4f}")
    return 0


def _cmd_weights(args) -> int:
    for k, c in enumerate(fd_weights(args.radius, args.spacing)):
        print(f"{k - args.radius:+d} {float(c)!r}")
    return 0


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command in ("cachesim", "weights", "keys"):
            if extra:
                parser.error(f"unrecognized arguments: {' '.join(extra)}")
            if args.command == "keys":
                for key, (_, default, desc) in KEYS.items():
                    print(f"{key:28} {default!s:12} {desc}")
                return 0
            return _cmd_cachesim(args) if args.command == "cachesim" else _cmd_weights(args)
        cfg = parse_config(args.config, extra)
        if args.command == "run":
            return _cmd_run(cfg)
        if args.command == "verify":
            return _cmd_verify(cfg)
        return _cmd_matrix(cfg)
    except ConfigError as exc:
        print(f"rtmlab: configuration error: {exc}", file=sys.stderr)
        return 2
    except CorrectnessError as exc:
        print(f"rtmlab: correctness failure: {exc}", file=sys.stderr)
        return 1
    except (RtmError, OSError, ValueError) as exc:
        print(f"rtmlab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


__all__ = ["main", "build_parser", "write_artifacts"]
