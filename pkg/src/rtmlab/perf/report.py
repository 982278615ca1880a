"""Cross-variant comparison rows, the CSV report and the improvement table."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

PHASE_NAMES = ("HaloCompute", "Pack", "PostComm", "InteriorCompute", "WaitComm", "UnpackInterp")

CSV_HEADER = (
    "variant", "decomposition", "threads", "schedule", "order", "strategy", "view",
    "phase", "mean_ms", "max_ms", "imbalance", "bytes_copied", "cache_misses",
    "wall_ms", "baseline_wall_ms", "improvement", "phase_improvement",
)

AXES = ("decomposition", "threads", "schedule", "order", "strategy", "view")


def relative_improvement(baseline: float, variant: float) -> float:
    """``(baseline - variant) / baseline``; positive means the variant is faster."""
    if baseline == 0:
        return 0.0
    return (baseline - variant) / baseline


@dataclass
class ReportRow:
    name: str
    descriptor: dict[str, str]
    phase_mean: dict[str, float]
    phase_max: dict[str, float]
    wall: float
    imbalance: float = 0.0
    bytes_copied: int = 0
    cache_misses: int | None = None
    improvement: float = 0.0
    phase_improvement: dict[str, float] = field(default_factory=dict)

    def differs_from(self, other: "ReportRow") -> set[str]:
        return {k for k in AXES if self.descriptor.get(k) != other.descriptor.get(k)}


@dataclass
class Report:
    baseline: ReportRow
    rows: list[ReportRow]
    axes: tuple[str, ...] = ()

    def finalize(self) -> "Report":
        """Fill improvement columns against the baseline row."""
        b = self.baseline
        for row in self.rows:
            row.improvement = relative_improvement(b.wall, row.wall)
            row.phase_improvement = {
                p: relative_improvement(b.phase_mean.get(p, 0.0), row.phase_mean.get(p, 0.0))
                for p in PHASE_NAMES
            }
        return self

    def csv_rows(self):
        for row in self.rows:
            d = row.descriptor
            for p in PHASE_NAMES:
                yield (
                    row.name, d.get("decomposition", ""), d.get("threads", ""),
                    d.get("schedule", ""), d.get("order", ""), d.get("strategy", ""),
                    d.get("view", ""), p,
                    f"{row.phase_mean.get(p, 0.0) * 1e3:.6f}",
                    f"{row.phase_max.get(p, 0.0) * 1e3:.6f}",
                    f"{row.imbalance:.6f}", row.bytes_copied,
                    "" if row.cache_misses is None else row.cache_misses,
                    f"{row.wall * 1e3:.6f}", f"{self.baseline.wall * 1e3:.6f}",
                    f"{row.improvement:.6f}",
                    f"{row.phase_improvement.get(p, 0.0):.6f}",
                )


def emit_report(report: Report, path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        w.writerows(report.csv_rows())
    return path


def improvement_table(report: Report) -> str:
    """Improvement per optimization (rows) for each decomposition (columns).

    Each column is measured against the row that matches the baseline in
    every axis except the decomposition, falling back to the baseline.
    """
    base = report.baseline
    decomps = []
    for row in report.rows:
        d = row.descriptor.get("decomposition", "")
        if d not in decomps:
            decomps.append(d)
    ref = {}
    for d in decomps:
        ref[d] = next(
            (r for r in report.rows
             if r.descriptor.get("decomposition") == d and r.differs_from(base) <= {"decomposition"}),
            base,
        )
    labels: dict[str, dict[str, float]] = {}
    for row in report.rows:
        d = row.descriptor.get("decomposition", "")
        diff = sorted(row.differs_from(base) - {"decomposition"})
        if row is ref[d] or not diff:
            continue
        label = ", ".join(f"{k}={row.descriptor[k]}" for k in diff)
        labels.setdefault(label, {})[d] = relative_improvement(ref[d].wall, row.wall)
    width = max([len("optimization")] + [len(k) for k in labels])
    out = io.StringIO()
    out.write("optimization".ljust(width) + "".join(f"{d:>12}" for d in decomps) + "\n")
    for label, cols in labels.items():
        cells = "".join(
            f"{cols[d] * 100:+11.1f}%" if d in cols else f"{'-':>12}" for d in decomps
        )
        out.write(label.ljust(width) + cells + "\n")
    return out.getvalue()
