from .cachesim import CacheModel, CacheStats, access_stream, cache_simulate
from .report import Report, ReportRow, emit_report, improvement_table, relative_improvement
from .trace import TraceEvent, TraceRecorder, chrome_trace, emit_trace
from .views import CopyCounter, ViewMode, acquire_view, release

__all__ = [
    "CacheModel", "CacheStats", "access_stream", "cache_simulate",
    "Report", "ReportRow", "emit_report", "improvement_table", "relative_improvement",
    "TraceEvent", "TraceRecorder", "chrome_trace", "emit_trace",
    "CopyCounter", "ViewMode", "acquire_view", "release",
]
