"""Run instrumentation and CSV reports."""
from __future__ import annotations

import csv
import math
import sys
import time
import tracemalloc
from dataclasses import dataclass, field

from .spectral import explicit_error

COLUMNS = ("algorithm", "n", "rank", "tol", "block", "power", "passes", "error", "indicator", "seconds", "bytes")


@dataclass
class RunReport:
    algorithm: str
    n: int
    rank: int
    achieved_relative_error: float
    error_indicator: float
    passes: int
    wall_time: float
    peak_bytes: int
    parameters: dict = field(default_factory=dict)
    norm_sq: float | None = None
    terminated_by: str = ""

    @property
    def relative_indicator(self) -> float | None:
        """``sqrt(E) / ||A||_F``, or None when the indicator is not tracked."""
        if self.error_indicator == -1.0 or not self.norm_sq:
            return None
        return math.sqrt(max(self.error_indicator, 0.0) / self.norm_sq)

    def row(self) -> dict:
        ind = self.relative_indicator
        p = self.parameters
        return {
            "algorithm": self.algorithm,
            "n": self.n,
            "rank": self.rank,
            "tol": _fmt(p.get("tol")),
            "block": _fmt(p.get("block")),
            "power": _fmt(p.get("power")),
            "passes": self.passes,
            "error": repr(float(self.achieved_relative_error)),
            "indicator": "" if ind is None else repr(ind),
            "seconds": f"{self.wall_time:.6f}",
            "bytes": self.peak_bytes,
        }


def _fmt(v):
    if v is None:
        return ""
    return repr(v) if isinstance(v, float) else str(v)


def measure(algorithm: str, func, A, parameters: dict | None = None, frob_sq: float | None = None):
    """Run ``func()`` (returning a QB factorization) with timing and peak-allocation tracking.

    Peak bytes come from ``tracemalloc`` and only cover Python/numpy allocations.
    """
    started = tracemalloc.is_tracing()
    if not started:
        tracemalloc.start()
    tracemalloc.reset_peak()
    t0 = time.perf_counter()
    f = func()
    elapsed = time.perf_counter() - t0
    peak = tracemalloc.get_traced_memory()[1]
    if not started:
        tracemalloc.stop()
    qb = f.as_qb() if hasattr(f, "as_qb") else f
    if frob_sq is None:
        from .kernel import frob_norm_sq
        frob_sq = frob_norm_sq(A.data if hasattr(A, "data") else A)
    err = explicit_error(A, qb)
    rel = err / math.sqrt(frob_sq) if frob_sq > 0 else 0.0
    report = RunReport(
        algorithm=algorithm,
        n=qb.shape[1],
        rank=qb.rank,
        achieved_relative_error=rel,
        error_indicator=qb.error_indicator,
        passes=qb.passes,
        wall_time=elapsed,
        peak_bytes=peak,
        parameters=dict(parameters or {}),
        norm_sq=frob_sq,
        terminated_by=getattr(qb.terminated_by, "value", str(qb.terminated_by)),
    )
    return f, report


def emit_report(reports, path=None) -> None:
    """Write reports as CSV (header always present); ``path=None`` or ``'-'`` writes to stdout."""
    if path is None or str(path) == "-":
        _write(reports, sys.stdout)
        return
    with open(path, "w", newline="") as fh:
        _write(reports, fh)


def _write(reports, fh):
    w = csv.DictWriter(fh, fieldnames=COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in reports:
        w.writerow(r.row())
