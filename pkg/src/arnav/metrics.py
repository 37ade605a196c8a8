"""Campaign metrics over a set of flight logs.

All distance-based route metrics are measured against the ideal route: the
straight chord from the flight's start to its goal.  True (disturbed)
positions are used for deviation metrics; success is judged on the commanded
trajectory, mirroring the flight loop's own termination rules.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

from .sim import FlightLog

__all__ = ["MetricsReport", "point_segment_distance", "compute_metrics"]

DEVIATION_CUTOFF = 200.0


def point_segment_distance(p, a, b) -> float:
    """Distance from point ``p`` to segment ``a``--``b`` (each (north, east))."""
    pn, pe = p
    an, ae = a
    bn, be = b
    vn, ve = bn - an, be - ae
    L2 = vn * vn + ve * ve
    if L2 == 0.0:
        return math.hypot(pn - an, pe - ae)
    t = ((pn - an) * vn + (pe - ae) * ve) / L2
    t = min(1.0, max(0.0, t))
    return math.hypot(pn - (an + t * vn), pe - (ae + t * ve))


@dataclass(frozen=True)
class MetricsReport:
    flights: int
    success_rate_25: float
    success_rate_50: float
    mean_endpoint_error: Optional[float]  # over flights that reached the goal
    mean_route_error: float  # pooled per-step deviation from the chord
    mean_route_distance: float  # commanded distance flown before cutoff
    storage_bytes: int
    mean_inference_ms: float

    def to_row(self, label: str) -> dict:
        fmt = lambda v: "-" if v is None else f"{v:.3f}"
        return {
            "navigator": label,
            "flights": str(self.flights),
            "sr25_pct": f"{100.0 * self.success_rate_25:.1f}",
            "sr50_pct": f"{100.0 * self.success_rate_50:.1f}",
            "mepe_m": fmt(self.mean_endpoint_error),
            "mre_m": fmt(self.mean_route_error),
            "mrd_m": fmt(self.mean_route_distance),
            "storage_bytes": str(self.storage_bytes),
            "mean_inference_ms": f"{self.mean_inference_ms:.3f}",
        }

    @staticmethod
    def csv_header() -> List[str]:
        return [
            "navigator",
            "flights",
            "sr25_pct",
            "sr50_pct",
            "mepe_m",
            "mre_m",
            "mrd_m",
            "storage_bytes",
            "mean_inference_ms",
        ]


def rows_to_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=MetricsReport.csv_header(), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()


def compute_metrics(logs: Sequence[FlightLog], storage_bytes: int = 0) -> MetricsReport:
    """Aggregate one navigator's campaign.

    Per flight, steps are included up to (and excluding) the first whose true
    position deviates more than 200 m from the chord; the pooled mean of the
    included deviations is the mean route error, and the mean over flights of
    step distance times included step count is the mean route distance.
    """
    if not logs:
        raise ValueError("no flight logs")
    n = len(logs)
    s25 = sum(1 for log in logs if log.status == "success25")
    s50 = s25 + sum(1 for log in logs if log.status == "success50")
    endpoint_errors = [
        log.final_distance() for log in logs if log.status in ("success25", "success50")
    ]
    deviations: List[float] = []
    route_distances: List[float] = []
    ms_values: List[float] = []
    for log in logs:
        included = 0
        for rec in log.steps:
            d = point_segment_distance(rec.true, log.start, log.end)
            if d > DEVIATION_CUTOFF:
                break
            deviations.append(d)
            included += 1
            ms_values.append(rec.inference_ms)
        route_distances.append(log.step_distance * included)
    return MetricsReport(
        flights=n,
        success_rate_25=s25 / n,
        success_rate_50=s50 / n,
        mean_endpoint_error=(
            sum(endpoint_errors) / len(endpoint_errors) if endpoint_errors else None
        ),
        mean_route_error=sum(deviations) / len(deviations) if deviations else 0.0,
        mean_route_distance=sum(route_distances) / len(route_distances),
        storage_bytes=storage_bytes,
        mean_inference_ms=sum(ms_values) / len(ms_values) if ms_values else 0.0,
    )
