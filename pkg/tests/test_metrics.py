import numpy as np
import pytest

from arnav.metrics import (
    MetricsReport,
    compute_metrics,
    point_segment_distance,
    rows_to_csv,
)
from arnav.sim import FlightLog, StepRecord


def make_log(start, end, steps, status, step_distance=30.0):
    """steps: list of (commanded, true) position pairs."""
    log = FlightLog(
        flight_index=0,
        master_seed=0,
        config_digest="d",
        start=start,
        end=end,
        step_distance=step_distance,
        window=5,
        status=status,
    )
    for k, (cmd, true) in enumerate(steps, start=1):
        log.steps.append(
            StepRecord(
                index=k, angle_deg=0.0, commanded=cmd, true=true,
                altitude=80.0, image_digest="x", inference_ms=1.0,
            )
        )
    return log


def east_log(n, status, last_offset=0.0):
    """n straight eastward steps; optionally push the final commanded point
    off the goal by ``last_offset`` meters."""
    steps = []
    for k in range(1, n + 1):
        p = (0.0, 30.0 * k)
        steps.append((p, p))
    if last_offset:
        steps[-1] = ((last_offset, 30.0 * n), (last_offset, 30.0 * n))
    return make_log((0.0, 0.0), (0.0, 30.0 * n), steps, status)


# -- geometry helper ------------------------------------------------------


def test_point_segment_distance_cases():
    seg = ((0.0, 0.0), (0.0, 100.0))
    assert point_segment_distance((5.0, 50.0), *seg) == pytest.approx(5.0)
    assert point_segment_distance((0.0, -30.0), *seg) == pytest.approx(30.0)  # before start
    assert point_segment_distance((40.0, 130.0), *seg) == pytest.approx(50.0)  # past end
    assert point_segment_distance((3.0, 4.0), (0.0, 0.0), (0.0, 0.0)) == pytest.approx(5.0)


# -- hand-computed fixtures -----------------------------------------------


def test_mre_mrd_truncation_fixture():
    # deviations 0 / 10 / 250 m at 30 m spacing: the 250 m step is excluded,
    # so MRE = mean(0, 10) = 5 and MRD = 2 * 30 = 60
    steps = [
        ((0.0, 30.0), (0.0, 30.0)),
        ((0.0, 60.0), (10.0, 60.0)),
        ((0.0, 90.0), (250.0, 90.0)),
    ]
    log = make_log((0.0, 0.0), (0.0, 300.0), steps, "step_budget")
    rep = compute_metrics([log])
    assert rep.mean_route_error == pytest.approx(5.0)
    assert rep.mean_route_distance == pytest.approx(60.0)


def test_success_fractions():
    logs = [
        east_log(10, "success25"),
        east_log(10, "success25"),
        east_log(10, "success25"),
        east_log(10, "step_budget", last_offset=120.0),
    ]
    rep = compute_metrics(logs)
    assert rep.success_rate_25 == pytest.approx(0.75)
    assert rep.success_rate_50 == pytest.approx(0.75)


def test_sr25_le_sr50_and_band():
    logs = [east_log(10, "success25"), east_log(10, "success50", last_offset=40.0)]
    rep = compute_metrics(logs)
    assert rep.success_rate_25 == pytest.approx(0.5)
    assert rep.success_rate_50 == pytest.approx(1.0)
    assert rep.success_rate_25 <= rep.success_rate_50


def test_mepe_single_success():
    log = east_log(10, "success25", last_offset=12.0)
    rep = compute_metrics([log])
    assert rep.mean_endpoint_error == pytest.approx(12.0)


def test_mepe_absent_without_successes():
    rep = compute_metrics([east_log(10, "step_budget", last_offset=300.0)])
    assert rep.mean_endpoint_error is None
    assert rep.to_row("x")["mepe_m"] == "-"


def test_mepe_excludes_failures():
    logs = [
        east_log(10, "success25", last_offset=10.0),
        east_log(10, "success50", last_offset=40.0),
        east_log(10, "step_budget", last_offset=500.0),
    ]
    rep = compute_metrics(logs)
    assert rep.mean_endpoint_error == pytest.approx(25.0)


def test_sr_ordering_random_campaigns():
    rng = np.random.default_rng(0)
    statuses = ["success25", "success50", "step_budget", "out_of_bounds", "failed"]
    for _ in range(50):
        logs = [
            east_log(5, statuses[rng.integers(0, len(statuses))], last_offset=1.0)
            for _ in range(rng.integers(1, 12))
        ]
        rep = compute_metrics(logs)
        assert rep.success_rate_25 <= rep.success_rate_50 + 1e-12


def test_storage_passthrough_and_empty_error():
    rep = compute_metrics([east_log(3, "success25")], storage_bytes=4096)
    assert rep.storage_bytes == 4096
    with pytest.raises(ValueError):
        compute_metrics([])


def test_csv_row_stable():
    rep = compute_metrics([east_log(4, "success25")], storage_bytes=0)
    a = rows_to_csv([rep.to_row("ours")])
    b = rows_to_csv([rep.to_row("ours")])
    assert a == b
    header = a.splitlines()[0].split(",")
    assert header == MetricsReport.csv_header()
