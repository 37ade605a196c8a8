import math

import numpy as np
import pytest

from arnav.frames import Frame
from arnav.geometry import DirectionAngle, Position
from arnav.navigators import Navigator, OracleNavigator
from arnav.sim import (
    DisturbanceSpec,
    FlightLog,
    SimConfig,
    apply_horizontal_deviation,
    apply_image_effects,
    apply_vertical_deviation,
    run_flight,
)
from arnav.world import CameraModel, WorldMap


WORLD = WorldMap(seed=13, extent_north=2000.0, extent_east=1500.0)
CAM = CameraModel(resolution=8)


class FixedAngle(Navigator):
    def __init__(self, deg):
        self.deg = deg

    def next_angle(self, window, end):
        return DirectionAngle(self.deg)


class Alternating(Navigator):
    def __init__(self):
        self.flip = False

    def next_angle(self, window, end):
        self.flip = not self.flip
        return DirectionAngle(90.0 if self.flip else -90.0)


class Crashing(Navigator):
    def next_angle(self, window, end):
        raise RuntimeError("sensor dropout")


class WindowSpy(Navigator):
    """Oracle behavior while recording window lengths and contents."""

    def __init__(self):
        self.inner = OracleNavigator()
        self.true_position_tap = self.inner.true_position_tap
        self.lengths = []
        self.end_positions = []

    def next_angle(self, window, end):
        self.lengths.append(len(window))
        self.end_positions.append(end.position)
        return self.inner.next_angle(window, end)


# -- config validation ----------------------------------------------------


def test_sim_config_validation():
    with pytest.raises(ValueError):
        SimConfig(step_distance=0.0)
    with pytest.raises(ValueError):
        SimConfig(success_radii=(50.0, 25.0))
    with pytest.raises(ValueError):
        DisturbanceSpec(random_wind_radius=-1.0)
    with pytest.raises(ValueError):
        DisturbanceSpec(fog_alpha=1.5)


# -- disturbance draws ----------------------------------------------------


def test_zero_spec_draws_nothing():
    rng = np.random.default_rng(0)
    assert apply_horizontal_deviation(DisturbanceSpec.none(), rng) == (0.0, 0.0)
    assert apply_vertical_deviation(DisturbanceSpec.none(), rng) == 0.0


def test_one_way_wind_exact():
    rng = np.random.default_rng(0)
    spec = DisturbanceSpec(one_way_wind=(0.0, 5.0))
    for _ in range(10):
        assert apply_horizontal_deviation(spec, rng) == (0.0, 5.0)


def test_random_wind_disc_statistics():
    # uniform in a disc of radius r: |offset| <= r, mean |offset| = 2r/3
    r = 10.0
    spec = DisturbanceSpec(random_wind_radius=r)
    rng = np.random.default_rng(42)
    mags = []
    for _ in range(100_000):
        dn, de = apply_horizontal_deviation(spec, rng)
        m = math.hypot(dn, de)
        assert m <= r + 1e-12
        mags.append(m)
    assert np.mean(mags) == pytest.approx(2.0 * r / 3.0, rel=0.02)


def test_vertical_jitter_bounds():
    spec = DisturbanceSpec(altitude_jitter=10.0)
    rng = np.random.default_rng(1)
    draws = [apply_vertical_deviation(spec, rng) for _ in range(2000)]
    assert min(draws) >= -10.0 and max(draws) <= 10.0
    assert min(draws) < -5.0 and max(draws) > 5.0


# -- image effects --------------------------------------------------------


def test_effects_empty_spec_identity():
    rng = np.random.default_rng(2)
    img = rng.random((3, 16, 16))
    out = apply_image_effects(img, DisturbanceSpec.none(), rng)
    assert np.array_equal(out, img)


def test_effects_full_fog_is_white():
    rng = np.random.default_rng(3)
    img = rng.random((3, 16, 16))
    out = apply_image_effects(img, DisturbanceSpec(fog_alpha=1.0), rng)
    assert np.array_equal(out, np.ones_like(img))


def test_effects_cutout_pixel_count():
    rng = np.random.default_rng(4)
    img = rng.random((3, 16, 16))
    out = apply_image_effects(img, DisturbanceSpec(cutout_count=1, cutout_size=5), rng)
    changed = np.any(out != img, axis=0)
    assert int(changed.sum()) == 25
    assert np.all(out[:, changed] == 0.5)


def test_effects_bright_deterministic_factor():
    rng = np.random.default_rng(5)
    img = np.full((3, 8, 8), 0.5)
    out = apply_image_effects(img, DisturbanceSpec(bright_range=(1.3, 1.3)), rng)
    assert np.allclose(out, 0.65)
    out2 = apply_image_effects(img, DisturbanceSpec(bright_range=(3.0, 3.0)), rng)
    assert np.all(out2 == 1.0)  # clamped


def test_effects_composed_stay_in_range():
    rng = np.random.default_rng(6)
    img = rng.random((3, 16, 16))
    out = apply_image_effects(img, DisturbanceSpec.standard(), rng)
    assert out.min() >= 0.0 and out.max() <= 1.0
    assert not np.array_equal(out, img)


def test_effects_rain_and_snow_change_pixels():
    rng = np.random.default_rng(7)
    img = np.zeros((3, 16, 16))
    rain = apply_image_effects(img, DisturbanceSpec(rain_density=0.05), rng)
    snow = apply_image_effects(img, DisturbanceSpec(snow_density=0.05), rng)
    assert rain.max() > 0.0 and snow.max() > 0.0


# -- flight loop ----------------------------------------------------------


def flight(nav, start, end, dist=DisturbanceSpec.none(), sim=None, **kw):
    sim = sim or SimConfig(max_steps=250, window=3)
    return run_flight(nav, WORLD, CAM, start, end, sim, dist, **kw)


def test_oracle_straight_flight_hand_simulated():
    # 300 m due east with 30 m steps: exactly 10 steps, then success25
    log = flight(OracleNavigator(), Position(500.0, 500.0), Position(500.0, 800.0))
    assert log.status == "success25"
    assert len(log.steps) == 10
    for k, rec in enumerate(log.steps, start=1):
        assert rec.commanded == pytest.approx((500.0, 500.0 + 30.0 * k))
        assert rec.angle_deg == pytest.approx(0.0)
    assert log.final_distance() == pytest.approx(0.0, abs=1e-9)


def test_fixed_east_runs_out_of_bounds_in_one_step():
    log = flight(FixedAngle(0.0), Position(500.0, 1490.0), Position(1900.0, 100.0))
    assert log.status == "out_of_bounds"
    assert len(log.steps) == 1


def test_alternating_navigator_exhausts_budget():
    log = flight(Alternating(), Position(500.0, 300.0), Position(1800.0, 1200.0))
    assert log.status == "step_budget"
    assert len(log.steps) == 250


def test_success50_band():
    # one step toward a goal 70 m away ends 40 m out: inside 50, outside 25
    sim = SimConfig(max_steps=1, window=3)
    log = flight(FixedAngle(0.0), Position(500.0, 500.0), Position(500.0, 570.0), sim=sim)
    assert log.status == "success50"
    assert log.final_distance() == pytest.approx(40.0)


def test_navigator_exception_marks_failed():
    log = flight(Crashing(), Position(500.0, 500.0), Position(500.0, 800.0))
    assert log.status == "failed"
    assert "sensor dropout" in log.failure


def test_window_law_and_goal_frame():
    spy = WindowSpy()
    log = flight(spy, Position(500.0, 300.0), Position(500.0, 900.0))
    assert log.status == "success25"
    assert max(spy.lengths) == 3  # never exceeds K; goal frame excluded
    assert spy.lengths[:3] == [1, 2, 3]
    assert all(p == Position(500.0, 900.0) for p in spy.end_positions)


def test_flight_determinism_bytewise():
    a = flight(
        OracleNavigator(), Position(300.0, 300.0), Position(1500.0, 1100.0),
        dist=DisturbanceSpec.standard(), master_seed=9, flight_index=2,
    )
    b = flight(
        OracleNavigator(), Position(300.0, 300.0), Position(1500.0, 1100.0),
        dist=DisturbanceSpec.standard(), master_seed=9, flight_index=2,
    )
    assert a.to_jsonl() == b.to_jsonl()


def test_flight_streams_keyed_by_index():
    a = flight(
        OracleNavigator(), Position(300.0, 300.0), Position(1500.0, 1100.0),
        dist=DisturbanceSpec.standard(), master_seed=9, flight_index=0,
    )
    b = flight(
        OracleNavigator(), Position(300.0, 300.0), Position(1500.0, 1100.0),
        dist=DisturbanceSpec.standard(), master_seed=9, flight_index=1,
    )
    assert a.to_jsonl() != b.to_jsonl()


def test_replay_commanded_reproduces_trajectory():
    log = flight(
        OracleNavigator(), Position(300.0, 300.0), Position(1500.0, 1100.0),
        dist=DisturbanceSpec(random_wind_radius=10.0),
    )
    replay = log.replay_commanded()
    assert len(replay) == len(log.steps) + 1
    for p, rec in zip(replay[1:], log.steps):
        assert p.north == pytest.approx(rec.commanded[0], abs=1e-9)
        assert p.east == pytest.approx(rec.commanded[1], abs=1e-9)


def test_true_position_is_commanded_plus_offset():
    log = flight(
        OracleNavigator(), Position(300.0, 300.0), Position(1500.0, 1100.0),
        dist=DisturbanceSpec(random_wind_radius=10.0),
    )
    for rec in log.steps:
        d = math.hypot(rec.true[0] - rec.commanded[0], rec.true[1] - rec.commanded[1])
        assert d <= 10.0 + 1e-9


def test_jsonl_roundtrip():
    log = flight(
        OracleNavigator(), Position(300.0, 300.0), Position(1500.0, 1100.0),
        dist=DisturbanceSpec.standard(), config_digest="abc123",
    )
    text = log.to_jsonl()
    clone = FlightLog.from_jsonl(text)
    assert clone.to_jsonl() == text
    assert clone.status == log.status
    assert clone.config_digest == "abc123"


def test_rejects_endpoints_outside_map():
    with pytest.raises(ValueError):
        flight(OracleNavigator(), Position(-5.0, 300.0), Position(500.0, 800.0))
