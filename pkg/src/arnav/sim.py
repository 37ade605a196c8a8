"""Closed-loop flight evaluation: disturbance injection, the step loop with
its termination rules, and JSON-lines flight logs.

The loop's central contract: the navigator never observes true positions.
Images are rendered at the true (disturbed) position, but every coordinate
a navigator sees is dead-reckoned from its own commanded steps.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .frames import Frame
from .geometry import DirectionAngle, Position, step
from .tensor.rng import stream
from .world import CameraModel, WorldMap, render

__all__ = [
    "SimConfig",
    "DisturbanceSpec",
    "StepRecord",
    "FlightLog",
    "apply_horizontal_deviation",
    "apply_vertical_deviation",
    "apply_image_effects",
    "run_flight",
]

TERMINAL_STATUSES = ("success25", "success50", "step_budget", "out_of_bounds", "failed")


@dataclass(frozen=True)
class SimConfig:
    step_distance: float = 30.0
    max_steps: int = 250
    success_radii: Tuple[float, float] = (25.0, 50.0)
    ideal_altitude: float = 80.0
    window: int = 5
    deterministic_timing: bool = True

    def __post_init__(self):
        if self.step_distance <= 0:
            raise ValueError("step distance must be positive")
        if not self.success_radii[0] < self.success_radii[1]:
            raise ValueError("success radii must be ordered")


@dataclass(frozen=True)
class DisturbanceSpec:
    """Per-step disturbance magnitudes; all zero means the ideal condition.
    Every effect is deterministic under the flight's seeded rng stream."""

    random_wind_radius: float = 0.0  # uniform in a disc, meters per step
    one_way_wind: Tuple[float, float] = (0.0, 0.0)  # constant (north, east) m
    altitude_jitter: float = 0.0  # +- meters
    cutout_count: int = 0
    cutout_size: int = 0
    rain_density: float = 0.0
    rain_length: int = 6
    snow_density: float = 0.0
    fog_alpha: float = 0.0
    bright_range: Tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        if self.random_wind_radius < 0 or self.altitude_jitter < 0:
            raise ValueError("disturbance magnitudes must be non-negative")
        if not (0.0 <= self.fog_alpha <= 1.0):
            raise ValueError("fog alpha outside [0, 1]")

    @staticmethod
    def none() -> "DisturbanceSpec":
        return DisturbanceSpec()

    @staticmethod
    def standard() -> "DisturbanceSpec":
        """Default disturbed condition: wind plus mixed image corruption."""
        return DisturbanceSpec(
            random_wind_radius=10.0,
            one_way_wind=(0.0, 5.0),
            altitude_jitter=10.0,
            cutout_count=2,
            cutout_size=6,
            rain_density=0.015,
            snow_density=0.01,
            fog_alpha=0.15,
            bright_range=(0.75, 1.3),
        )

    def has_image_effects(self) -> bool:
        return (
            self.cutout_count > 0
            or self.rain_density > 0
            or self.snow_density > 0
            or self.fog_alpha > 0
            or self.bright_range != (1.0, 1.0)
        )


def apply_horizontal_deviation(
    spec: DisturbanceSpec, rng: np.random.Generator
) -> Tuple[float, float]:
    """(north, east) offset in meters for one step: uniform in a disc of the
    configured radius plus the constant one-way wind vector."""
    dn, de = spec.one_way_wind
    if spec.random_wind_radius > 0:
        r = spec.random_wind_radius * math.sqrt(rng.random())
        phi = rng.uniform(0.0, 2.0 * math.pi)
        dn += r * math.sin(phi)
        de += r * math.cos(phi)
    return dn, de


def apply_vertical_deviation(spec: DisturbanceSpec, rng: np.random.Generator) -> float:
    if spec.altitude_jitter > 0:
        return float(rng.uniform(-spec.altitude_jitter, spec.altitude_jitter))
    return 0.0


def _cutout(img: np.ndarray, spec: DisturbanceSpec, rng: np.random.Generator) -> None:
    res = img.shape[-1]
    s = min(spec.cutout_size, res)
    for _ in range(spec.cutout_count):
        i = int(rng.integers(0, res - s + 1))
        j = int(rng.integers(0, res - s + 1))
        img[:, i : i + s, j : j + s] = 0.5


def _streaks(
    img: np.ndarray,
    rng: np.random.Generator,
    density: float,
    length: int,
    angle_deg: float,
    strength: float,
) -> None:
    res = img.shape[-1]
    count = max(1, int(density * res * res))
    di = -math.cos(math.radians(angle_deg))
    dj = math.sin(math.radians(angle_deg))
    for _ in range(count):
        i0 = rng.uniform(0, res)
        j0 = rng.uniform(0, res)
        for t in range(length):
            i = int(i0 + di * t)
            j = int(j0 + dj * t)
            if 0 <= i < res and 0 <= j < res:
                img[:, i, j] += strength * (1.0 - img[:, i, j])


def apply_image_effects(
    image: np.ndarray, spec: DisturbanceSpec, rng: np.random.Generator
) -> np.ndarray:
    """Weather/lighting corruption chain: cutout, rain, snow, fog, then a
    multiplicative brightness factor; output clamped to [0, 1]."""
    img = image.copy()
    if spec.cutout_count > 0 and spec.cutout_size > 0:
        _cutout(img, spec, rng)
    if spec.rain_density > 0:
        _streaks(img, rng, spec.rain_density, spec.rain_length, 20.0, 0.55)
    if spec.snow_density > 0:
        _streaks(img, rng, spec.snow_density, 1, 0.0, 0.85)
    if spec.fog_alpha > 0:
        img = (1.0 - spec.fog_alpha) * img + spec.fog_alpha
    if spec.bright_range != (1.0, 1.0):
        img = img * rng.uniform(*spec.bright_range)
    return np.clip(img, 0.0, 1.0)


@dataclass(frozen=True)
class StepRecord:
    index: int
    angle_deg: float
    commanded: Tuple[float, float]
    true: Tuple[float, float]
    altitude: float
    image_digest: str
    inference_ms: float


@dataclass
class FlightLog:
    flight_index: int
    master_seed: int
    config_digest: str
    start: Tuple[float, float]
    end: Tuple[float, float]
    step_distance: float
    window: int
    steps: List[StepRecord] = field(default_factory=list)
    status: str = ""
    failure: Optional[str] = None

    @property
    def final_commanded(self) -> Position:
        if not self.steps:
            return Position(*self.start)
        return Position(*self.steps[-1].commanded)

    @property
    def final_true(self) -> Position:
        if not self.steps:
            return Position(*self.start)
        return Position(*self.steps[-1].true)

    def final_distance(self) -> float:
        return self.final_commanded.distance_to(Position(*self.end))

    def replay_commanded(self) -> List[Position]:
        """Recompute the commanded trajectory from the angle sequence alone
        (dead-reckoning soundness check)."""
        pos = Position(*self.start)
        out = [pos]
        for rec in self.steps:
            pos = step(pos, DirectionAngle(rec.angle_deg), self.step_distance)
            out.append(pos)
        return out

    # -- serialization ----------------------------------------------------

    def to_jsonl(self) -> str:
        lines = [
            json.dumps(
                {
                    "type": "header",
                    "version": 1,
                    "flight_index": self.flight_index,
                    "master_seed": self.master_seed,
                    "config_digest": self.config_digest,
                    "start": list(self.start),
                    "end": list(self.end),
                    "step_distance": self.step_distance,
                    "window": self.window,
                },
                sort_keys=True,
            )
        ]
        for rec in self.steps:
            d = asdict(rec)
            d["type"] = "step"
            d["commanded"] = list(rec.commanded)
            d["true"] = list(rec.true)
            lines.append(json.dumps(d, sort_keys=True))
        terminal = {
            "type": "terminal",
            "status": self.status,
            "final_commanded": list(
                (self.final_commanded.north, self.final_commanded.east)
            ),
            "final_true": list((self.final_true.north, self.final_true.east)),
            "final_distance": self.final_distance(),
            "steps": len(self.steps),
        }
        if self.failure:
            terminal["failure"] = self.failure
        lines.append(json.dumps(terminal, sort_keys=True))
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_jsonl(text: str) -> "FlightLog":
        lines = [json.loads(l) for l in text.strip().splitlines()]
        head = lines[0]
        if head.get("type") != "header":
            raise ValueError("flight log missing header line")
        log = FlightLog(
            flight_index=head["flight_index"],
            master_seed=head["master_seed"],
            config_digest=head["config_digest"],
            start=tuple(head["start"]),
            end=tuple(head["end"]),
            step_distance=head["step_distance"],
            window=head["window"],
        )
        for line in lines[1:]:
            if line["type"] == "step":
                log.steps.append(
                    StepRecord(
                        index=line["index"],
                        angle_deg=line["angle_deg"],
                        commanded=tuple(line["commanded"]),
                        true=tuple(line["true"]),
                        altitude=line["altitude"],
                        image_digest=line["image_digest"],
                        inference_ms=line["inference_ms"],
                    )
                )
            elif line["type"] == "terminal":
                log.status = line["status"]
                log.failure = line.get("failure")
        return log


def _digest(img: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(img).tobytes()).hexdigest()[:16]


def run_flight(
    navigator,
    world: WorldMap,
    camera: CameraModel,
    start: Position,
    end: Position,
    sim: SimConfig,
    dist: DisturbanceSpec,
    master_seed: int = 0,
    flight_index: int = 0,
    config_digest: str = "",
) -> FlightLog:
    """Fly one closed-loop episode from ``start`` toward ``end``.

    Per step: the navigator predicts an angle from the frame window plus the
    goal frame; the commanded position advances by the step distance; the
    true position is the commanded one plus this step's horizontal deviation;
    the new frame pairs the image rendered at the true position (with image
    effects applied) with the *commanded* position.  The window keeps at most
    ``sim.window`` frames, discarding the earliest.

    Termination: commanded position within the smaller success radius, the
    true position leaving the map, or the step budget.  The terminal status
    upgrades to success50 when the final commanded position lies within the
    larger radius.
    """
    if not (world.contains(start) and world.contains(end)):
        raise ValueError("start/end outside map extent")
    rng = stream(master_seed, "disturbance", flight_index)
    log = FlightLog(
        flight_index=flight_index,
        master_seed=master_seed,
        config_digest=config_digest,
        start=(start.north, start.east),
        end=(end.north, end.east),
        step_distance=sim.step_distance,
        window=sim.window,
    )

    end_frame = Frame(render(world, camera, end, sim.ideal_altitude), end)
    start_frame = Frame(render(world, camera, start, sim.ideal_altitude), start)
    window: List[Frame] = [start_frame]
    commanded = start
    true_pos = start

    tap = getattr(navigator, "true_position_tap", None)
    reason = "step_budget"
    for k in range(1, sim.max_steps + 1):
        if tap is not None:
            tap.position = true_pos
        t0 = time.perf_counter()
        try:
            angle = navigator.next_angle(tuple(window), end_frame)
        except Exception as exc:  # noqa: BLE001 - flight must record any failure
            log.status = "failed"
            log.failure = f"{type(exc).__name__}: {exc}"
            return log
        ms = 0.0 if sim.deterministic_timing else (time.perf_counter() - t0) * 1e3
        commanded = step(commanded, angle, sim.step_distance)
        dn, de = apply_horizontal_deviation(dist, rng)
        true_pos = Position(commanded.north + dn, commanded.east + de)
        altitude = sim.ideal_altitude + apply_vertical_deviation(dist, rng)
        img = render(world, camera, world.clamp(true_pos), altitude)
        img = apply_image_effects(img, dist, rng)
        window.append(Frame(img, commanded))
        if len(window) > sim.window:
            window.pop(0)
        log.steps.append(
            StepRecord(
                index=k,
                angle_deg=angle.degrees,
                commanded=(commanded.north, commanded.east),
                true=(true_pos.north, true_pos.east),
                altitude=altitude,
                image_digest=_digest(img),
                inference_ms=ms,
            )
        )
        if commanded.distance_to(end) <= sim.success_radii[0]:
            reason = "reached"
            break
        if not world.contains(true_pos):
            reason = "out_of_bounds"
            break

    final_d = commanded.distance_to(end)
    if final_d <= sim.success_radii[0]:
        log.status = "success25"
    elif final_d <= sim.success_radii[1]:
        log.status = "success50"
    else:
        log.status = reason if reason != "reached" else "step_budget"
    return log
