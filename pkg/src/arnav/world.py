"""Deterministic procedural world: terrain coloring, nadir-camera rendering,
the position class grid, flight routes, and training-sample extraction.

The terrain is multi-octave hashed value noise over three color channels,
overlaid with a sparse layer of high-contrast landmark blobs so that distinct
places actually look distinct.  Every color is a pure function of
(seed, position); rendering the same view twice is bitwise identical.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .geometry import DirectionAngle, Position, bearing, wrap_degrees
from .tensor.rng import stream

log = logging.getLogger(__name__)

__all__ = [
    "WorldMap",
    "CameraModel",
    "GridClassMap",
    "Route",
    "TrainingRecord",
    "RouteFrames",
    "render",
    "generate_route",
    "make_training_samples",
]


# -- hashing --------------------------------------------------------------

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix(x: np.ndarray) -> np.ndarray:
    x = x.astype(np.uint64, copy=True)
    x ^= x >> np.uint64(30)
    x *= _M1
    x ^= x >> np.uint64(27)
    x *= _M2
    x ^= x >> np.uint64(31)
    return x


def _hash01(seed: int, ix: np.ndarray, iy: np.ndarray, salt: int) -> np.ndarray:
    """Uniform [0,1) from integer lattice coordinates; platform-stable."""
    with np.errstate(over="ignore"):
        h = _mix(
            np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
            ^ (ix.astype(np.uint64) * np.uint64(0x9E3779B97F4A7C15))
            ^ (iy.astype(np.uint64) * np.uint64(0xC2B2AE3D27D4EB4F))
            ^ np.uint64(salt * 0x165667B19E3779F9 & 0xFFFFFFFFFFFFFFFF)
        )
    return (h >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def _smoothstep(t: np.ndarray) -> np.ndarray:
    return t * t * (3.0 - 2.0 * t)


# -- world ---------------------------------------------------------------


@dataclass(frozen=True)
class WorldMap:
    """Immutable procedural map; color_at is pure in (seed, position)."""

    seed: int
    extent_north: float = 5328.0
    extent_east: float = 2300.0
    octaves: int = 4
    base_scale: float = 350.0
    persistence: float = 0.55
    landmark_cell: float = 260.0
    landmark_density: float = 0.75

    def contains(self, p: Position) -> bool:
        return 0.0 <= p.north <= self.extent_north and 0.0 <= p.east <= self.extent_east

    def clamp(self, p: Position) -> Position:
        return Position(
            min(max(p.north, 0.0), self.extent_north),
            min(max(p.east, 0.0), self.extent_east),
        )

    # vectorized terrain color for arrays of north/east coordinates
    def color_at(self, north: np.ndarray, east: np.ndarray) -> np.ndarray:
        north = np.asarray(north, dtype=np.float64)
        east = np.asarray(east, dtype=np.float64)
        out = np.zeros(north.shape + (3,))
        total = 0.0
        for o in range(self.octaves):
            cell = self.base_scale / (2.0 ** o)
            amp = self.persistence ** o
            total += amp
            fx = north / cell
            fy = east / cell
            ix = np.floor(fx).astype(np.int64)
            iy = np.floor(fy).astype(np.int64)
            tx = _smoothstep(fx - ix)
            ty = _smoothstep(fy - iy)
            for ch in range(3):
                salt = o * 8 + ch + 1
                v00 = _hash01(self.seed, ix, iy, salt)
                v10 = _hash01(self.seed, ix + 1, iy, salt)
                v01 = _hash01(self.seed, ix, iy + 1, salt)
                v11 = _hash01(self.seed, ix + 1, iy + 1, salt)
                top = v00 + (v10 - v00) * tx
                bot = v01 + (v11 - v01) * tx
                out[..., ch] += amp * (top + (bot - top) * ty)
        out /= total
        # gentle global color drift, like the large-scale structure real
        # terrain has (climate/soil gradients): it keeps 32-px views of
        # distant regions from aliasing onto each other, which pure hashed
        # noise otherwise does
        out[..., 0] += 0.50 * (north / max(self.extent_north, 1.0) - 0.5)
        out[..., 2] += 0.50 * (east / max(self.extent_east, 1.0) - 0.5)
        out[..., 1] += 0.25 * (
            north / max(self.extent_north, 1.0) - east / max(self.extent_east, 1.0)
        )
        self._add_landmarks(out, north, east)
        return np.clip(out, 0.0, 1.0)

    def _add_landmarks(self, out: np.ndarray, north: np.ndarray, east: np.ndarray) -> None:
        cell = self.landmark_cell
        ci_min = int(np.floor(north.min() / cell)) - 1
        ci_max = int(np.floor(north.max() / cell)) + 1
        cj_min = int(np.floor(east.min() / cell)) - 1
        cj_max = int(np.floor(east.max() / cell)) + 1
        for ci in range(ci_min, ci_max + 1):
            for cj in range(cj_min, cj_max + 1):
                ia = np.asarray(ci, dtype=np.int64)
                ja = np.asarray(cj, dtype=np.int64)
                if _hash01(self.seed, ia, ja, 101) >= self.landmark_density:
                    continue
                cn = (ci + float(_hash01(self.seed, ia, ja, 102))) * cell
                ce = (cj + float(_hash01(self.seed, ia, ja, 103))) * cell
                radius = 14.0 + 38.0 * float(_hash01(self.seed, ia, ja, 104))
                color = np.array(
                    [
                        float(_hash01(self.seed, ia, ja, 105 + k)) ** 0.5
                        for k in range(3)
                    ]
                )
                d2 = (north - cn) ** 2 + (east - ce) ** 2
                w = np.clip(1.0 - d2 / (radius * radius), 0.0, 1.0)
                w = (w * w)[..., None]
                out *= 1.0 - w
                out += w * color


@dataclass(frozen=True)
class CameraModel:
    """Nadir camera: square image whose ground footprint side is
    2 * altitude * tan(fov/2)."""

    fov_deg: float = 60.0
    resolution: int = 32

    def footprint_side(self, altitude: float) -> float:
        return 2.0 * altitude * math.tan(math.radians(self.fov_deg) / 2.0)


def render(
    world: WorldMap, camera: CameraModel, position: Position, altitude: float
) -> np.ndarray:
    """Render the [3, res, res] nadir view at ``position``.  Row 0 is the
    north edge, column index grows eastward.  Samples outside the map are
    clamped to the boundary (with a warning)."""
    if altitude <= 0:
        raise ValueError(f"altitude must be positive, got {altitude}")
    res = camera.resolution
    side = camera.footprint_side(altitude)
    px = side / res
    offsets = (np.arange(res) + 0.5) * px - side / 2.0
    north = position.north + offsets[::-1, None] + np.zeros((1, res))
    east = position.east + offsets[None, :] + np.zeros((res, 1))
    if (
        north.min() < 0
        or east.min() < 0
        or north.max() > world.extent_north
        or east.max() > world.extent_east
    ):
        log.warning(
            "render footprint at (%.1f, %.1f) leaves map extent; clamping samples",
            position.north,
            position.east,
        )
        north = np.clip(north, 0.0, world.extent_north)
        east = np.clip(east, 0.0, world.extent_east)
    colors = world.color_at(north, east)  # [res, res, 3]
    return np.ascontiguousarray(colors.transpose(2, 0, 1))


# -- class grid ----------------------------------------------------------


@dataclass(frozen=True)
class GridClassMap:
    """Row-major partition of the map into rows x cols position classes."""

    rows: int
    cols: int
    extent_north: float
    extent_east: float

    @staticmethod
    def square_for(num_classes: int, world: WorldMap) -> "GridClassMap":
        side = math.isqrt(num_classes)
        if side * side != num_classes:
            raise ValueError(f"class count {num_classes} is not a perfect square")
        return GridClassMap(side, side, world.extent_north, world.extent_east)

    @property
    def num_classes(self) -> int:
        return self.rows * self.cols

    def class_of(self, p: Position) -> int:
        if not (0 <= p.north <= self.extent_north and 0 <= p.east <= self.extent_east):
            raise ValueError(f"position {p} outside map extent")
        # closed-left cells; the far edges fold into the last row/column
        r = min(int(p.north // (self.extent_north / self.rows)), self.rows - 1)
        c = min(int(p.east // (self.extent_east / self.cols)), self.cols - 1)
        return r * self.cols + c

    def cell_center(self, cls: int) -> Position:
        if not (0 <= cls < self.num_classes):
            raise ValueError(f"class {cls} outside [0, {self.num_classes})")
        r, c = divmod(cls, self.cols)
        return Position(
            (r + 0.5) * self.extent_north / self.rows,
            (c + 0.5) * self.extent_east / self.cols,
        )


# -- routes --------------------------------------------------------------


@dataclass(frozen=True)
class Route:
    waypoints: Tuple[Position, ...]
    spacing: float  # mean step spacing in meters

    @property
    def length(self) -> float:
        return sum(
            a.distance_to(b) for a, b in zip(self.waypoints, self.waypoints[1:])
        )

    @property
    def start(self) -> Position:
        return self.waypoints[0]

    @property
    def end(self) -> Position:
        return self.waypoints[-1]


def generate_route(
    world: WorldMap,
    seed: int,
    min_length: float = 5800.0,
    speed_range: Tuple[float, float] = (5.0, 15.0),
    turn_limit_deg: float = 25.0,
    margin: float = 150.0,
) -> Route:
    """Goal-steered bounded-turn walk from a random start to a random far
    goal; one waypoint per second at a speed drawn from ``speed_range``.

    The heading turns toward the goal by at most ``turn_limit_deg`` per step,
    with seeded wander on top, so routes reach their goal while weaving
    around the straight chord.
    """
    span_n = world.extent_north - 2 * margin
    span_e = world.extent_east - 2 * margin
    if span_n <= 0 or span_e <= 0:
        raise ValueError("map extent too small for route margin")
    max_sep = math.hypot(span_n, span_e)
    target_sep = min(min_length, 0.92 * max_sep)
    if max_sep < 200.0:
        raise ValueError("map extent too small for any route")

    rng = stream(seed, "routes")
    start = goal = None
    for _ in range(200):
        s = Position(margin + rng.random() * span_n, margin + rng.random() * span_e)
        g = Position(margin + rng.random() * span_n, margin + rng.random() * span_e)
        if s.distance_to(g) >= target_sep:
            start, goal = s, g
            break
    if start is None:
        # near-diagonal separations need corner placement
        jit = min(120.0, 0.05 * min(span_n, span_e))
        flip = rng.integers(0, 2)
        lo_n, hi_n = margin, world.extent_north - margin
        lo_e, hi_e = margin, world.extent_east - margin
        corners = (
            (Position(lo_n, lo_e), Position(hi_n, hi_e))
            if flip == 0
            else (Position(hi_n, lo_e), Position(lo_n, hi_e))
        )
        start = world.clamp(
            Position(corners[0].north + rng.uniform(0, jit), corners[0].east + rng.uniform(0, jit))
        )
        goal = world.clamp(
            Position(corners[1].north - rng.uniform(0, jit), corners[1].east - rng.uniform(0, jit))
        )
        if start.distance_to(goal) < target_sep:
            raise ValueError(f"cannot place endpoints {target_sep:.0f} m apart")

    # large initial offsets and a varied steering gain keep the heading from
    # being a sufficient statistic for the next direction: a learner has to
    # estimate the goal bearing to predict how the route turns
    heading = bearing(start, goal).degrees + rng.uniform(-100.0, 100.0)
    gain = rng.uniform(0.7, 0.95)
    # deviations from the steer-toward-goal law are mostly white per-step
    # noise: a low-frequency wander would leave its phase readable in a
    # history window, and a policy fit to such labels replays the wander in
    # closed loop without the centering term that kept real routes on goal
    wander_amp = rng.uniform(2.0, 6.0)
    wander_period = rng.uniform(25.0, 60.0)
    wander_phase = rng.uniform(0.0, 2 * math.pi)
    noise_deg = rng.uniform(8.0, 14.0)

    # arrival radius must exceed the tightest turn circle the walk can fly
    arrive = max(30.0, 1.3 * speed_range[1] / (2.0 * math.sin(math.radians(turn_limit_deg) / 2.0)))
    pts = [start]
    pos = start
    length = 0.0
    t = 0
    recover_side = 0.0
    center = Position(world.extent_north / 2.0, world.extent_east / 2.0)
    while True:
        t += 1
        dist_goal = pos.distance_to(goal)
        if dist_goal <= arrive and length >= min_length:
            break
        if t > 6000:
            raise ValueError("route walk failed to terminate")
        target = goal
        # burn extra length near the goal if the walk would arrive short
        deficit = min_length - (length + dist_goal)
        if dist_goal <= arrive and deficit > 0:
            target = center
        # occasional sharp off-course excursions: the following waypoints
        # steer back toward the goal, producing training windows where the
        # recent heading is wrong and only the goal direction explains the
        # labels — the same situation a disturbed closed-loop flight is in
        if dist_goal > 150.0 and rng.random() < 1.0 / 40.0:
            heading = wrap_degrees(
                heading + rng.choice([-1.0, 1.0]) * rng.uniform(70.0, 150.0)
            )
        err = wrap_degrees(bearing(pos, target).degrees - heading)
        # committed recovery turn: when the target is far off-heading the two
        # turn directions are nearly symmetric, and averaging over both (as a
        # squared-error fit to these labels would) yields "fly straight" —
        # so pick one side and hold it until roughly realigned, which a
        # learner can both infer (error sign) and continue (history curvature)
        if recover_side == 0.0 and abs(err) > 100.0:
            recover_side = 1.0 if err >= 0.0 else -1.0
        if abs(err) < 60.0:
            recover_side = 0.0
        if recover_side != 0.0:
            turn = recover_side * turn_limit_deg
        else:
            turn = max(-turn_limit_deg, min(turn_limit_deg, gain * err))
        turn += wander_amp * math.sin(2 * math.pi * t / wander_period + wander_phase)
        turn += rng.normal(0.0, noise_deg)
        heading = wrap_degrees(
            heading + max(-turn_limit_deg, min(turn_limit_deg, turn))
        )
        spacing = rng.uniform(*speed_range)
        cand = Position(
            pos.north + spacing * math.sin(math.radians(heading)),
            pos.east + spacing * math.cos(math.radians(heading)),
        )
        # steer back inside the map instead of clipping the point; the hard
        # boundary is tighter than the endpoint-placement margin so a goal
        # near the margin stays reachable
        hard = min(margin, 60.0)
        if not (
            hard <= cand.north <= world.extent_north - hard
            and hard <= cand.east <= world.extent_east - hard
        ):
            heading = bearing(pos, center).degrees
            cand = Position(
                pos.north + spacing * math.sin(math.radians(heading)),
                pos.east + spacing * math.cos(math.radians(heading)),
            )
        length += pos.distance_to(cand)
        pos = cand
        pts.append(pos)
    mean_spacing = length / (len(pts) - 1)
    return Route(tuple(pts), mean_spacing)


# -- training samples ----------------------------------------------------


@dataclass(frozen=True)
class TrainingRecord:
    """One supervised window: ``history_len`` frames ending at ``last_index``
    plus the route's end frame."""

    last_index: int
    history_len: int
    angle_deg: float
    current_class: int
    next_class: int


@dataclass
class RouteFrames:
    """Rendered frames for one route plus its window records.  Windows index
    into the shared frame arrays, so each waypoint is rendered once."""

    images: np.ndarray  # [N, 3, res, res]
    positions: np.ndarray  # [N, 2] (north, east)
    end_image: np.ndarray  # [3, res, res]
    end_position: np.ndarray  # [2]
    records: List[TrainingRecord]
    altitudes: np.ndarray  # [N]

    def window(self, rec: TrainingRecord):
        lo = rec.last_index - rec.history_len + 1
        hi = rec.last_index + 1
        return self.images[lo:hi], self.positions[lo:hi]


def make_training_samples(
    world: WorldMap,
    route: Route,
    history_len: int,
    camera: CameraModel,
    grid: GridClassMap,
    seed: int,
    altitude_range: Tuple[float, float] = (60.0, 100.0),
    ideal_altitude: float = 80.0,
    include_partial: bool = False,
    full_stride: int = 1,
    partial_stride: int = 3,
    image_effects=None,
    effect_rng: Optional[np.random.Generator] = None,
) -> RouteFrames:
    """Render a route and cut supervised windows.

    Full windows: for each waypoint t with a complete history of
    ``history_len`` frames and a successor, the label angle is the bearing to
    the next waypoint, and the class labels are the grid cells of the current
    and next waypoints.  With ``include_partial``, shorter histories
    (1..history_len-1) are additionally cut at a stride, matching the
    variable-length windows the closed-loop evaluator produces early in a
    flight.

    ``image_effects`` optionally post-processes each rendered history image
    (weather-style corruption for augmented routes).
    """
    wps = route.waypoints
    n = len(wps)
    if n < history_len + 2:
        raise ValueError(f"route too short: {n} waypoints for history {history_len}")
    alt_rng = stream(seed, "altitude")
    altitudes = alt_rng.uniform(altitude_range[0], altitude_range[1], size=n)
    images = np.stack(
        [render(world, camera, wp, float(a)) for wp, a in zip(wps, altitudes)]
    )
    if image_effects is not None:
        for i in range(n):
            images[i] = image_effects(images[i], effect_rng)
    positions = np.array([[wp.north, wp.east] for wp in wps])
    end_image = render(world, camera, wps[-1], ideal_altitude)

    records: List[TrainingRecord] = []
    for t in range(history_len - 1, n - 1, full_stride):
        records.append(
            TrainingRecord(
                last_index=t,
                history_len=history_len,
                angle_deg=bearing(wps[t], wps[t + 1]).degrees,
                current_class=grid.class_of(wps[t]),
                next_class=grid.class_of(wps[t + 1]),
            )
        )
    if include_partial:
        part_rng = stream(seed, "data_order")
        for j, t in enumerate(range(0, n - 1, partial_stride)):
            # half the partial windows are single frames: with no motion
            # history the only route to a correct angle is relating the
            # current view to the goal view, which is exactly the skill a
            # disturbed closed-loop flight needs most
            if j % 2 == 0:
                h = 1
            else:
                h = int(part_rng.integers(1, history_len))
            if t - h + 1 < 0:
                h = t + 1
            records.append(
                TrainingRecord(
                    last_index=t,
                    history_len=h,
                    angle_deg=bearing(wps[t], wps[t + 1]).degrees,
                    current_class=grid.class_of(wps[t]),
                    next_class=grid.class_of(wps[t + 1]),
                )
            )
    return RouteFrames(
        images=images,
        positions=positions,
        end_image=end_image,
        end_position=np.array([wps[-1].north, wps[-1].east]),
        records=records,
        altitudes=altitudes,
    )
