"""Planar navigation geometry: positions, direction angles and their
sine/cosine encoding, and unit-displacement accumulation.

Conventions (everything else in the package builds on these):

- Positions are (north, east) in meters.
- A direction angle of 0 deg points due east; angles grow counterclockwise
  (90 deg = north) and live in the half-open interval (-180, 180].
- Stepping a distance d along angle a moves by (sin(a)*d, cos(a)*d) in
  (north, east) order, so the two conventions agree.

All functions are pure and operate on immutable values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Sequence

__all__ = [
    "Position",
    "DirectionAngle",
    "SinCosVec",
    "Displacement",
    "wrap_degrees",
    "angle_from_sincos",
    "sincos_from_angle",
    "bearing",
    "step",
    "displacement_sequence",
]


def wrap_degrees(deg: float) -> float:
    """Wrap an angle in degrees into (-180, 180]."""
    wrapped = math.fmod(deg, 360.0)
    if wrapped <= -180.0:
        wrapped += 360.0
    elif wrapped > 180.0:
        wrapped -= 360.0
    # fmod(-180.0, 360) is -180.0 exactly; map it to +180
    if wrapped == -180.0:
        wrapped = 180.0
    return wrapped


@dataclass(frozen=True)
class Position:
    """A planar position in meters, ordered (north, east)."""

    north: float
    east: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.north) and math.isfinite(self.east)):
            raise ValueError(f"non-finite position ({self.north}, {self.east})")

    def distance_to(self, other: "Position") -> float:
        return math.hypot(other.north - self.north, other.east - self.east)


@dataclass(frozen=True)
class DirectionAngle:
    """A navigation command angle in degrees, in (-180, 180], 0 = east,
    counterclockwise positive."""

    degrees: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.degrees):
            raise ValueError(f"non-finite angle {self.degrees}")
        if not (-180.0 < self.degrees <= 180.0):
            raise ValueError(f"angle {self.degrees} outside (-180, 180]")

    @staticmethod
    def wrapped(degrees: float) -> "DirectionAngle":
        return DirectionAngle(wrap_degrees(degrees))

    @property
    def radians(self) -> float:
        return math.radians(self.degrees)


@dataclass(frozen=True)
class SinCosVec:
    """Redundant (sin, cos) encoding of a direction angle.

    Components may lie outside [-1, 1]; the decode below is invariant to a
    positive common scale, so out-of-range model outputs still decode to a
    valid angle.
    """

    s: float
    c: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.s) and math.isfinite(self.c)):
            raise ValueError(f"non-finite sincos ({self.s}, {self.c})")


@dataclass(frozen=True)
class Displacement:
    """A (north, east) displacement; before accumulation either zero or
    unit-norm."""

    dn: float
    de: float


def angle_from_sincos(v: SinCosVec) -> DirectionAngle:
    """Decode a (sin, cos) vector to a direction angle in (-180, 180].

    Defined via the two-argument arctangent, which coincides with the
    quadrant-corrected single-argument arctangent wherever cos != 0 and
    removes the cos = 0 singularity.
    """
    if v.s == 0.0 and v.c == 0.0:
        raise ValueError("direction undefined for zero sincos vector")
    deg = math.degrees(math.atan2(v.s, v.c))
    return DirectionAngle(wrap_degrees(deg))


def sincos_from_angle(a: DirectionAngle) -> SinCosVec:
    """Encode an angle as its (sin, cos) pair."""
    r = a.radians
    return SinCosVec(math.sin(r), math.cos(r))


def bearing(origin: Position, target: Position) -> DirectionAngle:
    """Direction angle pointing from ``origin`` to ``target``."""
    dn = target.north - origin.north
    de = target.east - origin.east
    if dn == 0.0 and de == 0.0:
        raise ValueError("bearing undefined for coincident points")
    return DirectionAngle(wrap_degrees(math.degrees(math.atan2(dn, de))))


def step(p: Position, a: DirectionAngle, d: float) -> Position:
    """Advance ``p`` by distance ``d`` along angle ``a``."""
    if d <= 0.0:
        raise ValueError(f"step distance must be positive, got {d}")
    r = a.radians
    return Position(p.north + math.sin(r) * d, p.east + math.cos(r) * d)


def displacement_sequence(
    positions: Sequence[Position], include_end: bool = False
) -> List[Displacement]:
    """Per-frame accumulated unit displacements for a position history.

    Element k (0-based, k < K-1) starts as the unit-normalized difference to
    the next position; the last history element starts at zero.  Elements are
    then prefix-summed in ascending order.  When ``include_end`` is set an
    extra element for the goal frame is appended; it starts at zero and
    receives the same running sum as the last history element.
    """
    k_count = len(positions)
    if k_count == 0:
        raise ValueError("empty position history")
    raw: List[List[float]] = []
    for k in range(k_count - 1):
        dn = positions[k + 1].north - positions[k].north
        de = positions[k + 1].east - positions[k].east
        norm = math.hypot(dn, de)
        if norm == 0.0:
            raise ValueError(f"duplicate consecutive positions at index {k}")
        raw.append([dn / norm, de / norm])
    raw.append([0.0, 0.0])
    for k in range(1, k_count):
        raw[k][0] += raw[k - 1][0]
        raw[k][1] += raw[k - 1][1]
    if include_end:
        raw.append([raw[k_count - 1][0], raw[k_count - 1][1]])
    return [Displacement(dn, de) for dn, de in raw]
