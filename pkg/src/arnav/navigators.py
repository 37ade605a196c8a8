"""Navigation policies evaluated in the closed-loop simulator.

Everything except the oracle works purely from images and dead-reckoned
coordinates.  The oracle exists to validate the simulator itself: the flight
loop feeds it the true position through a tap that no other navigator has.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .frames import Frame
from .geometry import DirectionAngle, Position, bearing
from .model import DirectionModel, FrameClassifier
from .world import CameraModel, GridClassMap, WorldMap, render

__all__ = [
    "Navigator",
    "TruePositionTap",
    "OracleNavigator",
    "ModelNavigator",
    "ClassifyNavigator",
    "MatchNavigator",
]


class Navigator(ABC):
    @abstractmethod
    def next_angle(self, window: Sequence[Frame], end: Frame) -> DirectionAngle:
        """Direction command given the recent frame window and the goal frame."""

    def declared_storage_bytes(self) -> int:
        """Bytes of pre-flight map-derived reference data carried on board.
        Model weights do not count; stored reference imagery/embeddings do."""
        return 0


class TruePositionTap:
    """Mutable cell the simulator writes the true position into before each
    decision.  Only the oracle is constructed with one."""

    def __init__(self):
        self.position: Optional[Position] = None


class OracleNavigator(Navigator):
    """Knows the true position (via the tap) and heads straight for the goal."""

    def __init__(self):
        self.true_position_tap = TruePositionTap()

    def next_angle(self, window: Sequence[Frame], end: Frame) -> DirectionAngle:
        pos = self.true_position_tap.position
        if pos is None:
            raise RuntimeError("oracle tap was never written")
        return bearing(pos, end.position)


class ModelNavigator(Navigator):
    """The learned direction-angle policy: one forward pass per step, no
    stored reference data."""

    def __init__(self, model: DirectionModel):
        self.model = model

    def next_angle(self, window: Sequence[Frame], end: Frame) -> DirectionAngle:
        k = self.model.config.history_len
        return self.model.predict_angle(list(window)[-k:], end)


def _bearing_or_fallback(est: Position, window: Sequence[Frame], goal: Position) -> DirectionAngle:
    # A position estimate can coincide with the goal (same grid cell / same
    # matched landmark); fall back to dead-reckoned bearing in that case.
    if math.hypot(goal.north - est.north, goal.east - est.east) < 1e-9:
        return bearing(window[-1].position, goal)
    return bearing(est, goal)


class ClassifyNavigator(Navigator):
    """Two-stage baseline: localize the current frame to a grid cell, then
    fly the bearing from that cell's center toward the goal."""

    def __init__(self, classifier: FrameClassifier, grid: GridClassMap):
        self.classifier = classifier
        self.grid = grid

    def next_angle(self, window: Sequence[Frame], end: Frame) -> DirectionAngle:
        cls = self.classifier.predict_class(window[-1].image)
        est = self.grid.cell_center(cls)
        return _bearing_or_fallback(est, window, end.position)


class MatchNavigator(Navigator):
    """Two-stage baseline with stored reference embeddings: candidate points
    are spaced evenly along the start-goal chord, interior ones staggered to
    alternating sides of a corridor, each with an embedding of the clean
    nadir view; the current frame is matched to the nearest embedding and
    the matched point taken as the position estimate."""

    def __init__(
        self,
        classifier: FrameClassifier,
        world: WorldMap,
        camera: CameraModel,
        start: Position,
        goal: Position,
        candidates: int = 25,
        altitude: float = 80.0,
        corridor: float = 120.0,
    ):
        if candidates < 2:
            raise ValueError("need at least two candidate points")
        self.classifier = classifier
        self.goal = goal
        self.points: List[Position] = []
        chord = math.hypot(goal.north - start.north, goal.east - start.east)
        if chord > 0:
            perp = ((goal.east - start.east) / chord, -(goal.north - start.north) / chord)
        else:
            perp = (0.0, 0.0)
        images = []
        for i in range(candidates):
            t = i / (candidates - 1)
            # endpoints sit on the chord; interior candidates zigzag across it
            off = 0.0 if i in (0, candidates - 1) else (corridor / 2.0) * (-1.0) ** i
            p = Position(
                start.north + t * (goal.north - start.north) + off * perp[0],
                start.east + t * (goal.east - start.east) + off * perp[1],
            )
            self.points.append(p)
            images.append(render(world, camera, world.clamp(p), altitude))
        self.embeddings = classifier.embed(np.stack(images))  # [N, d_img]

    def declared_storage_bytes(self) -> int:
        return int(self.embeddings.size * self.embeddings.itemsize)

    def next_angle(self, window: Sequence[Frame], end: Frame) -> DirectionAngle:
        if len(window) == 1:
            self._last: Optional[DirectionAngle] = None
        q = self.classifier.embed(window[-1].image[None])[0]
        idx = int(np.argmin(np.sum((self.embeddings - q) ** 2, axis=1)))
        est = self.points[idx]
        if math.hypot(self.goal.north - est.north, self.goal.east - est.east) < 1e-9:
            # matched the goal candidate itself: the estimate carries no
            # direction, so hold the previous command (or, on the very first
            # step, fly the chord from the known start)
            if getattr(self, "_last", None) is None:
                self._last = bearing(window[-1].position, self.goal)
            return self._last
        self._last = bearing(est, self.goal)
        return self._last
