"""The observation unit shared by the model, simulator and navigators."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Position

__all__ = ["Frame"]


@dataclass(frozen=True)
class Frame:
    """One observation: a rendered [3, H, W] image in [0,1] plus the planar
    position it is *believed* to be at.  In closed-loop flight the position
    is dead-reckoned from commanded steps, never the true disturbed one."""

    image: np.ndarray
    position: Position

    def __post_init__(self):
        if self.image.ndim != 3 or self.image.shape[0] != 3:
            raise ValueError(f"expected [3, H, W] image, got {self.image.shape}")
