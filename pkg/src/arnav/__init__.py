"""Angle-regression point-to-point aerial navigation, desk scale.

Subpackages: planar geometry, a numpy autodiff tensor engine, the direction
angle model, a procedural world renderer, the closed-loop flight simulator
with disturbance injection, metric evaluation, baseline navigators, and the
command-line pipeline tying them together.
"""

__version__ = "0.1.0"
