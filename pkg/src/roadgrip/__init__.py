"""Collaborative road friction estimation at desk scale.

Simulated instrumented vehicles traverse parameterized road sections, a
kinematic observer recovers sideslip from noisy on-board signals, compact
statistical summaries feed a gradient-boosted regressor, and roadside units
aggregate per-vehicle estimates into consensus friction intervals.
"""

__version__ = "0.1.0"
