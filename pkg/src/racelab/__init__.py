"""racelab: a desk-scale drone-racing control laboratory.

Quadrotor simulation, race-track geometry, minimum-time proxy objectives,
a receding-horizon optimizer, a from-scratch policy-gradient trainer, and
a benchmark harness comparing the approaches under model mismatch.
"""

__version__ = "0.1.0"

from .dynamics import Command, DelayLine, QuadParams, QuadState, simulate_closed_loop
from .track import Gate, RaceProgress, Track, load_track

__all__ = [
    "Command",
    "DelayLine",
    "Gate",
    "QuadParams",
    "QuadState",
    "RaceProgress",
    "Track",
    "load_track",
    "simulate_closed_loop",
    "__version__",
]
