"""Race-track geometry, gate-passing detection, and lap accounting.

A track is an ordered list of rectangular gates. The gate normal is the
body x-axis of its orientation quaternion; the opening spans the body y
axis (width) and z axis (height). Two built-in 7-gate tracks are embedded:
"splits" (vertically stacked gate pair requiring a split-S) and "marv"
(power loops, ladder, hairpin).
"""

from __future__ import annotations

import configparser
import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .quatmath import quat_normalize, quat_to_rot

DEFAULT_GATE_DEPTH = 0.2
DEFAULT_GATE_SIDE = 1.5
DEFAULT_FRAME_MARGIN = 0.15
DEFAULT_ARENA = (35.0, 35.0, 10.0)
START_BOX_HALF = 0.5


class TrackFormatError(ValueError):
    """Track file failed to parse or validate."""


class Transition(enum.Enum):
    NONE = "none"
    PASSED = "passed"
    HIT_FRAME = "hit_frame"


class Terminal(enum.Enum):
    RUNNING = "running"
    FINISHED = "finished"
    CRASHED = "crashed"


@dataclass(frozen=True)
class Gate:
    center: np.ndarray
    orientation: np.ndarray        # unit quaternion (w, x, y, z)
    width: float = DEFAULT_GATE_SIDE
    height: float = DEFAULT_GATE_SIDE
    depth: float = DEFAULT_GATE_DEPTH
    frame_margin: float = DEFAULT_FRAME_MARGIN

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        object.__setattr__(
            self, "orientation", quat_normalize(np.asarray(self.orientation, dtype=float))
        )
        if self.width <= 0 or self.height <= 0:
            raise TrackFormatError("gate opening dimensions must be positive")

    @property
    def rotation(self) -> np.ndarray:
        return quat_to_rot(self.orientation)

    @property
    def normal(self) -> np.ndarray:
        return self.rotation[:, 0]

    @property
    def lateral(self) -> np.ndarray:
        return self.rotation[:, 1]

    @property
    def vertical(self) -> np.ndarray:
        return self.rotation[:, 2]

    def corners(self) -> np.ndarray:
        """Four opening corners, shape (4, 3), counterclockwise from (+y, +z)."""
        hw, hh = 0.5 * self.width, 0.5 * self.height
        offsets = np.array([[hw, hh], [-hw, hh], [-hw, -hh], [hw, -hh]])
        return self.center + offsets[:, 0:1] * self.lateral + offsets[:, 1:2] * self.vertical


@dataclass(frozen=True)
class Track:
    name: str
    gates: tuple[Gate, ...]
    laps_required: int = 1
    start_center: np.ndarray | None = None
    start_half_extent: float = START_BOX_HALF
    arena: tuple[float, float, float] = DEFAULT_ARENA

    def __post_init__(self):
        if len(self.gates) == 0:
            raise TrackFormatError("track needs at least one gate")
        for i in range(1, len(self.gates)):
            if np.allclose(self.gates[i].center, self.gates[i - 1].center):
                raise TrackFormatError(f"gates {i} and {i + 1} share a center")
        if self.laps_required < 1:
            raise TrackFormatError("laps_required must be >= 1")
        if self.start_center is None:
            # default start: midway along the closing segment into gate 1
            mid = 0.5 * (self.gates[-1].center + self.gates[0].center)
            object.__setattr__(self, "start_center", mid)
        else:
            object.__setattr__(
                self, "start_center", np.asarray(self.start_center, dtype=float)
            )

    @property
    def n_gates(self) -> int:
        return len(self.gates)

    def gate_centers(self) -> np.ndarray:
        return np.array([g.center for g in self.gates])

    def segment_midpoints(self) -> np.ndarray:
        """Midpoints between consecutive gate centers, wrapping at the end."""
        c = self.gate_centers()
        return 0.5 * (c + np.roll(c, -1, axis=0))

    def in_arena(self, p: np.ndarray) -> bool:
        ax, ay, az = self.arena
        return bool(abs(p[0]) <= ax / 2 and abs(p[1]) <= ay / 2 and p[2] <= az)

    def with_laps(self, laps: int) -> "Track":
        return Track(self.name, self.gates, laps, self.start_center,
                     self.start_half_extent, self.arena)


@dataclass
class RaceProgress:
    """Mutable per-run race bookkeeping: which gate is targeted next, laps
    completed, recorded pass events, and the terminal status."""

    n_gates: int
    laps_required: int = 1
    t_start: float = 0.0
    next_gate_index: int = 0
    laps_done: int = 0
    gate_pass_events: list = field(default_factory=list)  # (t, gate_index, margin)
    terminal: Terminal = Terminal.RUNNING
    crash_reason: str | None = None
    crash_time: float | None = None
    frame_hits: int = 0

    @property
    def running(self) -> bool:
        return self.terminal is Terminal.RUNNING


def check_transition(p_prev: np.ndarray, p_curr: np.ndarray, gate: Gate):
    """Classify the segment p_prev -> p_curr against one gate.

    Returns (Transition.PASSED, margin) when the segment crosses the gate
    plane inside the opening, margin being the distance from the crossing
    point to the nearest opening edge. Crossings outside the opening but
    within frame_margin of it return (Transition.HIT_FRAME, 0.0); anything
    else is (Transition.NONE, 0.0).
    """
    n = gate.normal
    s_prev = float(n @ (p_prev - gate.center))
    s_curr = float(n @ (p_curr - gate.center))
    # count a crossing when the segment ends on or beyond the plane, never
    # when it merely starts there (avoids double counting across steps)
    crossed = (s_prev < 0.0 < s_curr) or (s_prev > 0.0 > s_curr) or (
        s_prev != 0.0 and s_curr == 0.0
    )
    if not crossed:
        return Transition.NONE, 0.0
    frac = s_prev / (s_prev - s_curr)
    hit = p_prev + frac * (p_curr - p_prev)
    rel = hit - gate.center
    u = float(gate.lateral @ rel)
    v = float(gate.vertical @ rel)
    du = abs(u) - 0.5 * gate.width
    dv = abs(v) - 0.5 * gate.height
    if du <= 0.0 and dv <= 0.0:
        return Transition.PASSED, float(min(-du, -dv))
    # distance from the crossing point to the opening rectangle
    outside = float(np.hypot(max(du, 0.0), max(dv, 0.0)))
    if outside <= gate.frame_margin:
        return Transition.HIT_FRAME, 0.0
    return Transition.NONE, 0.0


def update_progress(progress: RaceProgress, p_prev: np.ndarray, p_curr: np.ndarray,
                    track: Track, t: float) -> RaceProgress:
    """Advance race bookkeeping by one step ending at time t.

    Only the current target gate is checked. Ground contact, leaving the
    arena, or hitting the target gate frame crashes the run; passing the
    final gate increments the lap count and finishes the run once
    laps_required is reached. Mutates and returns progress.
    """
    if not progress.running:
        raise ValueError("progress is already terminal")

    if p_curr[2] <= 0.0:
        progress.terminal = Terminal.CRASHED
        progress.crash_reason = "ground"
        progress.crash_time = t
        return progress
    if not track.in_arena(p_curr):
        progress.terminal = Terminal.CRASHED
        progress.crash_reason = "arena"
        progress.crash_time = t
        return progress

    gate = track.gates[progress.next_gate_index]
    kind, margin = check_transition(p_prev, p_curr, gate)
    if kind is Transition.HIT_FRAME:
        progress.terminal = Terminal.CRASHED
        progress.crash_reason = "gate_frame"
        progress.crash_time = t
        progress.frame_hits += 1
        return progress
    if kind is Transition.PASSED:
        progress.gate_pass_events.append((t, progress.next_gate_index, margin))
        if progress.next_gate_index == track.n_gates - 1:
            progress.laps_done += 1
            if progress.laps_done >= progress.laps_required:
                progress.terminal = Terminal.FINISHED
        progress.next_gate_index = (progress.next_gate_index + 1) % track.n_gates
    return progress


def lap_times(progress: RaceProgress) -> list[float] | None:
    """Per-lap times from final-gate passes; None unless the run finished.

    The first lap is measured from t_start, later laps between consecutive
    final-gate completions.
    """
    if progress.terminal is not Terminal.FINISHED:
        return None
    finals = [t for t, idx, _ in progress.gate_pass_events if idx == progress.n_gates - 1]
    out = []
    prev = progress.t_start
    for t in finals:
        out.append(t - prev)
        prev = t
    return out


# ---------------------------------------------------------------------------
# built-in tracks (gate poses from the published 7-gate course tables)

_SPLITS_GATES = [
    ((-0.70, -0.89, 3.53), (0.96, 0.0, 0.0, -0.27)),
    ((9.17, 6.25, 1.12), (1.0, 0.0, 0.0, 0.0)),
    ((8.90, -3.81, 1.12), (-0.44, 0.0, 0.0, 0.90)),
    ((-4.40, -5.77, 3.20), (0.0, 0.0, 0.0, 1.0)),
    ((-4.40, -5.79, 1.12), (1.0, 0.0, 0.0, 0.0)),
    ((4.48, -0.46, 1.12), (0.67, 0.0, 0.0, 0.74)),
    ((-1.94, 6.82, 1.12), (-0.26, 0.0, 0.0, 0.97)),
]

_MARV_GATES = [
    ((7.70, 11.46, 1.12), (0.72, 0.0, 0.0, -0.70)),
    ((7.57, 3.97, 1.12), (0.71, 0.0, 0.0, -0.70)),
    ((9.88, 3.97, 1.12), (0.72, 0.0, 0.0, -0.70)),
    ((7.15, -4.78, 1.12), (-0.33, 0.0, 0.0, 0.94)),
    ((-5.51, -4.32, 1.12), (1.0, 0.0, 0.0, 0.0)),
    ((-4.60, 4.53, 1.12), (1.0, 0.0, 0.0, 0.0)),
    ((-4.60, 6.79, 1.12), (1.0, 0.0, 0.0, 0.0)),
]


def _builtin(name: str, gate_data) -> Track:
    gates = tuple(Gate(center=np.array(c), orientation=np.array(q)) for c, q in gate_data)
    return Track(name=name, gates=gates)


BUILTIN_TRACKS = {
    "splits": lambda: _builtin("splits", _SPLITS_GATES),
    "marv": lambda: _builtin("marv", _MARV_GATES),
}


def load_track(name_or_path: str | Path) -> Track:
    """Load a built-in track by name or parse a track config file."""
    key = str(name_or_path)
    if key in BUILTIN_TRACKS:
        return BUILTIN_TRACKS[key]()
    return _parse_track_file(name_or_path)


def save_track(track: Track, path: str | Path) -> None:
    cp = configparser.ConfigParser()
    cp["track"] = {
        "name": track.name,
        "laps": str(track.laps_required),
        "arena": " ".join(repr(float(a)) for a in track.arena),
        "start": " ".join(repr(float(x)) for x in track.start_center),
        "start_half_extent": repr(float(track.start_half_extent)),
    }
    for i, g in enumerate(track.gates, start=1):
        cp[f"gate{i}"] = {
            "center": " ".join(repr(float(x)) for x in g.center),
            "orientation": " ".join(repr(float(x)) for x in g.orientation),
            "size": f"{float(g.depth)!r} {float(g.width)!r} {float(g.height)!r}",
            "frame_margin": repr(float(g.frame_margin)),
        }
    with open(path, "w") as fh:
        cp.write(fh)


def _parse_track_file(path: str | Path) -> Track:
    cp = configparser.ConfigParser()
    read = cp.read(path)
    if not read:
        raise TrackFormatError(f"{path}: cannot read track file")

    def vec(section: str, key: str, n: int) -> np.ndarray:
        raw = cp[section].get(key)
        if raw is None:
            raise TrackFormatError(f"{path}: [{section}] missing '{key}'")
        parts = raw.split()
        if len(parts) != n:
            raise TrackFormatError(
                f"{path}: [{section}] '{key}' needs {n} numbers, got {len(parts)}"
            )
        try:
            return np.array([float(x) for x in parts])
        except ValueError as exc:
            raise TrackFormatError(f"{path}: [{section}] '{key}': {exc}") from exc

    gates = []
    i = 1
    while f"gate{i}" in cp:
        sec = f"gate{i}"
        size = vec(sec, "size", 3)
        gates.append(
            Gate(
                center=vec(sec, "center", 3),
                orientation=vec(sec, "orientation", 4),
                depth=float(size[0]),
                width=float(size[1]),
                height=float(size[2]),
                frame_margin=float(cp[sec].get("frame_margin", str(DEFAULT_FRAME_MARGIN))),
            )
        )
        i += 1
    if not gates:
        raise TrackFormatError(f"{path}: no [gateN] sections found")

    meta = cp["track"] if "track" in cp else {}
    start = None
    if isinstance(meta, configparser.SectionProxy) and meta.get("start"):
        start = vec("track", "start", 3)
    arena = DEFAULT_ARENA
    if isinstance(meta, configparser.SectionProxy) and meta.get("arena"):
        arena = tuple(vec("track", "arena", 3))
    return Track(
        name=str(meta.get("name", Path(path).stem)) if meta else Path(path).stem,
        gates=tuple(gates),
        laps_required=int(meta.get("laps", "1")) if meta else 1,
        start_center=start,
        start_half_extent=float(meta.get("start_half_extent", str(START_BOX_HALF)))
        if meta
        else START_BOX_HALF,
        arena=arena,
    )
