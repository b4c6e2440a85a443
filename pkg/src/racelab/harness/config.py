"""Experiment configuration: nested key=value text files with includes,
a canonical dump, and a content hash carried on all outputs."""

from __future__ import annotations

import configparser
import hashlib
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

OUT_DIR_ENV = "RACELAB_OUT_DIR"


@dataclass
class ExperimentConfig:
    # scenario
    track: str = "splits"
    drone: str = "4s"
    seed: int = 1
    laps: int = 1

    # reference planning (tracking/contouring methods)
    ref_v_max: float = 25.0
    ref_accel_fraction: float = 0.6   # of (TWR - 1) g; the planner default 0.8
                                      # is near the actuation ceiling, see README
    ref_dt: float = 0.01

    # tracking objective weights (shared by the MPC and the rl-tracking reward)
    q_pos: float = 200.0
    q_att: float = 50.0
    q_vel: float = 1.0
    r_thrust: float = 1.0
    r_rates: float = 5.0

    # receding-horizon settings
    mpc_horizon: int = 20
    mpc_dt: float = 0.05
    mpcc_horizon: int = 15
    mpcc_dt: float = 0.1
    mpcc_qc: float = 400.0
    mpcc_rho: float = 20.0
    mpcc_rw: float = 0.3
    delay_comp: float = 0.04

    # policy training
    rl_ctrl_dt: float = 0.02   # policy control period; MPC methods run at 100 Hz
    rl_total_steps: int = 3_000_000
    rl_n_envs: int = 100
    rl_hidden: int = 256
    rl_laps: int = 2
    rl_cap_s: float = 15.0
    rl_delay_s: float = 0.04
    rl_randomize: bool = False
    rand_thrust_lo: float = 0.85
    rand_thrust_hi: float = 1.10
    rand_drag_lo: float = 0.7
    rand_drag_hi: float = 1.3

    # evaluation
    trials: int = 50
    eval_cap_s: float = 15.0
    start_box: float = 0.5

    out_dir: str = field(default_factory=lambda: os.environ.get(OUT_DIR_ENV, "out"))

    def dump(self) -> str:
        """Canonical key=value text, stable field order."""
        lines = ["[experiment]"]
        for f in fields(self):
            lines.append(f"{f.name} = {getattr(self, f.name)}")
        return "\n".join(lines) + "\n"

    def hash(self) -> str:
        return hashlib.sha256(self.dump().encode()).hexdigest()[:12]


def load_config(path: str | Path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Parse a config file into an ExperimentConfig; an `include` key in the
    [experiment] section pulls defaults from another file first."""
    cfg = base if base is not None else ExperimentConfig()
    cp = configparser.ConfigParser()
    read = cp.read(path)
    if not read:
        raise ValueError(f"{path}: cannot read config file")
    if "experiment" not in cp:
        raise ValueError(f"{path}: missing [experiment] section")
    section = cp["experiment"]
    if "include" in section:
        inc = Path(path).parent / section["include"]
        cfg = load_config(inc, base=cfg)
    valid = {f.name: f.type for f in fields(ExperimentConfig)}
    for key, raw in section.items():
        if key == "include":
            continue
        if key not in valid:
            raise ValueError(f"{path}: unknown config key '{key}'")
        current = getattr(cfg, key)
        if isinstance(current, bool):
            setattr(cfg, key, raw.strip().lower() in ("1", "true", "yes", "on"))
        elif isinstance(current, int):
            setattr(cfg, key, int(raw))
        elif isinstance(current, float):
            setattr(cfg, key, float(raw))
        else:
            setattr(cfg, key, raw.strip())
    return cfg
