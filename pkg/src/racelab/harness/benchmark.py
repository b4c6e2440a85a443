"""Monte-Carlo evaluation of racing methods and the comparison benchmark.

A trial samples a hover start, runs one method closed loop on one
evaluation model, and records outcome, lap times, gate margins, tracking
loss (where a reference exists), and peak speed. The benchmark sweeps
methods x models x trials and aggregates success rates and statistics.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..dynamics import (
    Command,
    DelayLine,
    QuadParams,
    QuadState,
    SimulationDiverged,
    simulate_closed_loop,
)
from ..mpc import ContouringMpcController, TrackingMpcController, reduce_state
from ..objectives import ContourCostSpec, state_error
from ..planner import ArcPath, ReferenceTrajectory, build_path, speed_profile
from ..rl.env import OBS_DIM, TrackArrays, decode_action, encode_observation_batch
from ..rl.nets import GaussianPolicy, NormStats
from ..track import RaceProgress, Terminal, Track, lap_times, update_progress
from .config import ExperimentConfig
from .models import EvalModel

METHODS = ("tracking-mpc", "contouring-mpc", "rl-progress", "rl-tracking")


def tracking_weights(cfg: ExperimentConfig):
    qw = np.array([cfg.q_pos] * 3 + [cfg.q_att] * 3 + [cfg.q_vel] * 3)
    rw = np.array([cfg.r_thrust] + [cfg.r_rates] * 3)
    return qw, rw


class ConfigurationError(RuntimeError):
    """Missing artifacts or invalid benchmark setup."""


@dataclass
class MethodArtifacts:
    """Prebuilt inputs the controllers need: the planned reference/path and
    trained policies with their normalization stats."""

    reference: ReferenceTrajectory | None = None
    path: ArcPath | None = None
    progress_policy: GaussianPolicy | None = None
    progress_norm: NormStats | None = None
    tracking_policy: GaussianPolicy | None = None
    tracking_norm: NormStats | None = None

    def require(self, method: str) -> None:
        missing = []
        if method in ("tracking-mpc", "rl-tracking") and self.reference is None:
            missing.append("reference trajectory")
        if method == "contouring-mpc" and self.path is None:
            missing.append("arc path")
        if method == "rl-progress" and (self.progress_policy is None or self.progress_norm is None):
            missing.append("gate-progress policy checkpoint")
        if method == "rl-tracking" and (self.tracking_policy is None or self.tracking_norm is None):
            missing.append("tracking policy checkpoint")
        if missing:
            raise ConfigurationError(f"method '{method}' needs: {', '.join(missing)}")


@dataclass
class RunRecord:
    method: str
    model: str
    seed: int
    outcome: str                  # finished | crashed | timeout | error
    crash_reason: str | None
    lap_times: list[float]
    margins: list[float]
    failed_gates: int
    tracking_loss: float | None
    peak_speed: float
    sim_time: float
    thrust_scale: float
    drag: tuple[float, float, float]
    delay_s: float
    error: str | None = None

    @property
    def finished(self) -> bool:
        return self.outcome == "finished"


class ProgressPolicyController:
    """Deterministic (mean-action) gate-progress policy as a controller;
    reads the current target gate from the shared RaceProgress."""

    def __init__(self, policy: GaussianPolicy, norm: NormStats, track: Track,
                 params: QuadParams, progress: RaceProgress):
        self.policy = policy
        self.norm = norm
        self.ta = TrackArrays.from_track(track)
        self.params = params
        self.progress = progress

    def __call__(self, t: float, state: QuadState) -> Command:
        obs = encode_observation_batch(
            state.as_row()[None, :], np.array([self.progress.next_gate_index]), self.ta
        )
        action = self.policy.mean(self.norm.normalize(obs))[0]
        c, w = decode_action(action, self.params)
        return Command(c=float(c), w_des=w)


class TrackingPolicyController:
    """Deterministic tracking policy: observation gains the 9-dim
    reference-error block; the corner block follows the gate nearest the
    current reference sample (as during training)."""

    def __init__(self, policy: GaussianPolicy, norm: NormStats, track: Track,
                 params: QuadParams, reference: ReferenceTrajectory):
        self.policy = policy
        self.norm = norm
        self.ta = TrackArrays.from_track(track)
        self.params = params
        self.reference = reference

    def __call__(self, t: float, state: QuadState) -> Command:
        x_ref, _ = self.reference.sample(t)
        target = int(np.argmin(np.linalg.norm(self.ta.centers - x_ref[0:3], axis=1)))
        obs = np.empty((1, OBS_DIM + 9))
        obs[:, :OBS_DIM] = encode_observation_batch(
            state.as_row()[None, :], np.array([target]), self.ta
        )
        obs[0, OBS_DIM:] = state_error(reduce_state(state), x_ref)
        action = self.policy.mean(self.norm.normalize(obs))[0]
        c, w = decode_action(action, self.params)
        return Command(c=float(c), w_des=w)


def build_controller(method: str, artifacts: MethodArtifacts, params: QuadParams,
                     track: Track, progress: RaceProgress, cfg: ExperimentConfig):
    artifacts.require(method)
    if method == "tracking-mpc":
        qw, rw = tracking_weights(cfg)
        return TrackingMpcController(
            params, artifacts.reference, q_weights=qw, r_weights=rw,
            horizon=cfg.mpc_horizon, dt=cfg.mpc_dt, delay_comp=cfg.delay_comp,
        )
    if method == "contouring-mpc":
        spec = ContourCostSpec(
            path=artifacts.path, qc=cfg.mpcc_qc, rho=cfg.mpcc_rho,
            rw=np.full(3, cfg.mpcc_rw),
        )
        return ContouringMpcController(
            params, artifacts.path, spec=spec, v_theta_max=cfg.ref_v_max,
            horizon=cfg.mpcc_horizon, dt=cfg.mpcc_dt, delay_comp=cfg.delay_comp,
        )
    if method == "rl-progress":
        return ProgressPolicyController(
            artifacts.progress_policy, artifacts.progress_norm, track, params, progress
        )
    if method == "rl-tracking":
        return TrackingPolicyController(
            artifacts.tracking_policy, artifacts.tracking_norm, track, params,
            artifacts.reference,
        )
    raise ConfigurationError(f"unknown method '{method}'")


def sample_start(track: Track, rng: np.random.Generator, params: QuadParams,
                 box: float) -> QuadState:
    pos = np.asarray(track.start_center, dtype=float).copy()
    if box > 0:
        pos = pos + rng.uniform(-box, box, size=3)
    pos[2] = max(pos[2], 0.3)
    delta = track.gates[0].center - pos
    yaw = float(np.arctan2(delta[1], delta[0]))
    return QuadState.hover(pos, params, yaw=yaw)


def _tracking_loss(traj, reference: ReferenceTrajectory, cfg: ExperimentConfig) -> float | None:
    if reference is None:
        return None
    qw, rw = tracking_weights(cfg)
    losses = []
    for t, state, cmd in traj:
        if cmd is None:
            continue
        x_ref, u_ref = reference.sample(t)
        e = state_error(reduce_state(state), x_ref)
        du = np.concatenate([[cmd.c], cmd.w_des]) - u_ref
        losses.append(float(e @ (qw * e) + du @ (rw * du)))
    return float(np.mean(losses)) if losses else None


def run_trial(method: str, model: EvalModel, track: Track, seed: int,
              artifacts: MethodArtifacts, cfg: ExperimentConfig,
              start_box: float | None = None) -> RunRecord:
    """One seeded evaluation run; same seed gives an identical record."""
    rng = np.random.default_rng(seed)
    params = model.trial_params(rng)
    box = cfg.start_box if start_box is None else start_box
    state = sample_start(track, rng, params, box)
    race = track.with_laps(cfg.laps)
    progress = RaceProgress(n_gates=race.n_gates, laps_required=cfg.laps)
    controller = build_controller(method, artifacts, params, race, progress, cfg)

    prev_p = state.p.copy()
    peak = 0.0

    def stop(t: float, st: QuadState) -> bool:
        nonlocal prev_p, peak
        peak = max(peak, float(np.linalg.norm(st.v)))
        update_progress(progress, prev_p, st.p, race, t)
        prev_p = st.p.copy()
        return not progress.running

    delay = DelayLine(model.delay_s, Command.hover(params))
    horizon = cfg.eval_cap_s * cfg.laps
    ctrl_dt = cfg.rl_ctrl_dt if method.startswith("rl-") else 0.01
    error = None
    try:
        traj = simulate_closed_loop(
            state, controller, params, delay=delay, horizon=horizon, stop=stop,
            ctrl_dt=ctrl_dt,
        )
        sim_time = traj[-1][0]
    except SimulationDiverged as exc:
        error = str(exc)
        traj = []
        sim_time = float("nan")
        if progress.running:
            progress.terminal = Terminal.CRASHED
            progress.crash_reason = "diverged"

    if progress.terminal is Terminal.FINISHED:
        outcome = "finished"
    elif progress.terminal is Terminal.CRASHED:
        outcome = "crashed"
    else:
        outcome = "timeout"
    laps = lap_times(progress) or []
    failed = cfg.laps * race.n_gates - len(progress.gate_pass_events)
    return RunRecord(
        method=method,
        model=model.name,
        seed=seed,
        outcome=outcome,
        crash_reason=progress.crash_reason,
        lap_times=laps,
        margins=[m for _, _, m in progress.gate_pass_events],
        failed_gates=failed,
        tracking_loss=_tracking_loss(traj, artifacts.reference, cfg)
        if method in ("tracking-mpc", "rl-tracking")
        else None,
        peak_speed=peak,
        sim_time=sim_time,
        thrust_scale=params.thrust_scale,
        drag=tuple(params.drag),
        delay_s=model.delay_s,
        error=error,
    )


# ---------------------------------------------------------------------------
# benchmark sweep

@dataclass
class BenchResult:
    records: list[RunRecord]
    aggregates: dict
    config_hash: str


def aggregate_records(records: list[RunRecord]) -> dict:
    """Per (method, model) statistics, derived purely from the records."""
    out = {}
    keys = sorted({(r.method, r.model) for r in records})
    for key in keys:
        rs = [r for r in records if (r.method, r.model) == key]
        finished = [r for r in rs if r.finished]
        all_laps = [lt for r in finished for lt in r.lap_times]
        losses = [r.tracking_loss for r in rs if r.tracking_loss is not None]
        margins = [m for r in rs for m in r.margins]
        out[key] = {
            "trials": len(rs),
            "success_rate": 100.0 * len(finished) / len(rs),
            "lap_mean": float(np.mean(all_laps)) if all_laps else float("nan"),
            "lap_std": float(np.std(all_laps)) if all_laps else float("nan"),
            "tracking_loss_mean": float(np.mean(losses)) if losses else float("nan"),
            "tracking_loss_std": float(np.std(losses)) if losses else float("nan"),
            "failed_gates_total": int(sum(r.failed_gates for r in rs)),
            "failed_gates_mean": float(np.mean([r.failed_gates for r in rs])),
            "margin_mean": float(np.mean(margins)) if margins else float("nan"),
            "peak_speed_max": float(max((r.peak_speed for r in rs), default=float("nan"))),
            "errors": sum(1 for r in rs if r.error is not None),
        }
    return out


@dataclass
class BenchConfig:
    methods: list[str] = field(default_factory=lambda: list(METHODS))
    models: list[str] = field(default_factory=lambda: ["nominal", "mismatch"])
    trials: int = 50


def run_benchmark(bench: BenchConfig, models: dict[str, EvalModel], track: Track,
                  artifacts_by_method: dict[str, MethodArtifacts],
                  cfg: ExperimentConfig, out_dir: str | Path | None = None,
                  log_fn=None) -> BenchResult:
    """Run methods x models x trials; trial seeds derive from cfg.seed and
    the trial index so results are independent of execution order. Partial
    failures are recorded per trial, not fatal."""
    records: list[RunRecord] = []
    for method in bench.methods:
        if method not in METHODS:
            raise ConfigurationError(f"unknown method '{method}'")
        artifacts_by_method[method].require(method)
    for method in bench.methods:
        for model_name in bench.models:
            model = models[model_name]
            for trial in range(bench.trials):
                seed = cfg.seed * 1_000_000 + trial
                try:
                    rec = run_trial(method, model, track, seed,
                                    artifacts_by_method[method], cfg)
                except ConfigurationError:
                    raise
                except Exception as exc:  # trial-level fault isolation
                    rec = RunRecord(
                        method=method, model=model_name, seed=seed, outcome="error",
                        crash_reason=None, lap_times=[], margins=[], failed_gates=-1,
                        tracking_loss=None, peak_speed=float("nan"),
                        sim_time=float("nan"), thrust_scale=float("nan"),
                        drag=(float("nan"),) * 3, delay_s=model.delay_s,
                        error=f"{type(exc).__name__}: {exc}",
                    )
                records.append(rec)
                if log_fn is not None:
                    log_fn(rec)
    result = BenchResult(records=records, aggregates=aggregate_records(records),
                         config_hash=cfg.hash())
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_records_csv(out / "bench.csv", records, cfg.hash())
        (out / "summary.txt").write_text(format_summary(result))
    return result


CSV_FIELDS = [
    "method", "model", "seed", "outcome", "crash_reason", "lap_times", "margins",
    "failed_gates", "tracking_loss", "peak_speed", "sim_time", "thrust_scale",
    "drag_x", "drag_y", "drag_z", "delay_s", "error",
]


def write_records_csv(path: str | Path, records: list[RunRecord], config_hash: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={config_hash}\n")
        writer = csv.writer(fh)
        writer.writerow(CSV_FIELDS)
        for r in records:
            writer.writerow([
                r.method, r.model, r.seed, r.outcome, r.crash_reason or "",
                ";".join(f"{t:.9g}" for t in r.lap_times),
                ";".join(f"{m:.9g}" for m in r.margins),
                r.failed_gates,
                "" if r.tracking_loss is None else f"{r.tracking_loss:.9g}",
                f"{r.peak_speed:.9g}", f"{r.sim_time:.9g}", f"{r.thrust_scale:.9g}",
                f"{r.drag[0]:.9g}", f"{r.drag[1]:.9g}", f"{r.drag[2]:.9g}",
                f"{r.delay_s:.9g}", r.error or "",
            ])


def read_records_csv(path: str | Path) -> list[RunRecord]:
    records = []
    with open(path, newline="") as fh:
        first = fh.readline()
        if not first.startswith("#"):
            fh.seek(0)
        reader = csv.DictReader(fh)
        for row in reader:
            records.append(RunRecord(
                method=row["method"], model=row["model"], seed=int(row["seed"]),
                outcome=row["outcome"], crash_reason=row["crash_reason"] or None,
                lap_times=[float(x) for x in row["lap_times"].split(";") if x],
                margins=[float(x) for x in row["margins"].split(";") if x],
                failed_gates=int(row["failed_gates"]),
                tracking_loss=float(row["tracking_loss"]) if row["tracking_loss"] else None,
                peak_speed=float(row["peak_speed"]), sim_time=float(row["sim_time"]),
                thrust_scale=float(row["thrust_scale"]),
                drag=(float(row["drag_x"]), float(row["drag_y"]), float(row["drag_z"])),
                delay_s=float(row["delay_s"]), error=row["error"] or None,
            ))
    return records


def format_summary(result: BenchResult) -> str:
    lines = [f"benchmark summary (config {result.config_hash})", ""]
    header = (
        f"{'method':<16} {'model':<11} {'trials':>6} {'success':>8} "
        f"{'lap time [s]':>16} {'tracking loss':>18} {'failed gates':>12}"
    )
    lines.append(header)
    lines.append("-" * len(header))
    for (method, model), agg in result.aggregates.items():
        lap = (
            f"{agg['lap_mean']:.2f} ± {agg['lap_std']:.2f}"
            if np.isfinite(agg["lap_mean"])
            else "--"
        )
        loss = (
            f"{agg['tracking_loss_mean']:.2f} ± {agg['tracking_loss_std']:.2f}"
            if np.isfinite(agg["tracking_loss_mean"])
            else "--"
        )
        lines.append(
            f"{method:<16} {model:<11} {agg['trials']:>6d} "
            f"{agg['success_rate']:>7.1f}% {lap:>16} {loss:>18} "
            f"{agg['failed_gates_total']:>12d}"
        )
    return "\n".join(lines) + "\n"
