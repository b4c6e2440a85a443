"""Command-line interface.

Subcommands: plan (reference CSV), train (PPO policies), eval (one method),
bench (full comparison), sweep-value (value grids), show-config.
Exit codes: 0 success, 2 configuration error, 3 partial trial failures.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from ..dynamics import load_drone
from ..planner import build_path, speed_profile
from ..rl.env import RandomizationSpec
from ..rl.nets import load_checkpoint, save_checkpoint
from ..rl.train import TrainConfig, train, train_tracking
from ..rl.ppo import PpoConfig
from ..track import load_track
from .benchmark import (
    BenchConfig,
    ConfigurationError,
    MethodArtifacts,
    METHODS,
    run_benchmark,
    run_trial,
)
from .config import ExperimentConfig, load_config
from .models import build_model
from .value_grid import critic_value_grid, mpc_value_grid, save_grid_csv


def _base_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="racelab",
        description="Desk-scale drone-racing control lab: plan references, "
                    "train policies, and benchmark methods under model mismatch.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="experiment config file (key=value sections)")
        p.add_argument("--track", help="track name or file (splits, marv)")
        p.add_argument("--drone", help="drone preset or config file (4s, 6s)")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--out", help="output directory")

    p_plan = sub.add_parser("plan", help="build the arc path and reference trajectory")
    common(p_plan)

    p_train = sub.add_parser("train", help="train a policy with PPO")
    common(p_train)
    p_train.add_argument("--objective", choices=["progress", "tracking"], default="progress")
    p_train.add_argument("--steps", type=int, help="total simulation steps")
    p_train.add_argument("--randomize", action="store_true",
                         help="enable domain randomization during training")

    p_eval = sub.add_parser("eval", help="evaluate one method")
    common(p_eval)
    p_eval.add_argument("--method", choices=METHODS, required=True)
    p_eval.add_argument("--model", choices=["nominal", "randomized", "mismatch"],
                        default="nominal")
    p_eval.add_argument("--trials", type=int)
    p_eval.add_argument("--checkpoint", help="policy checkpoint (rl methods)")

    p_bench = sub.add_parser("bench", help="run the full method comparison")
    common(p_bench)
    p_bench.add_argument("--trials", type=int)
    p_bench.add_argument("--methods", default="tracking-mpc,contouring-mpc,rl-progress")
    p_bench.add_argument("--models", default="nominal,mismatch")
    p_bench.add_argument("--progress-ckpt", help="gate-progress policy checkpoint")
    p_bench.add_argument("--tracking-ckpt", help="rl tracking policy checkpoint")

    p_sweep = sub.add_parser("sweep-value", help="emit a value-landscape grid CSV")
    common(p_sweep)
    p_sweep.add_argument("--mode", choices=["critic", "tracking-mpc"], required=True)
    p_sweep.add_argument("--checkpoint", help="policy checkpoint (critic mode)")
    p_sweep.add_argument("--gate", type=int, default=2, help="target gate index (0-based)")
    p_sweep.add_argument("--span", type=float, default=3.0, help="half-extent of the sweep, m")
    p_sweep.add_argument("--cells", type=int, default=25, help="grid cells per axis")

    p_show = sub.add_parser("show-config", help="print the effective config and hash")
    common(p_show)
    return parser


def _effective_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if getattr(args, "track", None):
        cfg.track = args.track
    if getattr(args, "drone", None):
        cfg.drone = args.drone
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "out", None):
        cfg.out_dir = args.out
    if getattr(args, "trials", None):
        cfg.trials = args.trials
    if getattr(args, "steps", None):
        cfg.rl_total_steps = args.steps
    return cfg


def _plan_artifacts(cfg: ExperimentConfig):
    track = load_track(cfg.track)
    params = load_drone(cfg.drone)
    path = build_path(track.with_laps(cfg.laps))
    a_max = cfg.ref_accel_fraction * (4.0 * params.f_max / (params.mass * params.gravity) - 1.0) * params.gravity
    reference = speed_profile(path, v_max=cfg.ref_v_max, a_max=a_max, dt=cfg.ref_dt,
                              gravity=params.gravity)
    return track, params, path, reference


def _randomization(cfg: ExperimentConfig) -> RandomizationSpec:
    return RandomizationSpec(
        thrust_scale_range=(cfg.rand_thrust_lo, cfg.rand_thrust_hi),
        drag_scale_range=(cfg.rand_drag_lo, cfg.rand_drag_hi),
        delay_s=cfg.rl_delay_s,
    )


def cmd_plan(args) -> int:
    cfg = _effective_config(args)
    track, params, path, reference = _plan_artifacts(cfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ref_file = out / f"reference_{cfg.track}_{cfg.drone}.csv"
    reference.save_csv(ref_file)
    print(f"track {track.name}: {track.n_gates} gates, path length {path.length:.2f} m")
    print(f"reference: {reference.total_time:.2f} s at dt={reference.dt} s -> {ref_file}")
    print(f"config {cfg.hash()}")
    return 0


def cmd_train(args) -> int:
    cfg = _effective_config(args)
    track, params, path, reference = _plan_artifacts(cfg)
    rand = _randomization(cfg) if args.randomize else None
    tc = TrainConfig(
        total_steps=cfg.rl_total_steps,
        n_envs=cfg.rl_n_envs,
        seed=cfg.seed,
        hidden=cfg.rl_hidden,
        ppo=PpoConfig(),
        laps_required=cfg.rl_laps,
        episode_cap_s=cfg.rl_cap_s,
        ctrl_dt=cfg.rl_ctrl_dt,
        delay_s=cfg.rl_delay_s,
        randomization=rand,
    )
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def log(row):
        print(
            f"iter {row['iteration']:4d}  steps {row['steps']:9d}  "
            f"reward {row['mean_episode_reward']:9.2f}  episodes {row['episodes']:4d}",
            flush=True,
        )

    if args.objective == "progress":
        result = train(track, params, tc, log_fn=log)
        stem = f"progress_{cfg.track}_{cfg.drone}_seed{cfg.seed}"
    else:
        from .benchmark import tracking_weights

        qw, rw = tracking_weights(cfg)
        result = train_tracking(track, params, reference, tc, q_weights=qw,
                                r_weights=rw, log_fn=log)
        stem = f"tracking_{cfg.track}_{cfg.drone}_seed{cfg.seed}"
    ckpt = out / f"{stem}.npz"
    save_checkpoint(ckpt, result.policy, result.value, result.norm,
                    config_hash=cfg.hash(),
                    meta={"objective": args.objective, "track": cfg.track,
                          "drone": cfg.drone, "seed": cfg.seed,
                          "randomized": bool(rand)})
    result.save_curve(out / f"{stem}_curve.csv")
    print(f"saved {ckpt}")
    return 0


def _artifacts_for(cfg: ExperimentConfig, path, reference,
                   progress_ckpt: str | None, tracking_ckpt: str | None) -> MethodArtifacts:
    art = MethodArtifacts(reference=reference, path=path)
    if progress_ckpt:
        pol, _val, norm, _hdr = load_checkpoint(progress_ckpt)
        art.progress_policy = pol
        art.progress_norm = norm
    if tracking_ckpt:
        pol, _val, norm, _hdr = load_checkpoint(tracking_ckpt)
        art.tracking_policy = pol
        art.tracking_norm = norm
    return art


def cmd_eval(args) -> int:
    cfg = _effective_config(args)
    track, params, path, reference = _plan_artifacts(cfg)
    model = build_model(args.model, params, _randomization(cfg))
    ckpt = args.checkpoint
    art = _artifacts_for(cfg, path, reference,
                         ckpt if args.method == "rl-progress" else None,
                         ckpt if args.method == "rl-tracking" else None)
    try:
        art.require(args.method)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    records = []
    for trial in range(cfg.trials):
        seed = cfg.seed * 1_000_000 + trial
        records.append(run_trial(args.method, model, track, seed, art, cfg))
    finished = sum(1 for r in records if r.finished)
    rate = 100.0 * finished / len(records)
    laps = [lt for r in records if r.finished for lt in r.lap_times]
    lap_str = f", lap {np.mean(laps):.2f} ± {np.std(laps):.2f} s" if laps else ""
    print(f"{args.method} on {args.model}: success rate {rate:.1f}% "
          f"({finished}/{len(records)}){lap_str}")
    errors = sum(1 for r in records if r.error is not None)
    return 3 if errors else 0


def cmd_bench(args) -> int:
    cfg = _effective_config(args)
    track, params, path, reference = _plan_artifacts(cfg)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    model_names = [m.strip() for m in args.models.split(",") if m.strip()]
    art = _artifacts_for(cfg, path, reference, args.progress_ckpt, args.tracking_ckpt)
    artifacts = {m: art for m in methods}
    models = {name: build_model(name, params, _randomization(cfg)) for name in model_names}
    bench = BenchConfig(methods=methods, models=model_names, trials=cfg.trials)
    try:
        result = run_benchmark(bench, models, track, artifacts, cfg, out_dir=cfg.out_dir,
                               log_fn=lambda r: print(
                                   f"{r.method:<15} {r.model:<10} seed {r.seed}: {r.outcome}",
                                   flush=True))
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    summary = Path(cfg.out_dir) / "summary.txt"
    print(summary.read_text())
    errors = sum(1 for r in result.records if r.error is not None)
    return 3 if errors else 0


def cmd_sweep_value(args) -> int:
    cfg = _effective_config(args)
    track, params, path, reference = _plan_artifacts(cfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    gate = track.gates[args.gate]
    xs = np.linspace(gate.center[0] - args.span, gate.center[0] + args.span, args.cells)
    ys = np.linspace(gate.center[1] - args.span, gate.center[1] + args.span, args.cells)
    from ..dynamics import QuadState

    if args.mode == "critic":
        if not args.checkpoint:
            print("error: critic sweep needs --checkpoint", file=sys.stderr)
            return 2
        _pol, val, norm, _hdr = load_checkpoint_with_value(args.checkpoint)
        anchor = QuadState.hover(gate.center - 2.0 * gate.normal, params)
        grid = critic_value_grid(val, norm, anchor, args.gate, track, xs, ys)
        name = out / f"value_critic_gate{args.gate + 1}.csv"
    else:
        t_anchor = _reference_time_near(reference, gate.center)
        x_ref, _ = reference.sample(t_anchor)
        anchor = QuadState(p=x_ref[0:3].copy(), q=x_ref[3:7].copy(),
                           v=x_ref[7:10].copy(), w=np.zeros(3),
                           f=np.full(4, params.hover_rotor_thrust))
        grid = mpc_value_grid(reference, t_anchor, anchor, params, xs, ys,
                              horizon=cfg.mpc_horizon, dt=cfg.mpc_dt)
        name = out / f"value_mpc_gate{args.gate + 1}.csv"
    save_grid_csv(name, xs, ys, grid, meta=f"config={cfg.hash()} mode={args.mode}")
    print(f"wrote {name}")
    return 0


def load_checkpoint_with_value(path):
    return load_checkpoint(path)


def _reference_time_near(reference, point) -> float:
    d = np.linalg.norm(reference.states[:, 0:3] - np.asarray(point), axis=1)
    return float(np.argmin(d)) * reference.dt


def cmd_show_config(args) -> int:
    cfg = _effective_config(args)
    sys.stdout.write(cfg.dump())
    print(f"# hash = {cfg.hash()}")
    return 0


def main(argv=None) -> int:
    parser = _base_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors already; normalize other codes
        return int(exc.code) if exc.code else 0
    handlers = {
        "plan": cmd_plan,
        "train": cmd_train,
        "eval": cmd_eval,
        "bench": cmd_bench,
        "sweep-value": cmd_sweep_value,
        "show-config": cmd_show_config,
    }
    try:
        return handlers[args.command](args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
