import numpy as np
import pytest

from racelab.harness.cli import main
from racelab.planner import ReferenceTrajectory
from racelab.rl.env import OBS_DIM
from racelab.rl.nets import GaussianPolicy, NormStats, ValueNet, save_checkpoint


def test_show_config(capsys):
    code = main(["show-config", "--track", "marv", "--seed", "9"])
    out = capsys.readouterr().out
    assert code == 0
    assert "track = marv" in out
    assert "seed = 9" in out
    assert "# hash = " in out


def test_unknown_flag_exits_2(capsys):
    code = main(["bench", "--definitely-not-a-flag"])
    assert code == 2


def test_unknown_method_exits_2(capsys):
    code = main(["eval", "--method", "nonsense"])  # argparse choices
    assert code == 2


def test_plan_writes_reference(tmp_path, capsys):
    code = main(["plan", "--track", "marv", "--out", str(tmp_path)])
    out = capsys.readouterr().out
    assert code == 0
    assert "7 gates" in out
    ref_file = tmp_path / "reference_marv_4s.csv"
    assert ref_file.exists()
    ref = ReferenceTrajectory.load_csv(ref_file)
    assert ref.total_time > 3.0


def test_eval_missing_checkpoint_exits_2(tmp_path, capsys):
    code = main([
        "eval", "--method", "rl-progress", "--model", "mismatch",
        "--trials", "2", "--out", str(tmp_path),
    ])
    err = capsys.readouterr().err
    assert code == 2
    assert "checkpoint" in err


def test_eval_mpc_prints_success_line(tmp_path, capsys):
    code = main([
        "eval", "--method", "tracking-mpc", "--model", "nominal",
        "--trials", "1", "--out", str(tmp_path), "--config",
        _quick_config(tmp_path),
    ])
    out = capsys.readouterr().out
    assert code == 0
    assert "success rate" in out
    assert "%" in out


def _quick_config(tmp_path):
    cfg = tmp_path / "quick.cfg"
    cfg.write_text("[experiment]\neval_cap_s = 1.0\ntrials = 1\n")
    return str(cfg)


def test_bench_writes_outputs(tmp_path, capsys):
    code = main([
        "bench", "--methods", "tracking-mpc", "--models", "nominal",
        "--trials", "1", "--out", str(tmp_path), "--config", _quick_config(tmp_path),
    ])
    out = capsys.readouterr().out
    assert code == 0
    assert (tmp_path / "bench.csv").exists()
    assert (tmp_path / "summary.txt").exists()
    assert "tracking-mpc" in out


def test_bench_rl_without_ckpt_exits_2(tmp_path, capsys):
    code = main([
        "bench", "--methods", "rl-progress", "--models", "nominal",
        "--trials", "1", "--out", str(tmp_path),
    ])
    assert code == 2


def test_sweep_value_critic(tmp_path, capsys):
    rng = np.random.default_rng(0)
    pol = GaussianPolicy(OBS_DIM, 4, 16, rng)
    val = ValueNet(OBS_DIM, 16, rng)
    norm = NormStats(OBS_DIM)
    norm.update(rng.normal(size=(50, OBS_DIM)))
    ckpt = tmp_path / "p.npz"
    save_checkpoint(ckpt, pol, val, norm)
    code = main([
        "sweep-value", "--mode", "critic", "--checkpoint", str(ckpt),
        "--gate", "2", "--cells", "5", "--out", str(tmp_path),
    ])
    assert code == 0
    assert (tmp_path / "value_critic_gate3.csv").exists()


def test_train_smoke(tmp_path, capsys):
    cfg = tmp_path / "train.cfg"
    cfg.write_text(
        "[experiment]\nrl_total_steps = 800\nrl_n_envs = 4\nrl_hidden = 16\n"
        "rl_cap_s = 2.0\n"
    )
    code = main([
        "train", "--objective", "progress", "--config", str(cfg),
        "--out", str(tmp_path), "--seed", "3",
    ])
    out = capsys.readouterr().out
    assert code == 0
    assert (tmp_path / "progress_splits_4s_seed3.npz").exists()
    assert (tmp_path / "progress_splits_4s_seed3_curve.csv").exists()
