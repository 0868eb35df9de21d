import json

import numpy as np
import pytest

from ipdlab.cli import main
from ipdlab.config import build_spec, default_config, load_config, serialize_config
from ipdlab.errors import ConfigError
from ipdlab.metrics import MetricsRow
from ipdlab.plotting import aggregate_series, plot_metric


def test_default_profiles():
    full = default_config("full")
    desk = default_config("desk")
    assert full["episode"]["horizon"] == 100
    assert desk["episode"]["horizon"] == 32
    assert desk["ppi"]["n_phases"] == 8
    assert desk["ppi"]["n_pretrain_trajectories"] == 10000
    assert desk["model"]["hidden_dim"] == 32
    with pytest.raises(ConfigError):
        default_config("huge")


def test_unknown_key_rejected(tmp_path):
    cfg_file = tmp_path / "c.json"
    cfg_file.write_text(json.dumps({"episode": {"horizonn": 10}}))
    with pytest.raises(ConfigError) as err:
        load_config(cfg_file)
    assert "episode.horizonn" in str(err.value)


def test_config_roundtrip_fixed_point(tmp_path):
    cfg = load_config(None, profile="desk")
    path = tmp_path / "resolved.json"
    path.write_text(serialize_config(cfg))
    again = load_config(path, profile="desk")
    assert again == cfg
    path.write_text(serialize_config(again))
    assert json.loads(path.read_text()) == again


def test_build_spec_requires_kind():
    cfg = load_config(None, profile="desk")
    with pytest.raises(ConfigError) as err:
        build_spec(cfg)
    assert "experiment.kind" in str(err.value)


def test_build_spec_ablation_kinds_force_pool():
    cfg = load_config(None, profile="desk")
    spec = build_spec(cfg, kind="ablation_opponent_id")
    assert spec.pool.ablation == "opponent_id"
    assert spec.arch.cond_dim == 10
    spec = build_spec(cfg, kind="ablation_no_tabular")
    assert spec.pool.ablation == "no_tabular"
    spec = build_spec(cfg, kind="mixed_training")
    assert spec.pool.ablation == "none" and spec.arch.cond_dim == 0


def test_build_spec_a2c_columns():
    cfg = load_config(None, profile="full")
    s1 = build_spec(cfg, kind="step1_best_response")
    assert s1.a2c.advantages_normalization is True
    assert s1.a2c.reward_rescaling == 0.2
    assert s1.a2c.batch_size == 2048
    s2 = build_spec(cfg, kind="step2_extortion")
    assert s2.a2c.advantages_normalization is False
    assert s2.a2c.reward_rescaling == 0.05
    s3 = build_spec(cfg, kind="step3_mutual_extortion")
    assert s3.a2c.learning_rate == 0.0005
    assert s3.a2c.gae_lambda == 0.95
    s4 = build_spec(cfg, kind="mixed_training")
    assert s4.a2c.entropy_reg == 0.01
    assert s4.a2c.learning_rate == 0.001


def test_build_spec_desk_overrides_batch():
    cfg = load_config(None, profile="desk")
    spec = build_spec(cfg, kind="step1_best_response")
    assert spec.a2c.batch_size == 256
    assert spec.a2c.adam_epsilon == 1e-5


def tiny_cli_config(tmp_path, **extra):
    cfg = {
        "episode": {"horizon": 6},
        "model": {"hidden_dim": 4, "embed_dim": 3},
        "ppi": {
            "n_phases": 1, "n_samples_per_phase": 4, "n_pretrain_trajectories": 3,
            "train_epochs": 1, "rollout_depth": 2, "n_rollouts_per_action": 2,
            "collect_chunk": 8,
        },
        "a2c": {"overrides": {"batch_size": 4}, "iterations": 2},
        "experiment": {"eval_episodes": 2, "eval_strategies": ["AllD"],
                       "baseline_episodes": 4, "equilibrium_episodes": 2,
                       "early_checkpoint": 1},
        "seeds": [0],
    }
    cfg.update(extra)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


def test_cli_pretrain_deterministic(tmp_path, capsys):
    cfg = tiny_cli_config(tmp_path)
    out1 = tmp_path / "p1.jsonl"
    out2 = tmp_path / "p2.jsonl"
    assert main(["pretrain", "--config", str(cfg), "--out", str(tmp_path),
                 "--out-file", str(out1)]) == 0
    assert main(["pretrain", "--config", str(cfg), "--out", str(tmp_path),
                 "--out-file", str(out2)]) == 0
    captured = capsys.readouterr().out.splitlines()
    shas = [line for line in captured if line.startswith("sha256")]
    assert shas[0] == shas[1]
    assert out1.read_bytes() == out2.read_bytes()
    assert len(out1.read_text().splitlines()) == 6  # 3 episodes, both sides


def test_cli_pretrain_rejects_unknown_key(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"ppi": {"n_phasez": 1}}))
    code = main(["pretrain", "--config", str(bad), "--out", str(tmp_path)])
    assert code == 2
    assert "n_phasez" in capsys.readouterr().err


def test_cli_run_step1_and_seed_override(tmp_path):
    cfg = tiny_cli_config(tmp_path)
    code = main([
        "run", "step1_best_response", "--config", str(cfg), "--algo", "a2c",
        "--seed", "7", "--out", str(tmp_path / "out"),
    ])
    assert code == 0
    run_dir = tmp_path / "out" / "step1_best_response" / "a2c" / "7"
    assert (run_dir / "fixed_icl.npz").exists()
    resolved = json.loads((run_dir / "resolved_config.json").read_text())
    assert resolved["seeds"] == [7]


def test_cli_run_step2_missing_checkpoint(tmp_path, capsys):
    cfg = tiny_cli_config(tmp_path)
    code = main([
        "run", "step2_extortion", "--config", str(cfg), "--algo", "a2c",
        "--out", str(tmp_path / "out"),
    ])
    assert code == 2
    assert "checkpoint" in capsys.readouterr().err


def test_cli_env_out_root(tmp_path, monkeypatch):
    cfg = tiny_cli_config(tmp_path)
    monkeypatch.setenv("IPDLAB_OUT", str(tmp_path / "envout"))
    code = main(["run", "step1_best_response", "--config", str(cfg), "--algo", "a2c"])
    assert code == 0
    assert (tmp_path / "envout" / "step1_best_response" / "a2c" / "0").exists()


def rows_for(values_by_seed, metric="m", outer=3):
    rows = []
    for seed, v in values_by_seed.items():
        rows.append(MetricsRow("e", "ppi", seed, outer, -1, metric, v))
    return rows


def test_aggregate_series_population_std():
    rows = rows_for({0: 0.0, 1: 1.0, 2: 2.0})
    xs, means, stds, x_label = aggregate_series(rows, "m")
    assert x_label == "outer"
    assert xs.tolist() == [3]
    assert means[0] == 1.0
    # Population convention: divide by n.
    assert stds[0] == pytest.approx(np.sqrt(2.0 / 3.0))


def test_aggregate_series_single_seed_zero_band():
    rows = rows_for({0: 0.7})
    _, means, stds, _ = aggregate_series(rows, "m")
    assert means[0] == 0.7 and stds[0] == 0.0


def test_plot_metric_deterministic(tmp_path):
    rows = rows_for({0: 0.0, 1: 1.0}) + rows_for({0: 0.5, 1: 0.7}, outer=4)
    p1 = plot_metric(rows, "m", tmp_path / "a.svg")
    p2 = plot_metric(rows, "m", tmp_path / "b.svg")
    svg = p1.read_text()
    assert svg == p2.read_text()
    assert svg.startswith("<svg") and "polyline" in svg and "polygon" in svg


def test_plot_within_episode_requires_outer(tmp_path):
    rows = [
        MetricsRow("e", "ppi", 0, o, t, "curve", 0.1 * t) for o in (1, 2) for t in range(4)
    ]
    with pytest.raises(ConfigError):
        aggregate_series(rows, "curve")
    xs, means, _, x_label = aggregate_series(rows, "curve", outer=2)
    assert x_label == "round"
    assert xs.tolist() == [0, 1, 2, 3]


def test_cli_plot(tmp_path, capsys):
    csv = tmp_path / "m.csv"
    csv.write_text(
        "experiment,algorithm,seed,outer,inner,metric,value\n"
        "e,ppi,0,1,-1,m,0.5\ne,ppi,1,1,-1,m,0.9\ne,ppi,0,2,-1,m,0.6\ne,ppi,1,2,-1,m,1.0\n"
    )
    code = main(["plot", str(csv), "--metric", "m", "--out", str(tmp_path / "plots")])
    assert code == 0
    assert (tmp_path / "plots" / "m.svg").exists()


def test_cli_plot_schema_mismatch(tmp_path, capsys):
    csv = tmp_path / "bad.csv"
    csv.write_text("a,b\n1,2\n")
    code = main(["plot", str(csv), "--metric", "m"])
    assert code == 2
    err = capsys.readouterr().err
    assert "metric" in err and "value" in err
