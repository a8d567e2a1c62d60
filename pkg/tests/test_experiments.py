import dataclasses

import numpy as np
import pandas as pd
import pytest

from veccache import cli
from veccache.config import (ConfigError, default_config, desk_config,
                             load_config, parse_config, write_default_config)
from veccache.experiments import (ExperimentSpec, aggregate, apply_sweep,
                                  build_env, converged_value, hit_ratio, run,
                                  run_one, total_latency)
from veccache.plots import emit_figure
from veccache.trainer import EpisodeMetrics


def quick_config(episodes=2):
    cfg = desk_config()
    train = dataclasses.replace(
        cfg.train, episodes=episodes, batch_size=8, buffer_capacity=64,
        feature_dim=8, heads=2, encoder_hidden=8, q_hidden=8)
    grid = dataclasses.replace(cfg.grid, vu_count=3, rsu_count=4)
    env = dataclasses.replace(cfg.env, episode_ts=15)
    tasks = dataclasses.replace(cfg.tasks, content_types=5)
    return dataclasses.replace(cfg, train=train, grid=grid, env=env, tasks=tasks)


# --- config loading -----------------------------------------------------


def test_default_config_parses_paper_scale():
    cfg = default_config()
    assert cfg.grid.vu_count == 20
    assert cfg.grid.rsu_count == 16
    assert cfg.channel.bandwidth_hz == 10e6
    assert cfg.tasks.zipf_delta == 0.5
    assert cfg.train.gamma == 0.9
    assert cfg.train.batch_size == 128
    assert cfg.train.lr == 0.001
    assert cfg.train.buffer_capacity == 2000
    assert cfg.env.hit_bonus == 2.0
    assert cfg.env.cache_penalty == -0.5
    assert cfg.tasks.rsu_cache_mb == 100.0 and cfg.tasks.vu_cache_mb == 50.0
    assert cfg.tasks.rsu_cpu_ghz == 1.0 and cfg.tasks.vu_cpu_ghz == 0.8
    assert cfg.grid.comm_range_rsu_m == 400.0 and cfg.grid.comm_range_v2v_m == 300.0
    # [36, 54] km/h window in m/s
    assert cfg.grid.v_mean_range_ms[0] == pytest.approx(10.0)
    assert cfg.grid.v_mean_range_ms[1] == pytest.approx(15.0)


def test_config_file_roundtrip(tmp_path):
    path = tmp_path / "cfg.yaml"
    write_default_config(path)
    cfg = load_config(path)
    assert cfg == default_config()


def test_config_unknown_key_names_it(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text("world:\n  rsu_count: 4\n  not_a_key: 1\n")
    with pytest.raises(ConfigError, match="world.not_a_key"):
        load_config(path)


def test_config_bad_value_reported():
    with pytest.raises(ConfigError):
        parse_config({"world": {"turn_prob": 2.0}})
    with pytest.raises(ConfigError, match="offload_policy"):
        parse_config({"env": {"offload_policy": "sometimes"}})


# --- sweeps ---------------------------------------------------------------


def test_apply_sweep_changes_only_target_key():
    cfg = quick_config()
    swept = apply_sweep(cfg, "vu_count", 9)
    assert swept.grid.vu_count == 9
    assert dataclasses.replace(swept.grid, vu_count=cfg.grid.vu_count) == cfg.grid
    assert swept.tasks == cfg.tasks and swept.train == cfg.train
    assert swept.env == cfg.env and swept.channel == cfg.channel

    swept = apply_sweep(cfg, "content_types", 20)
    assert swept.tasks.content_types == 20
    assert swept.grid == cfg.grid

    swept = apply_sweep(cfg, "rsu_count", 8)
    assert swept.grid.rsu_count == 8
    with pytest.raises(ConfigError):
        apply_sweep(cfg, "bandwidth", 1)


def test_spec_validation():
    cfg = quick_config()
    with pytest.raises(ConfigError):
        ExperimentSpec(config=cfg, seeds=())
    with pytest.raises(ConfigError):
        ExperimentSpec(config=cfg, schemes=("dqn9000",))
    with pytest.raises(ConfigError):
        ExperimentSpec(config=cfg, sweep_var="vu_count", sweep_values=())
    with pytest.raises(ConfigError):
        ExperimentSpec(config=cfg, sweep_var="vu_count", sweep_values=(0,))


# --- metrics ----------------------------------------------------------------


def test_converged_value_window():
    series = np.concatenate([np.zeros(90), np.full(10, 5.0)])
    assert converged_value(series) == pytest.approx(5.0)
    assert converged_value([3.0]) == 3.0
    with pytest.raises(ValueError):
        converged_value([])


def test_hit_ratio_counting():
    rows = [(0, 0, 1, 1, 0, 0.1, 0, 0.0, 1.9),
            (0, 1, 2, 0, 1, 1.2, 3, 0.0, -1.2),
            (1, 0, 1, 1, 0, 0.0, 0, 0.0, 2.0),
            (1, 1, 0, 0, 0, 0.06, 0, -0.5, -0.56)]
    assert hit_ratio(rows) == pytest.approx(0.5)
    assert total_latency(rows) == pytest.approx(0.1 + 1.2 + 0.06)
    with pytest.raises(ValueError):
        hit_ratio([])


def test_trace_metrics_match_episode_logs():
    cfg = quick_config()
    env = build_env(cfg, seed=0)
    env.reset()
    rng = np.random.default_rng(0)
    hits = lat = 0.0
    for _ in range(12):
        o, _ = env.step(rng.integers(0, env.n_actions, env.n_agents))
        hits += o.hits.sum()
        lat += o.latencies.sum()
    assert hit_ratio(env.trace) == pytest.approx(hits / (12 * env.n_agents))
    assert total_latency(env.trace) == pytest.approx(lat)


def test_constant_series_aggregates_to_itself():
    metrics = [EpisodeMetrics(i, 4.0, 0.5, 10.0, 0.1, 0.0) for i in range(20)]
    summaries = []
    from veccache.experiments import RunSummary
    for seed in (0, 1):
        summaries.append(RunSummary("random", None, None, seed, metrics))
    table = aggregate(summaries)
    assert len(table) == 1
    assert table.loc[0, "reward_mean"] == pytest.approx(4.0)
    assert table.loc[0, "reward_std"] == pytest.approx(0.0)
    assert table.loc[0, "n_seeds"] == 2


def test_aggregate_matches_brute_force():
    rng = np.random.default_rng(0)
    from veccache.experiments import RunSummary
    summaries = []
    per_seed = {}
    for seed in range(4):
        metrics = [EpisodeMetrics(i, float(rng.normal()), float(rng.random()),
                                  float(rng.random() * 100), 0.05, 0.0)
                   for i in range(30)]
        summaries.append(RunSummary("mgarl", "vu_count", 4, seed, metrics))
        per_seed[seed] = np.mean([m.cumulative_reward for m in metrics[-3:]])
    table = aggregate(summaries)
    vals = np.array(list(per_seed.values()))
    assert table.loc[0, "reward_mean"] == pytest.approx(vals.mean())
    assert table.loc[0, "reward_std"] == pytest.approx(vals.std(ddof=1))


# --- orchestration ------------------------------------------------------------


def test_run_smoke_writes_expected_files(tmp_path):
    spec = ExperimentSpec(config=quick_config(), schemes=("random",), seeds=(0,))
    summaries = run(spec, tmp_path)
    assert len(summaries) == 1
    assert (tmp_path / "random__seed-0.csv").exists()
    assert (tmp_path / "runs_manifest.csv").exists()
    assert (tmp_path / "aggregate.csv").exists()
    manifest = pd.read_csv(tmp_path / "runs_manifest.csv")
    assert manifest.loc[0, "scheme"] == "random"
    assert manifest.loc[0, "vu_count"] == 3


def test_run_deterministic_bytes(tmp_path):
    spec = ExperimentSpec(config=quick_config(), schemes=("mgarl",), seeds=(1,))
    run(spec, tmp_path / "a")
    run(spec, tmp_path / "b")
    fa = (tmp_path / "a" / "mgarl__seed-1.csv").read_bytes()
    fb = (tmp_path / "b" / "mgarl__seed-1.csv").read_bytes()
    assert fa == fb


def test_run_sweep_grid(tmp_path):
    spec = ExperimentSpec(config=quick_config(), schemes=("random",),
                          sweep_var="vu_count", sweep_values=(2, 4), seeds=(0, 1))
    summaries = run(spec, tmp_path)
    assert len(summaries) == 4
    names = {s.csv_path.name for s in summaries}
    assert "random__vu_count-2__seed-0.csv" in names
    agg = pd.read_csv(tmp_path / "aggregate.csv")
    assert len(agg) == 2  # one row per sweep value
    assert set(agg["sweep_value"]) == {2, 4}


# --- report emission -------------------------------------------------------------


def _populated_run_dir(tmp_path):
    spec = ExperimentSpec(config=quick_config(episodes=3),
                          schemes=("random", "mgarl"), seeds=(0, 1))
    run(spec, tmp_path)
    return tmp_path


def test_plotdata_convergence(tmp_path):
    run_dir = _populated_run_dir(tmp_path)
    csv_path, png_path = emit_figure(run_dir, "convergence")
    assert csv_path.exists() and png_path.exists()
    table = pd.read_csv(csv_path)
    assert set(table.columns) == {"scheme", "episode", "reward_mean", "reward_std"}
    assert set(table["scheme"]) == {"random", "mgarl"}
    assert png_path.stat().st_size > 1000


def test_plotdata_hit_and_latency(tmp_path):
    spec = ExperimentSpec(config=quick_config(), schemes=("random",),
                          sweep_var="vu_count", sweep_values=(2, 3), seeds=(0,))
    run(spec, tmp_path)
    csv_path, png_path = emit_figure(tmp_path, "hit")
    table = pd.read_csv(csv_path)
    assert {"scheme", "content_types", "vu_count", "hit_ratio_mean"} <= set(table.columns)
    assert sorted(table["vu_count"]) == [2, 3]

    csv_path, png_path = emit_figure(tmp_path, "latency")
    assert pd.read_csv(csv_path)["latency_mean"].notna().all()
    assert png_path.exists()


def test_plotdata_unknown_figure(tmp_path):
    _populated_run_dir(tmp_path)
    with pytest.raises(ValueError):
        emit_figure(tmp_path, "pie")


# --- CLI ----------------------------------------------------------------------


def test_cli_run_and_plotdata(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.yaml"
    write_default_config(cfg_path, desk=True)
    out_dir = tmp_path / "runs"
    rc = cli.main([
        "run", "--config", str(cfg_path), "--scheme", "random",
        "--seeds", "0,1", "--episodes", "2", "--out", str(out_dir)])
    assert rc == 0
    assert (out_dir / "random__seed-0.csv").exists()
    captured = capsys.readouterr()
    assert "wrote 2 runs" in captured.out

    rc = cli.main(["plotdata", "--in", str(out_dir), "--figure", "convergence"])
    assert rc == 0
    assert (out_dir / "convergence.csv").exists()
    assert (out_dir / "convergence.png").exists()


def test_cli_sweep_parsing_and_errors(tmp_path, capsys):
    rc = cli.main(["run", "--scheme", "random", "--seeds", "0",
                   "--episodes", "1", "--sweep", "bogus", "--out", str(tmp_path)])
    assert rc == 2
    assert "sweep" in capsys.readouterr().err

    rc = cli.main(["plotdata", "--in", str(tmp_path / "nope"), "--figure", "hit"])
    assert rc == 2


def test_cli_init_config(tmp_path):
    path = tmp_path / "generated.yaml"
    assert cli.main(["init-config", str(path)]) == 0
    assert load_config(path) == default_config()
