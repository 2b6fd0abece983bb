# -*- coding: utf-8 -*-

from __future__ import annotations

import json

import pandas as pd
import pytest

from errores import ConfigError, CorruptLog
from experiment_bridge import build_experiment_config
from experimento import WorldModelExperiment, derive_seed
from exportacion import METRIC_TABLES, read_trajectory


def _tmaze_cfg(**overrides) -> dict:
    cfg = {
        "format_version": 1,
        "seed": 7,
        "run_name": "tmaze",
        "episodes": 3,
        "environment": {"name": "tmaze", "reward_prob": 0.9},
        "agent": {"model": "ground_truth", "learn": ["A"], "reward_pref": 3.0, "reward_prior": "flat"},
    }
    cfg.update(overrides)
    return cfg


def _pool_cfg(**overrides) -> dict:
    cfg = {
        "format_version": 1,
        "seed": 11,
        "run_name": "pool",
        "episodes": 2,
        "steps_per_episode": 10,
        "environment": {"name": "pool"},
        "agent": {"model": "ground_truth", "learning_rate": 0.0},
    }
    cfg.update(overrides)
    return cfg


def _run(tmp_path, cfg: dict):
    return WorldModelExperiment(base_dir=tmp_path).run(build_experiment_config(cfg))


def test_derive_seed_depends_only_on_counters():
    assert derive_seed(7, 0, 1) == derive_seed(7, 0, 1)
    assert derive_seed(7, 0, 1) != derive_seed(7, 1, 1)
    assert derive_seed(7, 0) != derive_seed(8, 0)


def test_same_seed_gives_identical_records(tmp_path):
    a = _run(tmp_path / "a", _tmaze_cfg())
    b = _run(tmp_path / "b", _tmaze_cfg())
    for name in ("logs/records.jsonl", "summary.json", "model.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_run_writes_run_directory(tmp_path):
    run_dir = _run(tmp_path, _tmaze_cfg())
    assert run_dir == tmp_path / "runs" / "tmaze"
    records = [json.loads(l) for l in (run_dir / "logs" / "records.jsonl").read_text(encoding="utf-8").splitlines()]
    # tres pasos por episodio en el T-maze
    assert len(records) == 9
    assert records[0]["efe"] is not None and len(records[0]["efe"]) == 16
    assert records[2]["param_info_gain"] is not None and records[2]["success"] in (True, False)
    summary = json.loads((run_dir / "summary.json").read_text(encoding="utf-8"))
    assert summary["episodes"] == 3 and summary["steps"] == 9
    assert json.loads((run_dir / "config.json").read_text(encoding="utf-8"))["seed"] == 7


def test_replay_matches_summary(tmp_path):
    run_dir = _run(tmp_path, _tmaze_cfg())
    stored = json.loads((run_dir / "summary.json").read_text(encoding="utf-8"))
    assert WorldModelExperiment().replay(run_dir) == stored


def test_replay_rejects_truncated_log(tmp_path):
    run_dir = _run(tmp_path, _tmaze_cfg())
    path = run_dir / "logs" / "records.jsonl"
    path.write_text(path.read_text(encoding="utf-8")[:-20], encoding="utf-8")
    with pytest.raises(CorruptLog) as info:
        WorldModelExperiment().replay(run_dir)
    assert info.value.line == 8


def test_replay_rejects_edited_efe(tmp_path):
    run_dir = _run(tmp_path, _tmaze_cfg())
    path = run_dir / "logs" / "records.jsonl"
    lines = path.read_text(encoding="utf-8").splitlines()
    rec = json.loads(lines[3])
    rec["efe"][0]["risk"] += 0.5
    lines[3] = json.dumps(rec, sort_keys=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    with pytest.raises(CorruptLog) as info:
        WorldModelExperiment().replay(run_dir)
    assert info.value.record_index == 3


def test_replay_rejects_edited_free_energy(tmp_path):
    run_dir = _run(tmp_path, _tmaze_cfg())
    path = run_dir / "logs" / "records.jsonl"
    lines = path.read_text(encoding="utf-8").splitlines()
    rec = json.loads(lines[-1])
    rec["free_energy"] += 1.0
    lines[-1] = json.dumps(rec, sort_keys=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    with pytest.raises(CorruptLog):
        WorldModelExperiment().replay(run_dir)


def test_plots_one_row_per_episode(tmp_path):
    run_dir = _run(tmp_path, _tmaze_cfg())
    paths = WorldModelExperiment().emit_plots(run_dir, crear_excel=False)
    assert len(paths) == len(METRIC_TABLES)
    df = pd.read_csv(run_dir / "plots" / "free_energy.csv")
    assert df["episode"].tolist() == [0, 1, 2]
    assert not (run_dir / "export").exists()


def test_zero_episodes_gives_header_only_tables(tmp_path):
    run_dir = _run(tmp_path, _tmaze_cfg(episodes=0))
    summary = WorldModelExperiment().replay(run_dir)
    assert summary["episodes"] == 0 and summary["steps"] == 0
    for name, cols in METRIC_TABLES.items():
        assert (run_dir / "plots" / f"{name}.csv").read_text(encoding="utf-8") == ",".join(cols) + "\n"


def test_pool_run_writes_trajectories(tmp_path):
    run_dir = _run(tmp_path, _pool_cfg())
    files = sorted((run_dir / "trajectories").glob("*.csv"))
    assert [f.name for f in files] == ["episode_0000.csv", "episode_0001.csv"]
    y, dt, regimes = read_trajectory(files[0])
    assert y.shape == (11, 2)
    assert dt == 0.05
    assert regimes.shape == (11,)
    summary = WorldModelExperiment().replay(run_dir)
    assert summary["steps"] == 22
    assert summary["success_rate"] is None


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        build_experiment_config(_tmaze_cfg(environment={"name": "cartpole"}))
    with pytest.raises(ConfigError):
        build_experiment_config(_tmaze_cfg(format_version=2))
    with pytest.raises(ConfigError):
        build_experiment_config({k: v for k, v in _tmaze_cfg().items() if k != "seed"})
    with pytest.raises(ConfigError):
        build_experiment_config(_tmaze_cfg(episodes=-1))
    with pytest.raises(ConfigError):
        build_experiment_config(_tmaze_cfg(search={"init": {"family": "fractal"}}))


def test_run_rejects_search_block_outside_pool(tmp_path):
    cfg = _tmaze_cfg(search={"init": {"family": "discrete", "factor_sizes": [2], "horizon": 1}})
    with pytest.raises(ConfigError):
        _run(tmp_path, cfg)


def test_tmaze_needs_ground_truth_model(tmp_path):
    cfg = _tmaze_cfg()
    cfg["agent"] = dict(cfg["agent"], model="default")
    with pytest.raises(ConfigError):
        _run(tmp_path, cfg)


def test_search_needs_search_block(tmp_path):
    with pytest.raises(ConfigError):
        WorldModelExperiment(base_dir=tmp_path).search(build_experiment_config(_tmaze_cfg()))


def test_search_writes_trace_and_best(tmp_path):
    cfg = _tmaze_cfg(
        run_name="search",
        search={
            "init": {"family": "discrete", "factor_sizes": [2], "horizon": 1},
            "move_budget": 1,
            "fit_budget": 20,
            "data": {"source": "synthetic", "episodes": 3, "steps": 6, "generator": {"factor_sizes": [2]}},
        },
    )
    run_dir = WorldModelExperiment(base_dir=tmp_path).search(build_experiment_config(cfg))
    trace = (run_dir / "search" / "trace.jsonl").read_text(encoding="utf-8").splitlines()
    assert json.loads(trace[0])["role"] == "init"
    best = json.loads((run_dir / "search" / "best.json").read_text(encoding="utf-8"))
    assert best["knobs"]["family"] == "discrete"
    assert best["fits"] <= 20
    assert not (run_dir / "search" / "model.json").exists()


def test_search_on_tmaze_rollouts(tmp_path):
    cfg = _tmaze_cfg(
        run_name="search_tmaze",
        search={
            "init": {"family": "discrete", "factor_sizes": [2], "horizon": 1},
            "move_budget": 1,
            "data": {"source": "environment", "episodes": 4},
        },
    )
    run_dir = WorldModelExperiment(base_dir=tmp_path).search(build_experiment_config(cfg))
    assert (run_dir / "search" / "best.json").is_file()


@pytest.mark.slow
def test_pool_run_with_structure_search(tmp_path):
    cfg = _pool_cfg(
        run_name="pool_search",
        search={
            "init": {"family": "continuous", "K": 1, "order_n": 0},
            "move_budget": 1,
            "fit_budget": 5,
            "data": {"source": "environment", "episodes": 2, "steps": 20},
        },
    )
    run_dir = _run(tmp_path, cfg)
    assert (run_dir / "search" / "model.json").is_file()
    assert (run_dir / "model.json").is_file()
