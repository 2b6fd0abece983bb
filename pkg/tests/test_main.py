# -*- coding: utf-8 -*-

from __future__ import annotations

import json
import sys

import pytest

from conftest import ROOT_DIR

if str(ROOT_DIR) not in sys.path:
    sys.path.insert(0, str(ROOT_DIR))

import main  # noqa: E402


def _write_cfg(tmp_path, **overrides):
    cfg = {
        "format_version": 1,
        "seed": 1,
        "run_name": "cli",
        "episodes": 1,
        "environment": {"name": "tmaze"},
        "agent": {"model": "ground_truth", "learn": []},
    }
    cfg.update(overrides)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg), encoding="utf-8")
    return path


def test_run_then_replay_and_plots(tmp_path, capsys):
    cfg = _write_cfg(tmp_path)
    out = tmp_path / "runs"
    assert main.main(["run", str(cfg), "--out", str(out)]) == main.EXIT_OK
    run_dir = out / "cli"
    assert str(run_dir) in capsys.readouterr().out
    assert main.main(["replay", str(run_dir)]) == main.EXIT_OK
    assert main.main(["plots", str(run_dir), "--no-excel"]) == main.EXIT_OK
    assert (run_dir / "plots" / "success.csv").is_file()


def test_seed_override_replaces_missing_seed(tmp_path):
    cfg = _write_cfg(tmp_path, seed=None)
    assert main.main(["run", str(cfg), "--out", str(tmp_path / "runs")]) == main.EXIT_CONFIG
    assert main.main(["run", str(cfg), "--seed", "4", "--out", str(tmp_path / "runs")]) == main.EXIT_OK
    saved = json.loads((tmp_path / "runs" / "cli" / "config.json").read_text(encoding="utf-8"))
    assert saved["seed"] == 4


def test_invalid_config_exits_with_config_code(tmp_path, capsys):
    cfg = _write_cfg(tmp_path, environment={"name": "cartpole"})
    assert main.main(["run", str(cfg)]) == main.EXIT_CONFIG
    assert "environment.name" in capsys.readouterr().err
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    assert main.main(["search", str(bad)]) == main.EXIT_CONFIG


def test_runtime_failure_exits_with_one(tmp_path):
    assert main.main(["replay", str(tmp_path / "nowhere")]) == main.EXIT_RUNTIME


def test_unknown_command_is_rejected():
    with pytest.raises(SystemExit):
        main.main(["dance"])
