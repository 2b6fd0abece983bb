# -*- coding: utf-8 -*-

from __future__ import annotations

import json

import pytest

from errores import CorruptLog
from procesador_registros import (
    RunLogProcessor,
    check_records,
    finite_or_none,
    read_jsonl,
    summary_json,
)


def _efe(risk: float, ambiguity: float, novelty: float) -> dict:
    return {"risk": risk, "ambiguity": ambiguity, "novelty": novelty, "total": risk + ambiguity - novelty}


def _record(episode: int, t: int, *, fe=1.0, gain=0.1, pig=None, success=None, efe=None) -> dict:
    return {
        "episode": episode,
        "t": t,
        "action": 0,
        "observation": [0, 0, 0],
        "efe": efe,
        "free_energy": fe,
        "info_gain": gain,
        "param_info_gain": pig,
        "success": success,
        "wall_clock": None,
    }


def _records() -> list[dict]:
    return [
        _record(0, 0, fe=2.0, gain=0.0, efe=[_efe(1.0, 0.5, 0.25), _efe(0.3, 0.2, 0.0)]),
        _record(0, 1, fe=3.0, gain=0.7),
        _record(0, 2, fe=3.5, gain=0.0, pig=0.4, success=True),
        _record(1, 0, fe=1.0, gain=0.0),
        _record(1, 1, fe=1.5, gain=0.2, pig=0.1, success=False),
    ]


def _write_run(tmp_path, records: list[dict]):
    logs = tmp_path / "logs"
    logs.mkdir(parents=True)
    text = "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)
    (logs / "records.jsonl").write_text(text, encoding="utf-8")
    return tmp_path


# ---------------------------------------------------------------------------
# read_jsonl
# ---------------------------------------------------------------------------

def test_read_jsonl_reads_complete_lines(tmp_path):
    path = tmp_path / "a.jsonl"
    path.write_text('{"a": 1}\n{"a": 2}\n', encoding="utf-8")
    assert read_jsonl(path) == [{"a": 1}, {"a": 2}]
    empty = tmp_path / "empty.jsonl"
    empty.write_text("", encoding="utf-8")
    assert read_jsonl(empty) == []


def test_read_jsonl_truncated_last_line(tmp_path):
    path = tmp_path / "a.jsonl"
    path.write_text('{"a": 1}\n{"a": 2}\n{"a": ', encoding="utf-8")
    with pytest.raises(CorruptLog) as info:
        read_jsonl(path)
    assert info.value.line == 2


def test_read_jsonl_bad_line_and_missing_file(tmp_path):
    path = tmp_path / "a.jsonl"
    path.write_text('{"a": 1}\nnot json\n{"a": 3}\n', encoding="utf-8")
    with pytest.raises(CorruptLog) as info:
        read_jsonl(path)
    assert info.value.line == 1
    with pytest.raises(CorruptLog):
        read_jsonl(tmp_path / "missing.jsonl")


def test_finite_or_none():
    assert finite_or_none(None) is None
    assert finite_or_none(float("nan")) is None
    assert finite_or_none(float("inf")) is None
    assert finite_or_none(2) == 2.0


# ---------------------------------------------------------------------------
# check_records
# ---------------------------------------------------------------------------

def test_check_records_accepts_valid_run():
    check_records(_records())


def test_check_records_missing_field():
    recs = _records()
    del recs[2]["info_gain"]
    with pytest.raises(CorruptLog) as info:
        check_records(recs)
    assert info.value.record_index == 2


def test_check_records_order():
    recs = _records()
    recs[3], recs[4] = recs[4], recs[3]
    with pytest.raises(CorruptLog) as info:
        check_records(recs)
    assert info.value.record_index == 4


def test_check_records_edited_efe_total():
    recs = _records()
    recs[0]["efe"][1]["total"] += 1e-9
    with pytest.raises(CorruptLog) as info:
        check_records(recs)
    assert info.value.record_index == 0
    assert info.value.line == 1


def test_check_records_non_finite_free_energy():
    recs = _records()
    recs[1]["free_energy"] = float("nan")
    with pytest.raises(CorruptLog) as info:
        check_records(recs)
    assert info.value.record_index == 1


# ---------------------------------------------------------------------------
# Tablas y resumen
# ---------------------------------------------------------------------------

def test_episodes_frame_uses_last_step_and_sums_gains():
    df = RunLogProcessor.episodes_frame(_records())
    assert df["episode"].tolist() == [0, 1]
    assert df["steps"].tolist() == [3, 2]
    assert df["free_energy"].tolist() == [3.5, 1.5]
    assert df["info_gain"].tolist() == pytest.approx([0.7, 0.2])
    assert df["cumulative_param_info_gain"].tolist() == pytest.approx([0.4, 0.5])
    assert df["success"].tolist() == [True, False]


def test_steps_frame_summarises_efe():
    df = RunLogProcessor.steps_frame(_records())
    assert df.shape[0] == 5
    assert df["n_policies"].tolist() == [2, 0, 0, 0, 0]
    assert df["efe_min"].iloc[0] == pytest.approx(0.5)


def test_summarize_values():
    summary = RunLogProcessor.summarize(_records())
    assert summary["episodes"] == 2
    assert summary["steps"] == 5
    assert summary["mean_free_energy"] == pytest.approx(2.5)
    assert summary["episode_free_energy"] == [3.5, 1.5]
    assert summary["cumulative_param_info_gain"] == pytest.approx(0.5)
    assert summary["success_rate"] == pytest.approx(0.5)


def test_summarize_without_records():
    summary = RunLogProcessor.summarize([])
    assert summary["episodes"] == 0
    assert summary["mean_free_energy"] is None
    assert summary["success_rate"] is None


def test_summary_json_is_canonical():
    a = RunLogProcessor.summarize(_records())
    b = dict(reversed(list(a.items())))
    assert summary_json(a) == summary_json(b)
    assert summary_json(a).endswith("}\n")


def test_processor_loads_run_directory(tmp_path):
    run = _write_run(tmp_path, _records())
    (run / "logs" / "episodes.jsonl").write_text(
        json.dumps({"episode": 0, "t": 0, "action": None, "observation": [0], "hidden": {"arm": 1}}) + "\n",
        encoding="utf-8",
    )
    proc = RunLogProcessor(run)
    assert len(proc.load_records()) == 5
    dfs = proc.load_all()
    assert set(dfs) == {"pasos", "episodios", "entorno"}
    assert dfs["entorno"]["hidden"].iloc[0] == '{"arm": 1}'


def test_processor_rejects_corrupt_run(tmp_path):
    recs = _records()
    recs[4]["efe"] = [{"risk": 1.0, "ambiguity": 1.0, "novelty": 0.0, "total": 3.0}]
    run = _write_run(tmp_path, recs)
    with pytest.raises(CorruptLog) as info:
        RunLogProcessor(run).load_records()
    assert info.value.record_index == 4
