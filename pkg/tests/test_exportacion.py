# -*- coding: utf-8 -*-

from __future__ import annotations

import numpy as np
import pandas as pd
import pytest

import exportacion
from exportacion import (
    METRIC_TABLES,
    export_metric_tables,
    export_report,
    get_table_meta,
    read_trajectory,
    read_trajectory_dir,
    write_trajectory,
)


def _episodes() -> pd.DataFrame:
    return pd.DataFrame({
        "episode": [0, 1],
        "steps": [3, 3],
        "free_energy": [2.5, 1.75],
        "info_gain": [0.7, 0.1],
        "param_info_gain": [0.2, 0.05],
        "cumulative_param_info_gain": [0.2, 0.25],
        "success": [True, False],
    })


def test_metric_tables_one_row_per_episode(tmp_path):
    paths = export_metric_tables(_episodes(), tmp_path / "plots")
    assert sorted(p.stem for p in paths) == sorted(METRIC_TABLES)
    fe = pd.read_csv(tmp_path / "plots" / "free_energy.csv")
    assert fe.columns.tolist() == ["episode", "free_energy"]
    assert fe["free_energy"].tolist() == [2.5, 1.75]
    ig = pd.read_csv(tmp_path / "plots" / "info_gain.csv")
    assert ig.shape == (2, 4)


def test_metric_tables_without_episodes_keep_headers(tmp_path):
    export_metric_tables(pd.DataFrame(), tmp_path)
    for name, cols in METRIC_TABLES.items():
        text = (tmp_path / f"{name}.csv").read_text(encoding="utf-8")
        assert text == ",".join(cols) + "\n"


def test_table_meta_fallback_is_truncated():
    assert get_table_meta("episodios")[0] == "EPISODIOS"
    name, desc = get_table_meta("x" * 40)
    assert len(name) == 31
    assert "x" * 40 in desc


def test_trajectory_file_round_trip_keeps_exact_values(tmp_path):
    y = np.array([[0.1, 1.0 / 3.0], [np.pi, -2e-9], [5.0, 0.0]])
    path = write_trajectory(tmp_path / "t" / "a.csv", y, 0.01, regimes=[0, 2, 1])
    assert path.read_text(encoding="utf-8").splitlines()[0] == "# dims=2 steps=3 dt=0.01 regimes=1"
    back, dt, regimes = read_trajectory(path)
    assert np.array_equal(back, y)
    assert dt == 0.01
    assert regimes.tolist() == [0, 2, 1]


def test_one_dimensional_trajectory_is_a_column(tmp_path):
    path = write_trajectory(tmp_path / "a.csv", [1.0, 2.0, 3.0], 0.1)
    y, _, regimes = read_trajectory(path)
    assert y.shape == (3, 1)
    assert regimes is None


def test_trajectory_errors(tmp_path):
    with pytest.raises(ValueError):
        write_trajectory(tmp_path / "a.csv", np.zeros((3, 1)), 0.1, regimes=[0, 1])
    bad = tmp_path / "bad.csv"
    bad.write_text("# dims=1 steps=4 dt=0.1 regimes=0\n1.0\n2.0\n", encoding="utf-8")
    with pytest.raises(ValueError):
        read_trajectory(bad)
    headless = tmp_path / "headless.csv"
    headless.write_text("1.0\n", encoding="utf-8")
    with pytest.raises(ValueError):
        read_trajectory(headless)


def test_trajectory_dir_needs_common_dt(tmp_path):
    write_trajectory(tmp_path / "a.csv", np.zeros((4, 2)), 0.1)
    write_trajectory(tmp_path / "b.csv", np.ones((6, 2)), 0.1)
    ys, dt = read_trajectory_dir(tmp_path)
    assert [y.shape for y in ys] == [(4, 2), (6, 2)]
    assert dt == 0.1
    write_trajectory(tmp_path / "c.csv", np.ones((2, 2)), 0.2)
    with pytest.raises(ValueError):
        read_trajectory_dir(tmp_path)
    with pytest.raises(ValueError):
        read_trajectory_dir(tmp_path / "empty")


def test_export_report_writes_excel_and_legible_csv(tmp_path):
    pytest.importorskip("openpyxl")
    dfs = {"episodios": _episodes(), "pasos": pd.DataFrame()}
    export_report(dfs, tmp_path / "export", summary={"episodes": 2, "episode_free_energy": [2.5, 1.75]})
    assert (tmp_path / "export" / "resumen_experimento.xlsx").is_file()
    assert (tmp_path / "export" / "legible" / "episodios.csv").is_file()
    sheets = pd.read_excel(tmp_path / "export" / "resumen_experimento.xlsx", sheet_name=None)
    assert {"EPISODIOS", "PASOS", "RESUMEN"} <= set(sheets)


def test_export_report_pdf(tmp_path):
    if not exportacion._REPORTLAB_AVAILABLE:
        pytest.skip("reportlab no instalado")
    export_report({"episodios": _episodes()}, tmp_path, crear_excel=False, crear_pdf=True)
    assert (tmp_path / "resumen_experimento.pdf").is_file()
    assert not (tmp_path / "resumen_experimento.xlsx").exists()
