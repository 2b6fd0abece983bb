#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
exportacion.py
---------------
Módulo de EXPORTACIÓN de los experimentos de modelos del mundo.

Responsabilidades:
- Recibir DataFrames YA NORMALIZADOS desde procesador_registros.RunLogProcessor.
- Exportar esos DataFrames a:
    * CSV de métricas (plots/: curva de energía libre, ganancia de
      información, éxito por episodio)
    * CSV legibles (export/legible)
    * Excel (resumen_experimento.xlsx)
    * PDF simple (tablas)  [opcional, si reportlab está instalado]
- Leer y escribir archivos de trayectoria continua.

Todo lo que sea lectura de logs o cálculo de métricas se hace en
procesador_registros.py; aquí solo formateamos y guardamos.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Sequence

import numpy as np
import pandas as pd

try:
    from openpyxl.utils import get_column_letter
except Exception:  # sin openpyxl no hay auto-ancho
    get_column_letter = None

try:
    from reportlab.lib import colors
    from reportlab.lib.pagesizes import A4
    from reportlab.platypus import (
        SimpleDocTemplate,
        Table,
        TableStyle,
        Paragraph,
        Spacer,
    )
    from reportlab.lib.styles import getSampleStyleSheet

    _REPORTLAB_AVAILABLE = True
except Exception:
    _REPORTLAB_AVAILABLE = False


# ---------------------------------------------------------------------------
# Meta de tablas: nombre de hoja y descripción
# ---------------------------------------------------------------------------

TABLE_META: dict[str, dict[str, str]] = {
    "episodios": {
        "name": "EPISODIOS",
        "desc": "Energía libre, ganancia de información y éxito por episodio.",
    },
    "pasos": {
        "name": "PASOS",
        "desc": "Un registro por paso: acción, observación, energía libre y EFE mínima.",
    },
    "entorno": {
        "name": "ENTORNO",
        "desc": "Log del entorno; el estado oculto es solo diagnóstico.",
    },
    "busqueda": {
        "name": "BUSQUEDA",
        "desc": "Candidatos evaluados por la búsqueda de estructura.",
    },
}

# columnas de cada tabla de métricas (plots/)
METRIC_TABLES: dict[str, tuple[str, ...]] = {
    "free_energy": ("episode", "free_energy"),
    "info_gain": ("episode", "info_gain", "param_info_gain", "cumulative_param_info_gain"),
    "success": ("episode", "success"),
}

DFMap = Dict[str, pd.DataFrame]


def get_table_meta(key: str) -> tuple[str, str]:
    """Devuelve (nombre_hoja, descripcion) amigables para una tabla."""
    info = TABLE_META.get(
        key,
        {
            "name": key.upper(),
            "desc": f"Tabla '{key}' exportada automáticamente.",
        },
    )
    return info["name"][:31], info["desc"]  # Excel solo acepta 31 caracteres


# ---------------------------------------------------------------------------
# 1) Tablas de métricas
# ---------------------------------------------------------------------------

def export_metric_tables(episodes: pd.DataFrame, plots_dir: Path) -> list[Path]:
    """
    Una tabla CSV por métrica, una fila por episodio. Sin episodios se
    escriben solo las cabeceras.
    """
    plots_dir = Path(plots_dir)
    plots_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, cols in METRIC_TABLES.items():
        df = episodes.reindex(columns=list(cols)) if not episodes.empty else pd.DataFrame(columns=list(cols))
        path = plots_dir / f"{name}.csv"
        df.to_csv(path, index=False, encoding="utf-8", lineterminator="\n")
        print(f"  [CSV] {path.name}")
        paths.append(path)
    return paths


def export_csv_legible(dfs: DFMap, legible_dir: Path) -> list[Path]:
    """Copia CSV de cada tabla (utf-8-sig para que Excel respete los acentos)."""
    legible_dir = Path(legible_dir)
    legible_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for key in sorted(dfs):
        path = legible_dir / f"{key}.csv"
        dfs[key].to_csv(path, index=False, encoding="utf-8-sig")
        paths.append(path)
    print(f"  [CSV] {len(paths)} tabla(s) legibles en {legible_dir}")
    return paths


# ---------------------------------------------------------------------------
# 2) Reporte Excel / PDF
# ---------------------------------------------------------------------------

HEADER_ROWS = 3  # descripción + nº de filas antes de la tabla


def summary_frame(summary: dict) -> pd.DataFrame:
    """Métricas escalares del resumen; las curvas por episodio ya tienen su tabla."""
    rows = [
        {"Métrica": k, "Valor": "" if v is None else v}
        for k, v in sorted(summary.items())
        if not isinstance(v, (list, dict))
    ]
    return pd.DataFrame(rows, columns=["Métrica", "Valor"])


def _or_placeholder(df: Optional[pd.DataFrame]) -> pd.DataFrame:
    return pd.DataFrame({"INFO": ["Sin registros."]}) if df is None or df.empty else df


def _fit_columns(ws, df: pd.DataFrame) -> None:
    if get_column_letter is None:
        return
    for idx, col in enumerate(df.columns, start=1):
        longest = max([len(str(col))] + [len(str(v)) for v in df[col].head(200)])
        ws.column_dimensions[get_column_letter(idx)].width = min(longest + 2, 60)


@dataclass
class ExperimentReport:
    """
    Reporte de una ejecución: hoja RESUMEN con las métricas escalares y una
    hoja por tabla de RunLogProcessor.load_all(). El PDF repite las mismas
    tablas (recortadas a `max_rows_per_table`).
    """

    dfs: DFMap
    excel_path: Path
    run_name: str | None = None
    summary: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.excel_path = Path(self.excel_path)
        if self.run_name is None:
            # .../<run>/export/resumen_experimento.xlsx
            self.run_name = self.excel_path.parent.parent.name

    def sheets(self) -> list[tuple[str, str, pd.DataFrame]]:
        """(hoja, descripción, tabla): RESUMEN primero y luego por clave."""
        out = [("RESUMEN", f"Ejecución {self.run_name}: métricas del resumen.", summary_frame(self.summary))]
        for key in sorted(self.dfs):
            name, desc = get_table_meta(key)
            out.append((name, desc, _or_placeholder(self.dfs[key])))
        return out

    def build(self) -> Optional[Path]:
        if not self.dfs and not self.summary:
            print("  [XLSX] Sin tablas ni resumen; Excel no generado.")
            return None
        self.excel_path.parent.mkdir(parents=True, exist_ok=True)
        try:
            with pd.ExcelWriter(self.excel_path, engine="openpyxl") as writer:
                for name, desc, df in self.sheets():
                    df.to_excel(writer, sheet_name=name, index=False, startrow=HEADER_ROWS)
                    ws = writer.sheets[name]
                    ws.cell(row=1, column=1, value=desc)
                    ws.cell(row=2, column=1, value=f"{df.shape[0]} fila(s)")
                    ws.freeze_panes = ws.cell(row=HEADER_ROWS + 2, column=1)
                    _fit_columns(ws, df)
        except Exception as e:
            print(f"  [!] Excel no generado ({self.excel_path.name}): {e}")
            return None
        print(f"  [XLSX] {self.excel_path}")
        return self.excel_path

    def build_pdf(self, pdf_path: Path, max_rows_per_table: int = 200) -> Optional[Path]:
        if not _REPORTLAB_AVAILABLE:
            print("  [PDF] reportlab no está instalado; se omite el PDF.")
            return None
        styles = getSampleStyleSheet()
        style = TableStyle([
            ("BACKGROUND", (0, 0), (-1, 0), colors.lightgrey),
            ("GRID", (0, 0), (-1, -1), 0.25, colors.grey),
            ("FONTNAME", (0, 0), (-1, 0), "Helvetica-Bold"),
            ("FONTSIZE", (0, 0), (-1, -1), 7),
            ("VALIGN", (0, 0), (-1, -1), "TOP"),
        ])
        story = [Paragraph(f"Experimento {self.run_name}", styles["Title"])]
        for name, desc, df in self.sheets():
            head = df.head(max_rows_per_table)
            table = Table([[str(c) for c in head.columns]] + head.astype(str).values.tolist(), repeatRows=1)
            table.setStyle(style)
            story += [Paragraph(name, styles["Heading2"]), Paragraph(desc, styles["Normal"]), Spacer(1, 6), table, Spacer(1, 18)]

        pdf_path = Path(pdf_path)
        pdf_path.parent.mkdir(parents=True, exist_ok=True)
        try:
            SimpleDocTemplate(str(pdf_path), pagesize=A4).build(story)
        except Exception as e:
            print(f"  [!] PDF no generado ({pdf_path.name}): {e}")
            return None
        print(f"  [PDF] {pdf_path}")
        return pdf_path


def export_report(
    dfs: DFMap,
    export_dir: Path,
    summary: Optional[dict] = None,
    crear_excel: bool = True,
    crear_pdf: bool = False,
) -> list[Path]:
    """
    CSV legibles en export/legible y, según las banderas, Excel y PDF en
    export/. Devuelve los archivos escritos.
    """
    export_dir = Path(export_dir)
    print(f"\n[*] Exportando reporte en {export_dir}")
    written = export_csv_legible(dfs, export_dir / "legible")
    report = ExperimentReport(dfs=dfs, excel_path=export_dir / "resumen_experimento.xlsx", summary=summary or {})
    if crear_excel:
        written += [p for p in (report.build(),) if p is not None]
    if crear_pdf:
        written += [p for p in (report.build_pdf(export_dir / "resumen_experimento.pdf"),) if p is not None]
    return written


# ---------------------------------------------------------------------------
# 3) Archivos de trayectoria
# ---------------------------------------------------------------------------
# Formato: una trayectoria por archivo.
#   # dims=<p> steps=<T> dt=<dt> regimes=<0|1>
#   y_1,...,y_p[,regimen]
# La columna de régimen es solo diagnóstica.

def write_trajectory(path: Path, y, dt: float, regimes: Optional[Sequence[int]] = None) -> Path:
    ys = np.atleast_2d(np.asarray(y, dtype=float))
    if ys.shape[0] == 1 and np.asarray(y).ndim == 1:
        ys = ys.T
    T, p = ys.shape
    df = pd.DataFrame(ys, columns=[f"y{i}" for i in range(p)])
    if regimes is not None:
        reg = np.asarray(regimes, dtype=int)
        if reg.shape != (T,):
            raise ValueError(f"regimes necesita {T} entradas, recibido {reg.shape}")
        df["regime"] = reg
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    buf.write(f"# dims={p} steps={T} dt={float(dt)!r} regimes={int(regimes is not None)}\n")
    df.to_csv(buf, index=False, header=False, float_format="%.17g", lineterminator="\n")
    path.write_text(buf.getvalue(), encoding="utf-8")
    return path


def _parse_header(line: str) -> dict:
    if not line.startswith("#"):
        raise ValueError("Archivo de trayectoria sin cabecera '# dims=... steps=... dt=...'")
    fields = dict(tok.split("=", 1) for tok in line[1:].split() if "=" in tok)
    try:
        return {
            "dims": int(fields["dims"]),
            "steps": int(fields["steps"]),
            "dt": float(fields["dt"]),
            "regimes": bool(int(fields.get("regimes", "0"))),
        }
    except (KeyError, ValueError) as e:
        raise ValueError(f"Cabecera de trayectoria inválida: {line.strip()!r}") from e


def read_trajectory(path: Path) -> tuple[np.ndarray, float, Optional[np.ndarray]]:
    """Devuelve (y (T, p), dt, regímenes o None)."""
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        header = _parse_header(fh.readline())
        df = pd.read_csv(fh, header=None)
    p, T = header["dims"], header["steps"]
    want = p + int(header["regimes"])
    if df.shape != (T, want):
        raise ValueError(f"{path.name}: {df.shape} no coincide con la cabecera ({T}, {want})")
    y = df.iloc[:, :p].to_numpy(dtype=float)
    regimes = df.iloc[:, p].to_numpy(dtype=int) if header["regimes"] else None
    return y, header["dt"], regimes


def read_trajectory_dir(folder: Path) -> tuple[list[np.ndarray], float]:
    """Todas las trayectorias *.csv de una carpeta (orden alfabético); dt común."""
    files = sorted(Path(folder).glob("*.csv"))
    if not files:
        raise ValueError(f"No hay trayectorias en {folder}")
    ys, dts = [], set()
    for f in files:
        y, dt, _ = read_trajectory(f)
        ys.append(y)
        dts.add(dt)
    if len(dts) != 1:
        raise ValueError(f"Las trayectorias de {folder} tienen dt distintos: {sorted(dts)}")
    return ys, dts.pop()
