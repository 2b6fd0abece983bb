#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
procesador_registros.py
-----------------------
Lee los logs de una ejecución (JSON por líneas) y los convierte en
estructuras legibles (pandas.DataFrame) y en el resumen de métricas.

Responsabilidades:
- Leer logs/records.jsonl con validación estricta (líneas truncadas,
  JSON inválido, orden (episodio, t), integridad de los campos EFE).
- Construir las tablas por paso y por episodio.
- Calcular el resumen (summary.json) de forma determinista: run() y
  replay() usan la misma función sobre los mismos registros.

Exportar (CSV / Excel / PDF) lo hace exportacion.py.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import pandas as pd

from errores import CorruptLog

SUMMARY_VERSION = 1
EFE_TOL = 1e-12

RECORD_FIELDS = (
    "episode",
    "t",
    "action",
    "observation",
    "efe",
    "free_energy",
    "info_gain",
    "param_info_gain",
    "success",
    "wall_clock",
)


# ---------------------------------------------------------------------------
# Lectura de JSON por líneas
# ---------------------------------------------------------------------------

def read_jsonl(path: Path) -> list[dict]:
    """
    Lee un archivo JSON por líneas. Un archivo sin salto de línea final o
    con una línea ilegible lanza CorruptLog con la última línea válida.
    """
    path = Path(path)
    if not path.exists():
        raise CorruptLog(f"No existe el log {path}", line=0)
    text = path.read_text(encoding="utf-8")
    if not text:
        return []
    lines = text.split("\n")
    truncated = lines[-1] != ""
    body = lines[:-1] if not truncated else lines
    out = []
    for n, line in enumerate(body, start=1):
        if truncated and n == len(body):
            raise CorruptLog(f"{path.name}: línea {n} truncada; última línea válida {n - 1}", line=n - 1)
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise CorruptLog(f"{path.name}: línea {n} ilegible ({e}); última línea válida {n - 1}", line=n - 1) from e
        if not isinstance(rec, dict):
            raise CorruptLog(f"{path.name}: línea {n} no es un objeto; última línea válida {n - 1}", line=n - 1)
        out.append(rec)
    return out


def finite_or_none(x) -> Optional[float]:
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else None


# ---------------------------------------------------------------------------
# Validación de RunRecords
# ---------------------------------------------------------------------------

def check_records(records: list[dict]) -> None:
    """Campos completos, orden (episodio, t) creciente y total = riesgo + ambigüedad - novedad."""
    prev = None
    for i, rec in enumerate(records):
        missing = [k for k in RECORD_FIELDS if k not in rec]
        if missing:
            raise CorruptLog(f"Registro {i}: faltan campos {missing}", line=i + 1, record_index=i)
        key = (int(rec["episode"]), int(rec["t"]))
        if prev is not None and key <= prev:
            raise CorruptLog(f"Registro {i}: orden (episodio, t) no creciente {prev} -> {key}", line=i + 1, record_index=i)
        prev = key
        for name in ("free_energy", "info_gain", "param_info_gain"):
            v = rec[name]
            if v is not None and not (isinstance(v, (int, float)) and math.isfinite(v)):
                raise CorruptLog(f"Registro {i}: {name} no finito", line=i + 1, record_index=i)
        if rec["efe"] is None:
            continue
        for j, e in enumerate(rec["efe"]):
            try:
                expected = float(e["risk"]) + float(e["ambiguity"]) - float(e["novelty"])
                total = float(e["total"])
            except (KeyError, TypeError, ValueError) as err:
                raise CorruptLog(f"Registro {i}: EFE {j} incompleta ({err})", line=i + 1, record_index=i) from err
            if not abs(total - expected) <= EFE_TOL:
                raise CorruptLog(
                    f"Registro {i}: EFE {j} total={total!r} != riesgo + ambigüedad - novedad = {expected!r}",
                    line=i + 1,
                    record_index=i,
                )


# ---------------------------------------------------------------------------
# Procesador
# ---------------------------------------------------------------------------

@dataclass
class RunLogProcessor:
    """
    Procesa los logs de un directorio de ejecución:
        <run_dir>/logs/records.jsonl
        <run_dir>/logs/episodes.jsonl
    """

    run_dir: Path

    def __post_init__(self) -> None:
        self.run_dir = Path(self.run_dir)
        self.logs_dir: Path = self.run_dir / "logs"

    # ---------------- lectura ----------------

    def load_records(self) -> list[dict]:
        records = read_jsonl(self.logs_dir / "records.jsonl")
        check_records(records)
        return records

    def load_episode_logs(self) -> list[dict]:
        path = self.logs_dir / "episodes.jsonl"
        return read_jsonl(path) if path.exists() else []

    # ---------------- tablas ----------------

    @staticmethod
    def steps_frame(records: list[dict]) -> pd.DataFrame:
        """Una fila por paso; la EFE se resume en mínimo y nº de políticas."""
        rows = []
        for rec in records:
            efe = rec["efe"] or []
            rows.append({
                "episode": rec["episode"],
                "t": rec["t"],
                "action": rec["action"],
                "observation": json.dumps(rec["observation"]),
                "free_energy": rec["free_energy"],
                "info_gain": rec["info_gain"],
                "n_policies": len(efe),
                "efe_min": min((e["total"] for e in efe), default=None),
            })
        cols = ["episode", "t", "action", "observation", "free_energy", "info_gain", "n_policies", "efe_min"]
        return pd.DataFrame(rows, columns=cols)

    @staticmethod
    def episodes_frame(records: list[dict]) -> pd.DataFrame:
        """
        Una fila por episodio:
            free_energy      : energía libre del último paso (inferencia sobre
                               el episodio completo)
            info_gain        : suma de la ganancia de información por paso
            param_info_gain  : KL de los conteos tras aprender del episodio
            success          : éxito de la tarea (vacío si no aplica)
        """
        by_episode: dict[int, list[dict]] = {}
        for rec in records:
            by_episode.setdefault(int(rec["episode"]), []).append(rec)
        rows = []
        cumulative = 0.0
        for e in sorted(by_episode):
            recs = by_episode[e]
            last = recs[-1]
            gains = [r["info_gain"] for r in recs if r["info_gain"] is not None]
            pig = last["param_info_gain"] if last["param_info_gain"] is not None else 0.0
            cumulative += pig
            rows.append({
                "episode": e,
                "steps": len(recs),
                "free_energy": last["free_energy"],
                "info_gain": float(sum(gains)) if gains else None,
                "param_info_gain": pig,
                "cumulative_param_info_gain": cumulative,
                "success": last["success"],
            })
        cols = [
            "episode", "steps", "free_energy", "info_gain",
            "param_info_gain", "cumulative_param_info_gain", "success",
        ]
        return pd.DataFrame(rows, columns=cols)

    # ---------------- resumen ----------------

    @classmethod
    def summarize(cls, records: list[dict]) -> dict:
        df = cls.episodes_frame(records)
        fe = [float(v) for v in df["free_energy"].tolist() if v is not None and not pd.isna(v)]
        succ = [bool(v) for v in df["success"].tolist() if v is not None and not pd.isna(v)]
        return {
            "format_version": SUMMARY_VERSION,
            "episodes": int(df.shape[0]),
            "steps": len(records),
            "mean_free_energy": float(sum(fe) / len(fe)) if fe else None,
            "episode_free_energy": fe,
            "cumulative_param_info_gain": float(df["cumulative_param_info_gain"].iloc[-1]) if len(df) else 0.0,
            "success_rate": float(sum(succ) / len(succ)) if succ else None,
        }

    def load_all(self) -> dict[str, pd.DataFrame]:
        """Tablas para exportar (CSV / Excel / PDF)."""
        records = self.load_records()
        dfs = {
            "pasos": self.steps_frame(records),
            "episodios": self.episodes_frame(records),
        }
        logs = self.load_episode_logs()
        if logs:
            dfs["entorno"] = pd.DataFrame([
                {
                    "episode": r.get("episode"),
                    "t": r.get("t"),
                    "action": r.get("action"),
                    "observation": json.dumps(r.get("observation")),
                    "hidden": json.dumps(r.get("hidden")),
                }
                for r in logs
            ])
        return dfs


def summary_json(summary: dict) -> str:
    """Serialización canónica del resumen (comparación byte a byte en replay)."""
    return json.dumps(summary, sort_keys=True, indent=1) + "\n"
