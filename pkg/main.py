#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
main.py
-------
Lanzador de línea de comandos.

    python main.py run <config.json>   [--seed N] [--out DIR] [--workers W]
    python main.py replay <run_dir>
    python main.py plots <run_dir>     [--pdf] [--no-excel]
    python main.py search <config.json> [--seed N] [--out DIR] [--workers W]

Códigos de salida: 0 éxito, 1 fallo de ejecución, 2 configuración inválida.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

# Directorio raíz del proyecto (donde está este main.py)
ROOT_DIR = Path(__file__).resolve().parent          # .../proyecto

# Rutas importantes
SOURCE_DIR = ROOT_DIR / "source"                    # .../proyecto/source
CORE_DIR = ROOT_DIR / "class" / "core"              # .../proyecto/class/core
EXP_DIR = ROOT_DIR / "class" / "exp"                # .../proyecto/class/exp

# Añadimos carpetas al sys.path para que los imports funcionen
for p in (SOURCE_DIR, CORE_DIR, EXP_DIR):
    if p.is_dir() and str(p) not in sys.path:
        sys.path.insert(0, str(p))

from errores import ConfigError, RuntimeFailure
from experiment_bridge import (
    build_experiment_config,
    emit_plots_for_run_dir,
    load_config,
    replay_run_dir,
    run_experiment_from_cfg,
    run_search_from_cfg,
)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="worldmodels",
        description="Modelos del mundo composicionales: ejecución, replay, tablas y búsqueda de estructura.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name, helptext in (("run", "ejecuta los episodios de un experimento"),
                           ("search", "búsqueda voraz de estructura")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("config", type=Path, help="documento JSON del experimento")
        p.add_argument("--seed", type=int, default=None, help="reemplaza la semilla maestra")
        p.add_argument("--out", type=str, default=None, help="reemplaza output_dir")
        p.add_argument("--workers", type=int, default=None, help="hilos para políticas / candidatos")

    p = sub.add_parser("replay", help="recalcula el resumen desde los logs")
    p.add_argument("run_dir", type=Path)

    p = sub.add_parser("plots", help="tablas por episodio (CSV) y reporte Excel/PDF")
    p.add_argument("run_dir", type=Path)
    p.add_argument("--pdf", action="store_true", help="genera también el PDF (requiere reportlab)")
    p.add_argument("--no-excel", action="store_true", help="no genera el Excel")
    return parser


def _dispatch(args: argparse.Namespace) -> None:
    if args.command in ("run", "search"):
        cfg = build_experiment_config(load_config(args.config), seed=args.seed, out=args.out, workers=args.workers)
        if args.command == "run":
            run_dir = run_experiment_from_cfg(cfg, ROOT_DIR)
        else:
            run_dir = run_search_from_cfg(cfg, ROOT_DIR)
        print(str(run_dir))
    elif args.command == "replay":
        replay_run_dir(args.run_dir)
    elif args.command == "plots":
        emit_plots_for_run_dir(args.run_dir, crear_excel=not args.no_excel, crear_pdf=args.pdf)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _dispatch(args)
    except ConfigError as e:
        print(f"[ERROR] Configuración inválida: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:
        failure = e if isinstance(e, RuntimeFailure) else RuntimeFailure(f"{type(e).__name__}: {e}")
        print(f"[ERROR] {failure}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
