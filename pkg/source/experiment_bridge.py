#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
experiment_bridge.py
--------------------
Puente entre la línea de comandos (main.py) y WorldModelExperiment.

NO re-implementa lógica de modelos:
- Solo arma opciones desde cfg (dict leído del JSON de configuración).
- Valida lo mínimo para fallar pronto con ConfigError nombrando el campo.
- Instancia WorldModelExperiment y llama a run / replay / emit_plots / search.

Uso típico:
    from experiment_bridge import load_config, run_experiment_from_cfg
    cfg = load_config(Path("configs/tmaze.json"))
    run_dir = run_experiment_from_cfg(cfg, base_dir, progress_cb)
"""

from __future__ import annotations

import json
import sys
from pathlib import Path
from typing import Any, Callable, Dict, Optional

# ------------------------------------------------------------------
# Aseguramos acceso a class/core
# ------------------------------------------------------------------

HERE = Path(__file__).resolve()          # .../source/experiment_bridge.py
ROOT_DIR = HERE.parent.parent            # .../   (carpeta proyecto)
CORE_DIR = ROOT_DIR / "class" / "core"   # .../class/core

if CORE_DIR.is_dir() and str(CORE_DIR) not in sys.path:
    sys.path.insert(0, str(CORE_DIR))

from busqueda_estructura import FAMILY_CONTINUOUS, FAMILY_DISCRETE, StructureKnobs
from errores import ConfigError
from experimento import (
    ENVIRONMENTS,
    AgentOptions,
    DataOptions,
    EnvironmentOptions,
    ExperimentConfig,
    SearchOptions,
    WorldModelExperiment,
)

FORMAT_VERSION = 1
DATA_SOURCES = ("environment", "synthetic", "trajectories")


# ----------------------------------------------------------------------
# Lectura y helpers
# ----------------------------------------------------------------------

def load_config(path: Path) -> Dict[str, Any]:
    """Lee el documento JSON; errores de lectura o de sintaxis -> ConfigError."""
    path = Path(path)
    try:
        cfg = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise ConfigError(f"config: no existe {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config: JSON inválido en {path.name} (línea {e.lineno}): {e.msg}") from e
    if not isinstance(cfg, dict):
        raise ConfigError("config: el documento debe ser un objeto JSON")
    return cfg


def _block(cfg: Dict[str, Any], key: str) -> Dict[str, Any]:
    value = cfg.get(key) or {}
    if not isinstance(value, dict):
        raise ConfigError(f"{key}: se esperaba un objeto")
    return value


def _get(block: Dict[str, Any], key: str, default: Any, cast: Callable, where: str) -> Any:
    """block.get(key, default) convertido con `cast`; el error nombra el campo."""
    value = block.get(key, default)
    if value is None:
        return None
    try:
        return cast(value)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}.{key}: valor inválido {value!r}") from e


# ----------------------------------------------------------------------
# Mapeos de cfg -> opciones
# ----------------------------------------------------------------------

def build_environment_options(cfg: Dict[str, Any]) -> EnvironmentOptions:
    """Mapea cfg['environment'] a EnvironmentOptions."""
    env = cfg.get("environment")
    if isinstance(env, str):
        env = {"name": env}
    if not isinstance(env, dict) or "name" not in env:
        raise ConfigError("environment.name: campo obligatorio")
    name = env["name"]
    if name not in ENVIRONMENTS:
        raise ConfigError(f"environment.name: entorno desconocido {name!r} (opciones: {', '.join(ENVIRONMENTS)})")
    w = "environment"
    return EnvironmentOptions(
        name=name,
        # T-maze
        reward_prob=_get(env, "reward_prob", 1.0, float, w),
        n_actions=_get(env, "n_actions", 2, int, w),
        # mesa de billar
        dt=_get(env, "dt", 0.05, float, w),
        band=_get(env, "band", 0.05, float, w),
        sigma=_get(env, "sigma", 0.01, float, w),
        sigma_obs=_get(env, "sigma_obs", 0.005, float, w),
        impulse=_get(env, "impulse", 0.2, float, w),
    )


def build_agent_options(cfg: Dict[str, Any]) -> AgentOptions:
    """Mapea cfg['agent'] a AgentOptions; los campos ausentes toman su default."""
    agent = _block(cfg, "agent")
    d = AgentOptions()
    w = "agent"
    return AgentOptions(
        model=_get(agent, "model", d.model, str, w),
        planning_horizon=_get(agent, "planning_horizon", d.planning_horizon, int, w),
        precision=_get(agent, "precision", d.precision, float, w),
        learning_rate=_get(agent, "learning_rate", d.learning_rate, float, w),
        learn=_get(agent, "learn", d.learn, lambda v: tuple(str(x) for x in v), w),
        prior_scale=_get(agent, "prior_scale", d.prior_scale, float, w),
        reward_pref=_get(agent, "reward_pref", d.reward_pref, float, w),
        reward_prior=_get(agent, "reward_prior", d.reward_prior, str, w),
        order_n=_get(agent, "order_n", d.order_n, int, w),
        em_iters=_get(agent, "em_iters", d.em_iters, int, w),
        memory=_get(agent, "memory", d.memory, int, w),
    )


def build_search_options(cfg: Dict[str, Any]) -> Optional[SearchOptions]:
    """Mapea cfg['search'] (o None si no hay bloque)."""
    if cfg.get("search") is None:
        return None
    search = _block(cfg, "search")
    init = search.get("init") or {}
    if not isinstance(init, dict):
        raise ConfigError("search.init: se esperaba un objeto de mandos")
    if init.get("family", FAMILY_DISCRETE) not in (FAMILY_DISCRETE, FAMILY_CONTINUOUS):
        raise ConfigError(f"search.init.family: familia desconocida {init.get('family')!r}")
    try:
        knobs = StructureKnobs.from_dict(init)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"search.init: {e}") from e

    data = _block(search, "data")
    source = data.get("source", "environment")
    if source not in DATA_SOURCES:
        raise ConfigError(f"search.data.source: origen desconocido {source!r} (opciones: {', '.join(DATA_SOURCES)})")
    w = "search.data"
    data_opt = DataOptions(
        source=source,
        episodes=_get(data, "episodes", 20, int, w),
        steps=_get(data, "steps", 50, int, w),
        path=_get(data, "path", None, str, w),
        generator=_get(data, "generator", {}, dict, w),
    )
    return SearchOptions(
        init=knobs,
        move_budget=_get(search, "move_budget", 10, int, "search"),
        fit_budget=_get(search, "fit_budget", 200, int, "search"),
        data=data_opt,
    )


def build_experiment_config(
    cfg: Dict[str, Any],
    seed: Optional[int] = None,
    out: Optional[str] = None,
    workers: Optional[int] = None,
) -> ExperimentConfig:
    """
    Documento completo -> ExperimentConfig. `seed`, `out` y `workers` son
    los overrides de la línea de comandos.
    """
    version = cfg.get("format_version")
    if version != FORMAT_VERSION:
        raise ConfigError(f"format_version: se esperaba {FORMAT_VERSION}, recibido {version!r}")
    if seed is None:
        if "seed" not in cfg or cfg["seed"] is None:
            raise ConfigError("seed: campo obligatorio (o use --seed)")
        seed = _get(cfg, "seed", None, int, "config")

    config = ExperimentConfig(
        seed=int(seed),
        environment=build_environment_options(cfg),
        agent=build_agent_options(cfg),
        search=build_search_options(cfg),
        episodes=_get(cfg, "episodes", 10, int, "config"),
        steps_per_episode=_get(cfg, "steps_per_episode", 100, int, "config"),
        output_dir=out if out is not None else _get(cfg, "output_dir", "runs", str, "config"),
        run_name=_get(cfg, "run_name", None, str, "config"),
        workers=workers if workers is not None else _get(cfg, "workers", 1, int, "config"),
        record_wall_clock=bool(cfg.get("record_wall_clock", False)),
        format_version=FORMAT_VERSION,
    )
    if config.episodes < 0:
        raise ConfigError(f"episodes: debe ser >= 0, recibido {config.episodes}")
    if config.steps_per_episode < 1:
        raise ConfigError(f"steps_per_episode: debe ser >= 1, recibido {config.steps_per_episode}")
    if config.workers < 1:
        raise ConfigError(f"workers: debe ser >= 1, recibido {config.workers}")
    return config


# ----------------------------------------------------------------------
# Orquestadores: se llaman desde main.py
# ----------------------------------------------------------------------

def run_experiment_from_cfg(
    cfg: ExperimentConfig,
    base_dir: Path,
    progress_cb: Optional[Callable[[str], None]] = None,
) -> Path:
    return WorldModelExperiment(base_dir=base_dir, progress_callback=progress_cb).run(cfg)


def run_search_from_cfg(
    cfg: ExperimentConfig,
    base_dir: Path,
    progress_cb: Optional[Callable[[str], None]] = None,
) -> Path:
    return WorldModelExperiment(base_dir=base_dir, progress_callback=progress_cb).search(cfg)


def replay_run_dir(run_dir: Path, progress_cb: Optional[Callable[[str], None]] = None) -> dict:
    return WorldModelExperiment(progress_callback=progress_cb).replay(run_dir)


def emit_plots_for_run_dir(
    run_dir: Path,
    crear_excel: bool = True,
    crear_pdf: bool = False,
    progress_cb: Optional[Callable[[str], None]] = None,
) -> list[Path]:
    return WorldModelExperiment(progress_callback=progress_cb).emit_plots(run_dir, crear_excel, crear_pdf)
