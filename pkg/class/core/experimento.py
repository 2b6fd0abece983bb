#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
experimento.py
--------------
Coordinación de una ejecución: directorio de la ejecución, bucle
percibir -> planificar -> actuar -> aprender, logs, resumen y replay.

Aquí se mantienen:
    * Opciones (EnvironmentOptions, AgentOptions, DataOptions,
      SearchOptions, ExperimentConfig); el mapeo desde el dict de
      configuración lo hace source/experiment_bridge.py.
    * derive_seed(master, *contadores)
    * WorldModelExperiment con:
        - run(config)        -> run_dir
        - replay(run_dir)    -> resumen recalculado
        - emit_plots(run_dir)
        - search(config)     -> run_dir

Estructura de <run_dir>:
    config.json
    logs/records.jsonl     (un RunRecord por paso)
    logs/episodes.jsonl    (log del entorno; estado oculto solo diagnóstico)
    logs/timing.jsonl      (tiempos de reloj, fuera del determinismo)
    summary.json
    model.json             (modelo final)
    plots/*.csv
    trajectories/*.csv     (solo entornos continuos)
    search/trace.jsonl, search/best.json
"""

from __future__ import annotations

import json
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np

# ---------------------------------------------------------------------------
# Localizar módulo exportacion en /class/exp
# ---------------------------------------------------------------------------

HERE = Path(__file__).resolve()               # .../class/core/experimento.py
EXP_DIR = HERE.parent.parent / "exp"          # .../class/exp

if EXP_DIR.is_dir() and str(EXP_DIR) not in sys.path:
    sys.path.insert(0, str(EXP_DIR))

import exportacion  # type: ignore

from agente import DiscreteAgent, RsldsObserver, StepOutcome, learning_prior
from busqueda_estructura import (
    DEFAULT_FIT_BUDGET,
    FAMILY_CONTINUOUS,
    ContinuousDataset,
    DiscreteDataset,
    StructureKnobs,
    StructureSearch,
    SearchResult,
    write_trace,
)
from entornos import (
    LEFT,
    REGIME_NAMES,
    REWARD_HIT,
    REWARD_MISS,
    RIGHT,
    PoolTableEnv,
    TMazeEnv,
)
from errores import ConfigError, CorruptLog
from planificacion import DEFAULT_PRECISION
from pomdp_discreto import (
    DiscreteLayerModel,
    DiscreteLayerSpec,
    model_to_dict,
    random_layer_model,
    sample_trajectory,
)
from procesador_registros import SUMMARY_VERSION, RunLogProcessor, finite_or_none, summary_json
from rslds_continuo import RsldsModel, default_model

ENVIRONMENTS = ("tmaze", "pool")

# identificadores de componente para derive_seed
SEED_ENV = 0
SEED_DATA = 1
SEED_SEARCH = 2


def derive_seed(master: int, *counters: int) -> int:
    """Semilla derivada por contador: independiente del orden y de los hilos."""
    seq = np.random.SeedSequence(int(master), spawn_key=tuple(int(c) for c in counters))
    return int(seq.generate_state(1)[0])


# ---------------------------------------------------------------------------
# Opciones
# ---------------------------------------------------------------------------

@dataclass
class EnvironmentOptions:
    name: str = "tmaze"
    # T-maze
    reward_prob: float = 1.0
    n_actions: int = 2
    # mesa de billar
    dt: float = 0.05
    band: float = 0.05
    sigma: float = 0.01
    sigma_obs: float = 0.005
    impulse: float = 0.2


@dataclass
class AgentOptions:
    """
    model        : "ground_truth" o, en la mesa de billar, "default"
                   (K = 1, orden `order_n`, aprendido con EM).
    reward_prior : "known" (A de recompensa exacta) o "flat" (brazos sin
                   información; se aprende con la experiencia).
    """

    model: str = "ground_truth"
    planning_horizon: int = 2
    precision: float = DEFAULT_PRECISION
    learning_rate: float = 1.0
    learn: tuple[str, ...] = ("A",)
    prior_scale: float = 1.0
    reward_pref: float = 0.0
    reward_prior: str = "known"
    order_n: int = 0
    em_iters: int = 5
    memory: int = 20


@dataclass
class DataOptions:
    """
    Datos para la búsqueda de estructura:
        source = "environment" : rollouts del entorno (acciones al azar)
        source = "synthetic"   : capa discreta aleatoria con `generator`
        source = "trajectories": carpeta `path` con trayectorias continuas
    """

    source: str = "environment"
    episodes: int = 20
    steps: int = 50
    path: Optional[str] = None
    generator: dict = field(default_factory=dict)


@dataclass
class SearchOptions:
    init: StructureKnobs = field(default_factory=StructureKnobs)
    move_budget: int = 10
    fit_budget: int = DEFAULT_FIT_BUDGET
    data: DataOptions = field(default_factory=DataOptions)


@dataclass
class ExperimentConfig:
    seed: int
    environment: EnvironmentOptions = field(default_factory=EnvironmentOptions)
    agent: AgentOptions = field(default_factory=AgentOptions)
    search: Optional[SearchOptions] = None
    episodes: int = 10
    steps_per_episode: int = 100
    output_dir: str = "runs"
    run_name: Optional[str] = None
    workers: int = 1
    record_wall_clock: bool = False
    format_version: int = 1

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.search is not None:
            d["search"]["init"] = self.search.init.to_dict()
        return d


# ---------------------------------------------------------------------------
# Escritura de logs
# ---------------------------------------------------------------------------

class JsonlWriter:
    """Log JSON por líneas, solo de añadido; cada línea se vuelca al escribirla."""

    def __init__(self, path: Path) -> None:
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = self.path.open("w", encoding="utf-8")

    def write(self, record: dict) -> None:
        self._fh.write(json.dumps(record, sort_keys=True) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "JsonlWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def _write_json(path: Path, payload: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    return path


def run_record(
    episode: int,
    out: StepOutcome,
    param_info_gain: Optional[float] = None,
    success: Optional[bool] = None,
    wall_clock: Optional[float] = None,
) -> dict:
    """StepOutcome -> RunRecord (todo finito o null)."""
    efe = None
    if out.efe:
        efe = [dict(e.to_dict(), policy=p) for e, p in zip(out.efe, out.policies)]
    return {
        "episode": int(episode),
        "t": int(out.t),
        "action": out.action,
        "observation": out.observation,
        "efe": efe,
        "free_energy": finite_or_none(out.free_energy),
        "info_gain": finite_or_none(out.info_gain),
        "param_info_gain": finite_or_none(param_info_gain),
        "success": success,
        "wall_clock": wall_clock,
    }


# ---------------------------------------------------------------------------
# Construcción de entornos, modelos y datos
# ---------------------------------------------------------------------------

def make_environment(opt: EnvironmentOptions, max_steps: Optional[int] = None) -> Union[TMazeEnv, PoolTableEnv]:
    if opt.name == "tmaze":
        return TMazeEnv(reward_prob=opt.reward_prob, n_actions=opt.n_actions)
    if opt.name == "pool":
        return PoolTableEnv(
            dt=opt.dt,
            band=opt.band,
            sigma=opt.sigma,
            sigma_obs=opt.sigma_obs,
            impulse=opt.impulse,
            max_steps=max_steps,
        )
    raise ConfigError(f"environment.name desconocido: {opt.name!r} (opciones: {', '.join(ENVIRONMENTS)})")


def tmaze_agent_model(env: TMazeEnv, opt: AgentOptions) -> DiscreteLayerModel:
    """Modelo del agente: exacto o con los brazos sin información de recompensa."""
    model = env.ground_truth_model(opt.reward_pref)
    if opt.reward_prior == "known":
        return model
    if opt.reward_prior != "flat":
        raise ConfigError(f"agent.reward_prior desconocido: {opt.reward_prior!r} (known | flat)")
    A_rew = np.array(model.A[1])
    for loc in (LEFT, RIGHT):
        A_rew[:, loc, :] = 0.0
        A_rew[REWARD_HIT, loc, :] = 0.5
        A_rew[REWARD_MISS, loc, :] = 0.5
    A = (model.A[0], A_rew, model.A[2])
    return DiscreteLayerModel(model.spec, A, model.B, model.D, model.C)


def discrete_rollouts(cfg: ExperimentConfig, data: DataOptions) -> DiscreteDataset:
    """Episodios del T-maze con acciones uniformes, o de una capa aleatoria."""
    seed = cfg.seed
    if data.source == "synthetic":
        g = data.generator
        sizes = tuple(int(n) for n in g.get("factor_sizes", (2,)))
        mods = tuple(int(n) for n in g.get("modality_sizes", sizes))
        spec = DiscreteLayerSpec(
            factor_sizes=sizes,
            modality_sizes=mods,
            horizon=int(data.steps),
            generalised_depth=int(g.get("generalised_depth", 0)),
            controllable=(False,) * len(sizes),
        )
        model = random_layer_model(
            spec,
            derive_seed(seed, SEED_DATA),
            accuracy=g.get("accuracy", 0.9),
            stickiness=g.get("stickiness", 0.8),
        )
        episodes = [
            sample_trajectory(model, None, derive_seed(seed, e, SEED_DATA)).observations
            for e in range(data.episodes)
        ]
        return DiscreteDataset(tuple(episodes), mods)

    env = make_environment(cfg.environment)
    if not isinstance(env, TMazeEnv):
        raise ConfigError("search.data: la familia discreta necesita environment.name = 'tmaze' o source = 'synthetic'")
    episodes, actions = [], []
    for e in range(data.episodes):
        rng = np.random.default_rng(derive_seed(seed, e, SEED_DATA))
        obs = [env.reset(derive_seed(seed, e, SEED_ENV))]
        acts = []
        while not env.done:
            a = int(rng.integers(4))
            o, _ = env.step(a)
            obs.append(o)
            acts.append(a)
        episodes.append(np.asarray(obs, dtype=int))
        actions.append(np.asarray(acts, dtype=int))
    return DiscreteDataset(tuple(episodes), (4, 3, 3), tuple(actions), n_actions=4)


def continuous_rollouts(cfg: ExperimentConfig, data: DataOptions) -> ContinuousDataset:
    """Trayectorias pasivas de la mesa de billar o una carpeta de trayectorias."""
    if data.source == "trajectories":
        if not data.path:
            raise ConfigError("search.data.path es obligatorio con source = 'trajectories'")
        try:
            ys, dt = exportacion.read_trajectory_dir(Path(data.path))
        except ValueError as e:
            raise ConfigError(f"search.data.path: {e}") from e
        return ContinuousDataset(tuple(ys), dt)
    env = make_environment(cfg.environment, max_steps=data.steps)
    if not isinstance(env, PoolTableEnv):
        raise ConfigError("search.data: la familia continua necesita environment.name = 'pool'")
    trajectories = []
    for e in range(data.episodes):
        ys = [env.reset(derive_seed(cfg.seed, e, SEED_DATA))]
        while not env.done:
            y, _ = env.step(None)
            ys.append(y)
        trajectories.append(np.asarray(ys))
    return ContinuousDataset(tuple(trajectories), env.dt)


# ---------------------------------------------------------------------------
# Orquestador
# ---------------------------------------------------------------------------

class WorldModelExperiment:
    def __init__(
        self,
        base_dir: Path | None = None,
        progress_callback: Optional[Callable[[str], None]] = None,
    ) -> None:
        # base_dir = raíz del proyecto (donde está main.py)
        self.base_dir = Path(base_dir) if base_dir is not None else Path.cwd()
        self.progress_callback = progress_callback

    # ---------- helper de log ----------

    def log(self, msg: str) -> None:
        """Imprime en consola y, si hay callback, le envía el mensaje."""
        print(msg)
        if self.progress_callback:
            try:
                self.progress_callback(msg)
            except Exception:
                pass

    def run_dir_for(self, cfg: ExperimentConfig) -> Path:
        name = cfg.run_name or cfg.environment.name
        return self.base_dir / cfg.output_dir / name

    # ---------- run ----------

    def run(self, cfg: ExperimentConfig) -> Path:
        if cfg.environment.name not in ENVIRONMENTS:
            raise ConfigError(f"environment.name desconocido: {cfg.environment.name!r}")
        if cfg.episodes < 0:
            raise ConfigError(f"episodes debe ser >= 0, recibido {cfg.episodes}")
        if cfg.search is not None and cfg.environment.name != "pool":
            raise ConfigError("search: en 'run' solo se admite con environment.name = 'pool'; use el comando 'search'")
        if cfg.search is not None and cfg.search.init.family != FAMILY_CONTINUOUS:
            raise ConfigError("search.init.family debe ser 'continuous' para el observador de la mesa de billar")

        run_dir = self.run_dir_for(cfg)
        logs_dir = run_dir / "logs"
        logs_dir.mkdir(parents=True, exist_ok=True)
        _write_json(run_dir / "config.json", cfg.to_dict())
        self.log(f"[*] Ejecución '{run_dir.name}': {cfg.episodes} episodio(s) en {cfg.environment.name}")

        with JsonlWriter(logs_dir / "records.jsonl") as records, \
                JsonlWriter(logs_dir / "episodes.jsonl") as episodes, \
                JsonlWriter(logs_dir / "timing.jsonl") as timing:
            if cfg.environment.name == "tmaze":
                model_dict = self._run_tmaze(cfg, records, episodes, timing)
            else:
                model_dict = self._run_pool(cfg, run_dir, records, episodes, timing)

        _write_json(run_dir / "model.json", model_dict)
        summary = RunLogProcessor.summarize(RunLogProcessor(run_dir).load_records())
        (run_dir / "summary.json").write_text(summary_json(summary), encoding="utf-8")
        self.emit_plots(run_dir, crear_excel=False)
        self.log(f"[OK] Ejecución terminada en {run_dir}")
        return run_dir

    def _run_tmaze(self, cfg: ExperimentConfig, records: JsonlWriter, episodes: JsonlWriter, timing: JsonlWriter) -> dict:
        env = make_environment(cfg.environment)
        opt = cfg.agent
        if opt.model != "ground_truth":
            raise ConfigError(f"agent.model {opt.model!r} no disponible en el T-maze (ground_truth)")
        model = tmaze_agent_model(env, opt)
        dirichlet = None
        if opt.learning_rate > 0 and opt.learn:
            dirichlet = learning_prior(model, opt.learn, opt.prior_scale)
        agent = DiscreteAgent(
            model,
            dirichlet,
            planning_horizon=opt.planning_horizon,
            precision=opt.precision,
            learning_rate=opt.learning_rate,
            learn=opt.learn,
            workers=cfg.workers,
        )

        for e in range(cfg.episodes):
            t0 = time.perf_counter()
            agent.reset()
            obs = env.reset(derive_seed(cfg.seed, e, SEED_ENV))
            success = False
            while True:
                out = agent.step(obs)
                success = success or out.observation[1] == REWARD_HIT
                if out.action is None:
                    break
                records.write(run_record(e, out, wall_clock=self._clock(cfg, t0)))
                obs, _ = env.step(out.action)
            gain = agent.learn_from_episode()
            records.write(run_record(e, out, param_info_gain=gain, success=success, wall_clock=self._clock(cfg, t0)))
            for rec in env.log:
                episodes.write(dict(rec, episode=e))
            timing.write({"episode": e, "seconds": time.perf_counter() - t0})
            if (e + 1) % 10 == 0 or e + 1 == cfg.episodes:
                self.log(f"  [EP] {e + 1}/{cfg.episodes}: F = {out.free_energy:.4f}, éxito = {success}")
        return model_to_dict(agent.learned_model())

    def _pool_model(self, cfg: ExperimentConfig, run_dir: Path, env: PoolTableEnv) -> RsldsModel:
        opt = cfg.agent
        if cfg.search is not None:
            _, fitted = self._run_search(cfg, run_dir / "search")
            return fitted
        if opt.model == "ground_truth":
            return env.ground_truth_model()
        if opt.model == "default":
            return default_model(2, env.dt, order_n=opt.order_n, initial_mean=np.full(2, 0.5), initial_var=0.1)
        raise ConfigError(f"agent.model desconocido: {opt.model!r} (ground_truth | default)")

    def _run_pool(
        self,
        cfg: ExperimentConfig,
        run_dir: Path,
        records: JsonlWriter,
        episodes: JsonlWriter,
        timing: JsonlWriter,
    ) -> dict:
        env = make_environment(cfg.environment, max_steps=cfg.steps_per_episode)
        opt = cfg.agent
        learn = opt.learning_rate > 0 and bool(opt.learn)
        observer = RsldsObserver(
            self._pool_model(cfg, run_dir, env),
            learn=learn,
            em_iters=opt.em_iters,
            memory=opt.memory,
        )

        for e in range(cfg.episodes):
            t0 = time.perf_counter()
            observer.reset()
            y = env.reset(derive_seed(cfg.seed, e, SEED_ENV))
            out = observer.step(y)
            while not env.done:
                records.write(run_record(e, out, wall_clock=self._clock(cfg, t0)))
                y, _ = env.step(None)
                out = observer.step(y)
            gain = observer.learn_from_episode()
            records.write(run_record(e, out, param_info_gain=gain, wall_clock=self._clock(cfg, t0)))
            for rec in env.log:
                episodes.write(dict(rec, episode=e))
            regimes = [REGIME_NAMES.index(rec["hidden"]["regime"]) for rec in env.log]
            exportacion.write_trajectory(
                run_dir / "trajectories" / f"episode_{e:04d}.csv",
                np.asarray(observer.trajectory),
                env.dt,
                regimes,
            )
            timing.write({"episode": e, "seconds": time.perf_counter() - t0})
            if (e + 1) % 10 == 0 or e + 1 == cfg.episodes:
                self.log(f"  [EP] {e + 1}/{cfg.episodes}: F = {out.free_energy:.4f}")
        return observer.model.to_dict()

    @staticmethod
    def _clock(cfg: ExperimentConfig, t0: float) -> Optional[float]:
        return time.perf_counter() - t0 if cfg.record_wall_clock else None

    # ---------- replay ----------

    def replay(self, run_dir: Path) -> dict:
        """Recalcula el resumen desde records.jsonl y lo compara byte a byte."""
        run_dir = Path(run_dir)
        self.log(f"[*] Replay de {run_dir}")
        summary = RunLogProcessor.summarize(RunLogProcessor(run_dir).load_records())
        stored_path = run_dir / "summary.json"
        if not stored_path.exists():
            raise CorruptLog(f"No existe {stored_path}")
        stored = stored_path.read_text(encoding="utf-8")
        fresh = summary_json(summary)
        if stored != fresh:
            try:
                old = json.loads(stored)
            except json.JSONDecodeError:
                old = {}
            keys = sorted(k for k in set(old) | set(summary) if old.get(k) != summary.get(k))
            raise CorruptLog(f"El resumen recalculado no coincide con summary.json (campos: {', '.join(keys) or 'formato'})")
        self.log("[OK] Replay coincide con summary.json")
        return summary

    # ---------- tablas ----------

    def emit_plots(self, run_dir: Path, crear_excel: bool = True, crear_pdf: bool = False) -> list[Path]:
        """Tablas CSV por episodio en plots/; Excel/PDF opcionales en export/."""
        run_dir = Path(run_dir)
        processor = RunLogProcessor(run_dir)
        records = processor.load_records()
        paths = exportacion.export_metric_tables(processor.episodes_frame(records), run_dir / "plots")
        if crear_excel or crear_pdf:
            exportacion.export_report(
                processor.load_all(),
                run_dir / "export",
                summary=processor.summarize(records),
                crear_excel=crear_excel,
                crear_pdf=crear_pdf,
            )
        return paths

    # ---------- búsqueda de estructura ----------

    def _dataset(self, cfg: ExperimentConfig) -> Union[DiscreteDataset, ContinuousDataset]:
        data = cfg.search.data
        if cfg.search.init.family == FAMILY_CONTINUOUS:
            return continuous_rollouts(cfg, data)
        return discrete_rollouts(cfg, data)

    def _run_search(self, cfg: ExperimentConfig, out_dir: Path) -> tuple[SearchResult, Optional[RsldsModel]]:
        opt = cfg.search
        dataset = self._dataset(cfg)
        self.log(f"[*] Datos de búsqueda: {dataset.n_observations} observaciones ({opt.data.source})")
        search = StructureSearch(
            dataset,
            seed=derive_seed(cfg.seed, SEED_SEARCH),
            workers=cfg.workers,
            fit_budget=opt.fit_budget,
            progress_callback=self.progress_callback,
        )
        result = search.run(opt.init, opt.move_budget)
        write_trace(result.trace, out_dir / "trace.jsonl", cfg.record_wall_clock)
        best = {
            "format_version": SUMMARY_VERSION,
            "knobs": result.best.to_dict(),
            "free_energy": finite_or_none(result.best_score.free_energy),
            "parameter_count": result.best_score.parameter_count,
            "fits": result.fits,
            "stopped_by": result.stopped_by,
        }
        _write_json(out_dir / "best.json", best)
        model = None
        if result.best.family == FAMILY_CONTINUOUS:
            model = search.scorer.fitted_model(result.best)
            _write_json(out_dir / "model.json", model.to_dict())
        self.log(f"[OK] Búsqueda: {result.fits} ajuste(s), parada por {result.stopped_by}")
        return result, model

    def search(self, cfg: ExperimentConfig) -> Path:
        if cfg.search is None:
            raise ConfigError("search: falta el bloque 'search' en la configuración")
        run_dir = self.run_dir_for(cfg)
        run_dir.mkdir(parents=True, exist_ok=True)
        _write_json(run_dir / "config.json", cfg.to_dict())
        self._run_search(cfg, run_dir / "search")
        return run_dir

