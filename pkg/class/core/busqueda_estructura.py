#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
busqueda_estructura.py
----------------------
Búsqueda voraz de estructura dentro de la clase dispersa de modelos.

    - StructureKnobs / KnobBounds : mandos estructurales y sus cotas.
    - neighbors()                 : todas las ediciones de un solo mando.
    - build_candidate()           : mandos -> LayerStack (discreto) o RsldsModel.
    - StructureScorer             : ajusta cada candidato con un presupuesto fijo
                                    y lo puntúa por energía libre variacional.
    - greedy_search()             : escalada con desempate por nº de parámetros.

Puntuación:
    discreto : prior Dirichlet uniforme (concentración 1), `passes` pasadas
               de recuento sobre ventanas de longitud T y
               F = Σ_ventanas F(modelo medio) + Σ KL(Dir posterior || Dir prior).
    continuo : fit_em del modelo K = 1 (y de K > 1 inicializado por
               agrupamiento) y F = -Σ log-evidencia + ½·k·ln N,
               con N = nº total de pasos observados.

Un candidato cuyo ajuste diverge recibe F = +inf y queda marcado.
"""

from __future__ import annotations

import json
import math
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from errores import (
    DegenerateCovariance,
    FitDiverged,
    NonFinite,
    ShapeMismatch,
    ZeroMass,
)
from inferencia_discreta import dirichlet_complexity, infer_states, update_parameters
from jerarquia import LayerStack, LinkSpec, evidence_rows, run_stack
from pomdp_discreto import DirichletModel, DiscreteLayerModel, DiscreteLayerSpec, random_layer_model
from rslds_continuo import RsldsModel, default_model, fit_em, initialise_switching, total_log_evidence

FAMILY_DISCRETE = "discrete"
FAMILY_CONTINUOUS = "continuous"

IMPROVEMENT_TOL = 1e-6
DISCRETE_PASSES = 3
CONTINUOUS_EM_ITERS = 5
DEFAULT_FIT_BUDGET = 200
CONTEXT_STATES = 2
PRIOR_CONCENTRATION = 1.0


# ---------------------------------------------------------------------------
# Mandos y cotas
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StructureKnobs:
    """
    Estructura candidata.

    Familia discreta: los mandos describen la capa inferior; cada nivel
    jerárquico extra añade encima una capa de contexto de horizonte 1
    (CONTEXT_STATES estados) que fija el prior del factor 0 de la capa
    de debajo en cada ventana.
    Familia continua: solo cuentan K y order_n (profundidad 1).
    """

    family: str = FAMILY_DISCRETE
    hierarchical_depth: int = 1
    factor_sizes: tuple[int, ...] = (2,)
    generalised_depth: int = 0
    horizon: int = 1
    controllable: tuple[bool, ...] = (False,)
    K: int = 1
    order_n: int = 0

    def __post_init__(self) -> None:
        if self.family not in (FAMILY_DISCRETE, FAMILY_CONTINUOUS):
            raise ShapeMismatch(f"family desconocida: {self.family!r}")
        object.__setattr__(self, "factor_sizes", tuple(int(n) for n in self.factor_sizes))
        ctrl = tuple(bool(c) for c in self.controllable) or (False,) * len(self.factor_sizes)
        object.__setattr__(self, "controllable", ctrl)

    @property
    def n_factors(self) -> int:
        return len(self.factor_sizes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["factor_sizes"] = list(self.factor_sizes)
        d["controllable"] = list(self.controllable)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "StructureKnobs":
        return cls(
            family=d.get("family", FAMILY_DISCRETE),
            hierarchical_depth=int(d.get("hierarchical_depth", 1)),
            factor_sizes=tuple(d.get("factor_sizes", (2,))),
            generalised_depth=int(d.get("generalised_depth", 0)),
            horizon=int(d.get("horizon", 1)),
            controllable=tuple(d.get("controllable", ())),
            K=int(d.get("K", 1)),
            order_n=int(d.get("order_n", 0)),
        )


@dataclass(frozen=True)
class KnobBounds:
    max_depth: int = 3
    max_factors: int = 3
    min_size: int = 2
    max_size: int = 6
    max_generalised: int = 3
    max_horizon: int = 8
    max_K: int = 8
    max_order: int = 3


def validate_knobs(s: StructureKnobs, bounds: KnobBounds = KnobBounds()) -> list[str]:
    """Lista vacía = mandos dentro de cotas; si no, un mensaje por problema."""
    out = []
    if s.family == FAMILY_CONTINUOUS:
        if s.hierarchical_depth != 1:
            out.append("hierarchical_depth debe ser 1 en la familia continua")
        if not 1 <= s.K <= bounds.max_K:
            out.append(f"K={s.K} fuera de [1, {bounds.max_K}]")
        if not 0 <= s.order_n <= bounds.max_order:
            out.append(f"order_n={s.order_n} fuera de [0, {bounds.max_order}]")
        return out
    if not 1 <= s.hierarchical_depth <= bounds.max_depth:
        out.append(f"hierarchical_depth={s.hierarchical_depth} fuera de [1, {bounds.max_depth}]")
    if not 1 <= s.n_factors <= bounds.max_factors:
        out.append(f"{s.n_factors} factores fuera de [1, {bounds.max_factors}]")
    for i, n in enumerate(s.factor_sizes):
        if not bounds.min_size <= n <= bounds.max_size:
            out.append(f"factor_sizes[{i}]={n} fuera de [{bounds.min_size}, {bounds.max_size}]")
    if len(s.controllable) != s.n_factors:
        out.append("controllable necesita un flag por factor")
    if not 0 <= s.generalised_depth <= bounds.max_generalised:
        out.append(f"generalised_depth={s.generalised_depth} fuera de [0, {bounds.max_generalised}]")
    if not 1 <= s.horizon <= bounds.max_horizon:
        out.append(f"horizon={s.horizon} fuera de [1, {bounds.max_horizon}]")
    return out


def _within(s: StructureKnobs, bounds: KnobBounds) -> bool:
    return not validate_knobs(s, bounds)


def neighbors(s: StructureKnobs, bounds: KnobBounds = KnobBounds()) -> list[StructureKnobs]:
    """
    Ediciones de un solo mando en orden fijo:
        discreto : profundidad ±1, nº de factores ±1 (el nuevo tiene
                   tamaño mínimo), tamaño de cada factor ±1, g ±1,
                   horizonte ±1, conmutar cada flag de control.
        continuo : K ±1, order_n ±1.
    Sin duplicados y siempre dentro de cotas.
    """
    moves: list[StructureKnobs] = []
    if s.family == FAMILY_CONTINUOUS:
        for step in (-1, 1):
            moves.append(replace(s, K=s.K + step))
        for step in (-1, 1):
            moves.append(replace(s, order_n=s.order_n + step))
    else:
        for step in (-1, 1):
            moves.append(replace(s, hierarchical_depth=s.hierarchical_depth + step))
        if s.n_factors > 1:
            moves.append(replace(s, factor_sizes=s.factor_sizes[:-1], controllable=s.controllable[:-1]))
        moves.append(replace(
            s,
            factor_sizes=s.factor_sizes + (bounds.min_size,),
            controllable=s.controllable + (False,),
        ))
        for i in range(s.n_factors):
            for step in (-1, 1):
                sizes = list(s.factor_sizes)
                sizes[i] += step
                moves.append(replace(s, factor_sizes=tuple(sizes)))
        for step in (-1, 1):
            moves.append(replace(s, generalised_depth=s.generalised_depth + step))
        for step in (-1, 1):
            moves.append(replace(s, horizon=s.horizon + step))
        for i in range(s.n_factors):
            flags = list(s.controllable)
            flags[i] = not flags[i]
            moves.append(replace(s, controllable=tuple(flags)))

    out, seen = [], {s}
    for m in moves:
        if m in seen or not _within(m, bounds):
            continue
        seen.add(m)
        out.append(m)
    return out


# ---------------------------------------------------------------------------
# Conjuntos de datos
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DiscreteDataset:
    """
    episodes : lista de arrays int (L, M) con un resultado por modalidad.
    actions  : opcional, un array int (L-1,) por episodio (acción entre pasos).
    """

    episodes: tuple
    modality_sizes: tuple[int, ...]
    actions: Optional[tuple] = None
    n_actions: int = 2

    def __post_init__(self) -> None:
        eps = tuple(np.atleast_2d(np.asarray(e, dtype=int)) for e in self.episodes)
        if not eps:
            raise ShapeMismatch("El conjunto de datos está vacío")
        sizes = tuple(int(n) for n in self.modality_sizes)
        for i, e in enumerate(eps):
            if e.shape[1] != len(sizes):
                raise ShapeMismatch(f"Episodio {i}: {e.shape[1]} modalidades, se esperaban {len(sizes)}")
            if np.any(e < 0) or np.any(e >= np.array(sizes)[None, :]):
                raise ShapeMismatch(f"Episodio {i}: resultado fuera de rango")
        acts = None
        if self.actions is not None:
            acts = tuple(np.asarray(a, dtype=int).reshape(-1) for a in self.actions)
            if len(acts) != len(eps):
                raise ShapeMismatch("Se necesita una secuencia de acciones por episodio")
            for i, (e, a) in enumerate(zip(eps, acts)):
                if a.shape[0] != e.shape[0] - 1:
                    raise ShapeMismatch(f"Episodio {i}: {a.shape[0]} acciones para {e.shape[0]} pasos")
                if np.any(a >= self.n_actions) or np.any(a < -1):
                    raise ShapeMismatch(f"Episodio {i}: acción fuera de rango")
        object.__setattr__(self, "episodes", eps)
        object.__setattr__(self, "modality_sizes", sizes)
        object.__setattr__(self, "actions", acts)

    @property
    def n_observations(self) -> int:
        return int(sum(e.shape[0] for e in self.episodes))

    @property
    def shortest(self) -> int:
        return int(min(e.shape[0] for e in self.episodes))

    def windows(self, T: int) -> list[tuple[np.ndarray, np.ndarray]]:
        """
        Ventanas consecutivas de T pasos; la última de cada episodio puede
        ser más corta (el resto del horizonte queda sin observar). Las
        acciones que faltan valen -1.
        """
        out = []
        for n, ep in enumerate(self.episodes):
            L = ep.shape[0]
            acts = self.actions[n] if self.actions is not None else np.full(max(L - 1, 0), -1, dtype=int)
            for start in range(0, L, T):
                obs = ep[start:start + T]
                a = np.full(T - 1, -1, dtype=int)
                seg = acts[start:start + T - 1]
                a[:seg.shape[0]] = seg
                out.append((obs, a))
        return out


@dataclass(frozen=True, eq=False)
class ContinuousDataset:
    trajectories: tuple
    dt: float

    def __post_init__(self) -> None:
        trajs = []
        for y in self.trajectories:
            y = np.asarray(y, dtype=float)
            trajs.append(y[:, None] if y.ndim == 1 else y)
        if not trajs:
            raise ShapeMismatch("El conjunto de datos está vacío")
        p = trajs[0].shape[1]
        if any(y.shape[1] != p for y in trajs):
            raise ShapeMismatch("Todas las trayectorias deben tener la misma dimensión")
        object.__setattr__(self, "trajectories", tuple(trajs))

    @property
    def obs_dim(self) -> int:
        return int(self.trajectories[0].shape[1])

    @property
    def n_observations(self) -> int:
        return int(sum(y.shape[0] for y in self.trajectories))


Dataset = Union[DiscreteDataset, ContinuousDataset]


def bounds_for(dataset: Dataset, bounds: KnobBounds = KnobBounds()) -> KnobBounds:
    """El horizonte nunca supera el episodio más corto."""
    if isinstance(dataset, DiscreteDataset):
        return replace(bounds, max_horizon=max(1, min(bounds.max_horizon, dataset.shortest)))
    return bounds


# ---------------------------------------------------------------------------
# Construcción de candidatos
# ---------------------------------------------------------------------------

def _layer_seed(seed: int, layer: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=(layer,)).generate_state(1)[0])


def bottom_spec(s: StructureKnobs, dataset: DiscreteDataset) -> DiscreteLayerSpec:
    return DiscreteLayerSpec(
        factor_sizes=s.factor_sizes,
        modality_sizes=dataset.modality_sizes,
        horizon=s.horizon,
        generalised_depth=s.generalised_depth,
        controllable=s.controllable,
        control_sizes=tuple(dataset.n_actions if c else 1 for c in s.controllable),
    )


def _context_spec(n_target: int) -> DiscreteLayerSpec:
    return DiscreteLayerSpec(
        factor_sizes=(CONTEXT_STATES,),
        modality_sizes=(n_target,),
        horizon=1,
        factor_names=("context",),
    )


def build_candidate(s: StructureKnobs, dataset: Dataset, seed: int = 0) -> Union[LayerStack, RsldsModel]:
    """
    Instancia los mandos: una pila discreta (de arriba abajo) con modelos
    aleatorios de semilla derivada por capa, o el modelo continuo K = 1
    de partida (sin ajustar) en coordenadas generalizadas de orden n.
    """
    if s.family == FAMILY_CONTINUOUS:
        if not isinstance(dataset, ContinuousDataset):
            raise ShapeMismatch("La familia continua necesita un ContinuousDataset")
        return default_model(dataset.obs_dim, dataset.dt, order_n=s.order_n)
    if not isinstance(dataset, DiscreteDataset):
        raise ShapeMismatch("La familia discreta necesita un DiscreteDataset")

    L = s.hierarchical_depth
    bottom = random_layer_model(bottom_spec(s, dataset), _layer_seed(seed, L - 1))
    layers = [bottom]
    links = []
    child = bottom
    for level in range(L - 2, -1, -1):
        n_target = child.factors[0].size
        ctx = random_layer_model(_context_spec(n_target), _layer_seed(seed, level))
        links.insert(0, LinkSpec(parent_modality=0, child_factor=0, temporal_ratio=child.horizon))
        layers.insert(0, ctx)
        child = ctx
    return LayerStack(tuple(layers), tuple(links))


def candidate_parameter_count(candidate: Union[LayerStack, RsldsModel]) -> int:
    if isinstance(candidate, RsldsModel):
        return candidate.parameter_count()
    return int(sum(layer.parameter_count() for layer in candidate.layers))


# ---------------------------------------------------------------------------
# Puntuación
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EvidenceScore:
    free_energy: float        # nats, menor es mejor; +inf si divergió
    parameter_count: int
    fit_seconds: float = 0.0
    diverged: bool = False
    message: str = ""


def _layer_actions(spec: DiscreteLayerSpec, acts: np.ndarray) -> np.ndarray:
    """La única corriente de acciones alimenta a todos los factores controlables."""
    out = np.zeros((acts.shape[0], spec.n_base), dtype=int)
    for i, c in enumerate(spec.controllable):
        if c:
            out[:, i] = acts
    return out


def _discrete_pass(
    links: Sequence[LinkSpec],
    models: Sequence[DiscreteLayerModel],
    priors: Sequence[DirichletModel],
    windows: Sequence[tuple[np.ndarray, np.ndarray]],
) -> tuple[float, list[DirichletModel]]:
    """
    Una pasada sobre todas las ventanas con los modelos dados: devuelve la
    energía libre de datos y los conteos prior + estadísticos.
    """
    counts = list(priors)
    F_data = 0.0
    if len(models) == 1:
        model = models[0]
        for obs, raw in windows:
            acts = _layer_actions(model.spec, raw)
            post, trace = infer_states(model, obs, acts)
            F_data += trace.final
            counts[0] = update_parameters(counts[0], post, obs, acts, 1.0, model)
        return F_data, counts

    stack = LayerStack(tuple(models), tuple(links))
    L = stack.depth
    for obs, raw in windows:
        acts = _layer_actions(models[-1].spec, raw)
        layer_actions = [None] * (L - 1) + [[acts]]
        result = run_stack(stack, [obs], layer_actions)
        runs = result.layers
        F_data += float(runs[0].free_energies[0]) - sum(
            ev.log_scale for level in range(1, L) for ev in runs[level].evidence
        )
        for level in range(L):
            model = models[level]
            post = runs[level].posteriors[0]
            if level == L - 1:
                rows, layer_acts = obs, acts
            else:
                rows = evidence_rows(model, links[level], runs[level + 1].evidence)
                layer_acts = None
            counts[level] = update_parameters(counts[level], post, rows, layer_acts, 1.0, model)
    return F_data, counts


def score_discrete(
    s: StructureKnobs,
    dataset: DiscreteDataset,
    seed: int,
    passes: int = DISCRETE_PASSES,
) -> tuple[float, int]:
    """(F, nº de parámetros) tras `passes` pasadas de recuento."""
    stack = build_candidate(s, dataset, seed)
    templates = list(stack.layers)
    priors = [DirichletModel.uniform(m, PRIOR_CONCENTRATION) for m in templates]
    windows = dataset.windows(s.horizon)

    # la primera pasada parte del modelo aleatorio para romper la simetría
    models = templates
    counts = priors
    for _ in range(max(1, passes)):
        _, counts = _discrete_pass(stack.links, models, priors, windows)
        models = [c.expected_model(t) for c, t in zip(counts, templates)]
    F_data, _ = _discrete_pass(stack.links, models, priors, windows)
    complexity = sum(dirichlet_complexity(c, p) for c, p in zip(counts, priors))
    return float(F_data + complexity), candidate_parameter_count(stack)


def score_continuous(
    s: StructureKnobs,
    dataset: ContinuousDataset,
    seed: int,
    iters: int = CONTINUOUS_EM_ITERS,
    base_fit: Optional[RsldsModel] = None,
) -> tuple[float, int, RsldsModel]:
    """(F, nº de parámetros, modelo ajustado); F = -Σ log-evidencia + ½·k·ln N."""
    data = list(dataset.trajectories)
    if base_fit is None:
        base = build_candidate(replace(s, K=1), dataset, seed)
        base_fit = fit_em(base, data, iters=iters).model
    model = base_fit
    if s.K > 1:
        init = initialise_switching(base_fit, data, s.K, seed)
        model = fit_em(init, data, iters=iters).model
    log_evidence = total_log_evidence(model, data)
    k = model.parameter_count()
    N = dataset.n_observations
    return float(-log_evidence + 0.5 * k * math.log(N)), k, model


_DIVERGENCE = (NonFinite, DegenerateCovariance, ZeroMass, np.linalg.LinAlgError, FloatingPointError)


class StructureScorer:
    """
    Puntúa candidatos con presupuesto fijo y guarda una caché por mandos.
    Las llamadas concurrentes son seguras; el resultado de un candidato no
    depende del orden en que se evalúa.
    """

    def __init__(
        self,
        dataset: Dataset,
        seed: int = 0,
        passes: int = DISCRETE_PASSES,
        em_iters: int = CONTINUOUS_EM_ITERS,
        bounds: KnobBounds = KnobBounds(),
    ) -> None:
        self.dataset = dataset
        self.bounds = bounds_for(dataset, bounds)
        self.seed = int(seed)
        self.passes = int(passes)
        self.em_iters = int(em_iters)
        self._cache: dict[StructureKnobs, EvidenceScore] = {}
        self._base_fits: dict[int, RsldsModel] = {}
        self._lock = threading.Lock()
        self.fits = 0

    def cached(self, s: StructureKnobs) -> Optional[EvidenceScore]:
        with self._lock:
            return self._cache.get(s)

    def _base_fit(self, s: StructureKnobs) -> RsldsModel:
        with self._lock:
            hit = self._base_fits.get(s.order_n)
        if hit is not None:
            return hit
        base = build_candidate(replace(s, K=1), self.dataset, self.seed)
        fitted = fit_em(base, list(self.dataset.trajectories), iters=self.em_iters).model
        with self._lock:
            self._base_fits.setdefault(s.order_n, fitted)
        return fitted

    def _fit(self, s: StructureKnobs) -> tuple[float, int]:
        try:
            if s.family == FAMILY_CONTINUOUS:
                F, k, _ = score_continuous(s, self.dataset, self.seed, self.em_iters, self._base_fit(s))
            else:
                F, k = score_discrete(s, self.dataset, self.seed, self.passes)
        except _DIVERGENCE as e:
            raise FitDiverged(f"{type(e).__name__}: {e}") from e
        if not np.isfinite(F):
            raise FitDiverged(f"Energía libre no finita ({F})")
        return F, k

    def score(self, s: StructureKnobs) -> EvidenceScore:
        hit = self.cached(s)
        if hit is not None:
            return hit
        problems = validate_knobs(s, self.bounds)
        if problems:
            raise ShapeMismatch("; ".join(problems))
        t0 = time.perf_counter()
        try:
            F, k = self._fit(s)
            result = EvidenceScore(F, k, time.perf_counter() - t0)
        except FitDiverged as e:
            k = candidate_parameter_count(build_candidate(s, self.dataset, self.seed))
            result = EvidenceScore(math.inf, k, time.perf_counter() - t0, diverged=True, message=str(e))
        with self._lock:
            self.fits += 1
            self._cache.setdefault(s, result)
            return self._cache[s]

    def fitted_model(self, s: StructureKnobs) -> RsldsModel:
        """Modelo continuo ajustado para `s`; no cuenta como ajuste del presupuesto."""
        if s.family != FAMILY_CONTINUOUS:
            raise ShapeMismatch("fitted_model solo aplica a la familia continua")
        _, _, model = score_continuous(s, self.dataset, self.seed, self.em_iters, self._base_fit(s))
        return model


def score(s: StructureKnobs, dataset: Dataset, budget: Optional[int] = None, seed: int = 0) -> EvidenceScore:
    """
    Puntuación aislada. `budget` es el nº de pasadas de recuento (discreto)
    o de iteraciones EM (continuo); por defecto 3 y 5.
    """
    if budget is None:
        scorer = StructureScorer(dataset, seed)
    elif isinstance(dataset, DiscreteDataset):
        scorer = StructureScorer(dataset, seed, passes=budget)
    else:
        scorer = StructureScorer(dataset, seed, em_iters=budget)
    return scorer.score(s)


# ---------------------------------------------------------------------------
# Escalada voraz
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TraceEntry:
    sweep: int
    knobs: StructureKnobs
    score: EvidenceScore
    accepted: bool
    role: str                 # "init" | "neighbor"

    def to_record(self, record_wall_clock: bool = False) -> dict:
        F = self.score.free_energy
        return {
            "sweep": self.sweep,
            "role": self.role,
            "knobs": self.knobs.to_dict(),
            "free_energy": F if math.isfinite(F) else None,
            "parameter_count": self.score.parameter_count,
            "diverged": self.score.diverged,
            "fit_seconds": round(self.score.fit_seconds, 6) if record_wall_clock else None,
            "accepted": self.accepted,
        }


@dataclass
class SearchResult:
    best: StructureKnobs
    best_score: EvidenceScore
    trace: list[TraceEntry] = field(default_factory=list)
    fits: int = 0
    stopped_by: str = "local_optimum"   # | "move_budget" | "fit_budget"

    def accepted_path(self) -> list[TraceEntry]:
        return [e for e in self.trace if e.accepted]


def write_trace(trace: Sequence[TraceEntry], path: Path, record_wall_clock: bool = False) -> Path:
    """Traza en JSON por líneas, un candidato por línea en orden canónico."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for entry in trace:
            fh.write(json.dumps(entry.to_record(record_wall_clock), sort_keys=True) + "\n")
    return path


class StructureSearch:
    """Escalada sobre los mandos con un StructureScorer compartido."""

    def __init__(
        self,
        dataset: Dataset,
        seed: int = 0,
        workers: int = 1,
        fit_budget: int = DEFAULT_FIT_BUDGET,
        bounds: KnobBounds = KnobBounds(),
        progress_callback: Optional[Callable[[str], None]] = None,
    ) -> None:
        self.dataset = dataset
        self.scorer = StructureScorer(dataset, seed, bounds=bounds)
        self.workers = max(1, int(workers))
        self.fit_budget = int(fit_budget)
        self.bounds = self.scorer.bounds
        self.progress_callback = progress_callback

    def log(self, msg: str) -> None:
        print(msg)
        if self.progress_callback:
            try:
                self.progress_callback(msg)
            except Exception:
                pass

    def _score_all(self, candidates: Sequence[StructureKnobs]) -> list[EvidenceScore]:
        pending = [c for c in candidates if self.scorer.cached(c) is None]
        if self.workers > 1 and len(pending) > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                list(pool.map(self.scorer.score, pending))
        else:
            for c in pending:
                self.scorer.score(c)
        return [self.scorer.score(c) for c in candidates]

    def _remaining(self) -> int:
        return self.fit_budget - self.scorer.fits

    def run(self, init: StructureKnobs, move_budget: int) -> SearchResult:
        if move_budget < 1:
            raise ShapeMismatch(f"move_budget debe ser >= 1, recibido {move_budget}")
        problems = validate_knobs(init, self.bounds)
        if problems:
            raise ShapeMismatch("Estructura inicial inválida: " + "; ".join(problems))

        current = init
        current_score = self._score_all([init])[0]
        result = SearchResult(current, current_score)
        result.trace.append(TraceEntry(0, init, current_score, True, "init"))
        self.log(f"[*] Búsqueda de estructura: F inicial = {current_score.free_energy:.4f}")
        if current_score.diverged:
            self.log(f"[!] La estructura inicial diverge: {current_score.message}")

        for sweep in range(1, move_budget + 1):
            cands = neighbors(current, self.bounds)
            uncached = [c for c in cands if self.scorer.cached(c) is None]
            if len(uncached) > self._remaining():
                allowed = set(uncached[: max(self._remaining(), 0)])
                cands = [c for c in cands if self.scorer.cached(c) is not None or c in allowed]
                result.stopped_by = "fit_budget"
            scores = self._score_all(cands)

            best_i = None
            for i, sc in enumerate(scores):
                if sc.diverged:
                    self.log(f"[!] Candidato {cands[i].to_dict()} divergió: {sc.message}")
                    continue
                if best_i is None or (sc.free_energy, sc.parameter_count) < (
                    scores[best_i].free_energy, scores[best_i].parameter_count
                ):
                    best_i = i

            improves = best_i is not None and current_score.free_energy - scores[best_i].free_energy > IMPROVEMENT_TOL
            for i, (c, sc) in enumerate(zip(cands, scores)):
                result.trace.append(TraceEntry(sweep, c, sc, improves and i == best_i, "neighbor"))
            if not improves:
                if result.stopped_by != "fit_budget":
                    result.stopped_by = "local_optimum"
                self.log(f"[OK] Óptimo local tras {sweep} barrido(s)")
                break
            current, current_score = cands[best_i], scores[best_i]
            self.log(f"  [MOVE] {sweep}: F = {current_score.free_energy:.4f} ({current.to_dict()})")
            if result.stopped_by == "fit_budget":
                self.log("[!] Presupuesto de ajustes agotado")
                break
        else:
            result.stopped_by = "move_budget"

        result.best, result.best_score = current, current_score
        result.fits = self.scorer.fits
        return result


def greedy_search(
    init: StructureKnobs,
    dataset: Dataset,
    move_budget: int,
    seed: int = 0,
    workers: int = 1,
    fit_budget: int = DEFAULT_FIT_BUDGET,
    progress: Optional[Callable[[str], None]] = None,
    trace_path: Optional[Path] = None,
    record_wall_clock: bool = False,
) -> tuple[StructureKnobs, list[TraceEntry]]:
    """Devuelve (mejores mandos, traza); la traza se escribe en `trace_path` si se da."""
    search = StructureSearch(dataset, seed, workers, fit_budget, progress_callback=progress)
    result = search.run(init, move_budget)
    if trace_path is not None:
        write_trace(result.trace, trace_path, record_wall_clock)
    return result.best, result.trace
