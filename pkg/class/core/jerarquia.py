#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
jerarquia.py
------------
Pilas de capas: discreta sobre discreta y discreta sobre continua.

    - LinkSpec / LayerStack : composición (de arriba abajo) y sus enlaces.
    - descend_prior()       : la predicción de resultado del padre fija el
                              prior del hijo (D de un factor o régimen inicial).
    - ascend_evidence()     : vector exp(-F_v) por valor candidato del padre,
                              con F_v la energía libre del hijo con el prior
                              fijado a v.
    - run_stack()           : dos pasadas (evidencia ascendente, después
                              priors descendentes e inferencia por capa).
    - sample_stack()        : muestreo ancestral de una pila de dos niveles.
    - flatten_parent_posterior() : posterior exacto del padre sobre el modelo
                              conjunto aplanado (oráculo de pruebas).

Cada capa inferior completa una ventana de `temporal_ratio` pasos por cada
tick de la capa superior.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np

from creencias import Categorical, normalize
from errores import CardinalityMismatch, LayerError, LengthMismatch, MissingChildRun, ShapeMismatch
from inferencia_discreta import (
    ExactPosterior,
    StatePosterior,
    exact_posterior_oracle,
    infer_states,
)
from pomdp_discreto import DiscreteLayerModel, Trajectory, sample_trajectory
from rslds_continuo import RsldsModel, Simulation, filter_trajectory, simulate

Layer = Union[DiscreteLayerModel, RsldsModel]

TARGET_D = "D"
TARGET_REGIME = "regime"


# ---------------------------------------------------------------------------
# Tipos
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LinkSpec:
    """
    parent_modality : modalidad del padre que fija el prior del hijo.
    child_target    : "D" (prior inicial de un factor) o "regime".
    child_factor    : factor del hijo cuando child_target = "D".
    temporal_ratio  : pasos del hijo por tick del padre (>= 1).
    cardinality     : tamaño común; lo rellena LayerStack.
    """

    parent_modality: int
    child_target: str = TARGET_D
    child_factor: int = 0
    temporal_ratio: int = 1
    cardinality: Optional[int] = None

    def __post_init__(self) -> None:
        if self.child_target not in (TARGET_D, TARGET_REGIME):
            raise ShapeMismatch(f"child_target desconocido: {self.child_target!r}")
        if int(self.temporal_ratio) < 1:
            raise ShapeMismatch(f"temporal_ratio debe ser >= 1, recibido {self.temporal_ratio}")


def _target_size(child: Layer, link: LinkSpec) -> int:
    if isinstance(child, RsldsModel):
        if link.child_target != TARGET_REGIME:
            raise ShapeMismatch("Un hijo continuo solo admite child_target='regime'")
        return child.K
    if link.child_target != TARGET_D:
        raise ShapeMismatch("Un hijo discreto solo admite child_target='D'")
    if not 0 <= link.child_factor < child.n_factors:
        raise ShapeMismatch(f"child_factor {link.child_factor} fuera de rango")
    return child.factors[link.child_factor].size


@dataclass(frozen=True, eq=False)
class LayerStack:
    """Capas de arriba abajo; las continuas solo pueden ir al fondo."""

    layers: tuple
    links: tuple = ()

    def __post_init__(self) -> None:
        layers = tuple(self.layers)
        links = tuple(self.links)
        if not layers:
            raise ShapeMismatch("LayerStack vacío")
        if len(links) != len(layers) - 1:
            raise ShapeMismatch(f"{len(layers)} capas necesitan {len(layers) - 1} enlaces, recibidos {len(links)}")
        for i, layer in enumerate(layers[:-1]):
            if isinstance(layer, RsldsModel):
                raise ShapeMismatch(f"Capa continua en la posición {i}: solo se admiten al fondo de la pila")
        checked = []
        for i, link in enumerate(links):
            parent, child = layers[i], layers[i + 1]
            if not 0 <= link.parent_modality < parent.spec.n_modalities:
                raise ShapeMismatch(f"Enlace {i}: parent_modality {link.parent_modality} fuera de rango")
            n_parent = parent.spec.modality_sizes[link.parent_modality]
            n_child = _target_size(child, link)
            if n_parent != n_child:
                raise CardinalityMismatch(
                    f"Enlace {i}: modalidad del padre con {n_parent} valores, objetivo del hijo con {n_child}"
                )
            if isinstance(child, DiscreteLayerModel) and child.horizon != link.temporal_ratio:
                raise LengthMismatch(
                    f"Enlace {i}: el hijo discreto tiene T={child.horizon} y temporal_ratio={link.temporal_ratio}"
                )
            checked.append(replace(link, cardinality=n_parent))
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "links", tuple(checked))

    @property
    def depth(self) -> int:
        return len(self.layers)

    def windows(self, level: int) -> int:
        """Nº de ventanas (episodios) de la capa `level`."""
        n = 1
        for i in range(level):
            parent = self.layers[i]
            n *= parent.horizon
        return n

    def bottom_length(self) -> int:
        """Pasos totales de la capa inferior."""
        bottom = self.layers[-1]
        per_window = self.links[-1].temporal_ratio if self.links else (
            bottom.horizon if isinstance(bottom, DiscreteLayerModel) else None
        )
        if per_window is None:
            raise ShapeMismatch("Una pila continua de una sola capa no tiene longitud fija")
        return self.windows(self.depth - 1) * per_window


# ---------------------------------------------------------------------------
# Mensajes
# ---------------------------------------------------------------------------

def descend_prior(parent_outcome_belief, link: LinkSpec) -> Categorical:
    """Prior del hijo = distribución predictiva del resultado enlazado del padre."""
    probs = parent_outcome_belief.probs if isinstance(parent_outcome_belief, Categorical) else np.asarray(
        parent_outcome_belief, dtype=float
    )
    if link.cardinality is not None and probs.size != link.cardinality:
        raise CardinalityMismatch(f"Creencia del padre con {probs.size} valores, el enlace espera {link.cardinality}")
    return normalize(probs)


def with_child_prior(child: Layer, link: LinkSpec, prior) -> Layer:
    p = prior.probs if isinstance(prior, Categorical) else np.asarray(prior, dtype=float)
    if isinstance(child, RsldsModel):
        return child.with_initial_regime(p)
    return child.with_prior(link.child_factor, p)


@dataclass(frozen=True)
class ChildRuns:
    """Energía libre del hijo por valor candidato del padre."""

    free_energies: dict


@dataclass(frozen=True, eq=False)
class ChildEvidence:
    log_values: np.ndarray   # -F_v
    values: np.ndarray       # exp(-F_v - max), máximo 1

    @property
    def log_scale(self) -> float:
        """values · exp(log_scale) = exp(-F_v)."""
        return float(np.max(self.log_values))


def run_child(child: Layer, observations, actions=None) -> tuple[object, float]:
    """Inferencia de una ventana del hijo; devuelve (resultado, energía libre)."""
    if isinstance(child, RsldsModel):
        res = filter_trajectory(child, observations, actions)
        return res, -res.log_evidence
    post, trace = infer_states(child, observations, actions)
    return post, trace.final


def clamped_child_runs(child: Layer, link: LinkSpec, observations, actions=None, workers: int = 1) -> ChildRuns:
    """Una ejecución del hijo por valor del padre, con el prior fijado a ese valor."""
    n = link.cardinality if link.cardinality is not None else (
        child.K if isinstance(child, RsldsModel) else child.factors[link.child_factor].size
    )

    def _one(v: int) -> float:
        clamped = with_child_prior(child, link, np.eye(n)[v])
        return float(run_child(clamped, observations, actions)[1])

    if workers > 1 and n > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            values = list(pool.map(_one, range(n)))
    else:
        values = [_one(v) for v in range(n)]
    return ChildRuns({v: values[v] for v in range(n)})


def ascend_evidence(child_run_result: ChildRuns, link: LinkSpec) -> ChildEvidence:
    """Vector de verosimilitud exp(-F_v) (escalado) sobre los valores del padre."""
    runs = child_run_result.free_energies
    n = link.cardinality if link.cardinality is not None else len(runs)
    missing = [v for v in range(n) if v not in runs]
    if missing:
        raise MissingChildRun(f"Faltan ejecuciones del hijo para los valores {missing}")
    log_values = -np.array([float(runs[v]) for v in range(n)])
    if not np.any(np.isfinite(log_values)):
        raise MissingChildRun("Ninguna ejecución del hijo tiene energía libre finita")
    top = np.max(log_values[np.isfinite(log_values)])
    values = np.where(np.isfinite(log_values), np.exp(log_values - top), 0.0)
    return ChildEvidence(log_values, values)


def predictive_outcome(model: DiscreteLayerModel, posterior: StatePosterior, modality: int, t: int) -> Categorical:
    """q(o_t) = Σ_s A(o | s) q(s_t) con el producto de marginales observadas."""
    joint = np.asarray(posterior.marginals[model.observed[0]][t])
    for f in model.observed[1:]:
        joint = np.multiply.outer(joint, posterior.marginals[f][t])
    a = model.A[modality]
    q_o = a.reshape(a.shape[0], -1) @ joint.ravel()
    return normalize(q_o)


# ---------------------------------------------------------------------------
# Ejecución de la pila
# ---------------------------------------------------------------------------

@dataclass
class LayerRun:
    """Resultados de una capa: uno por ventana."""

    posteriors: list = field(default_factory=list)
    free_energies: list = field(default_factory=list)
    priors: list = field(default_factory=list)
    evidence: list = field(default_factory=list)


@dataclass
class StackResult:
    layers: list

    def parent_posterior(self, level: int = 0) -> StatePosterior:
        return self.layers[level].posteriors[0]


def _window_inputs(stack: LayerStack, level: int, data, n_windows: int) -> list:
    """Divide los datos del fondo en n_windows ventanas."""
    if data is None:
        return [None] * n_windows
    if len(data) == n_windows and not isinstance(data, np.ndarray):
        return list(data)
    seq = list(data) if not isinstance(data, np.ndarray) else data
    if len(seq) % n_windows != 0:
        raise LengthMismatch(f"{len(seq)} pasos no se dividen en {n_windows} ventanas")
    size = len(seq) // n_windows
    return [seq[w * size:(w + 1) * size] for w in range(n_windows)]


def evidence_rows(model: DiscreteLayerModel, link: LinkSpec, evidence: Sequence[ChildEvidence]) -> list:
    """Observaciones blandas de una capa padre a partir de la evidencia de sus hijos."""
    M = model.spec.n_modalities
    rows = []
    for ev in evidence:
        row: list = [None] * M
        row[link.parent_modality] = np.asarray(ev.values)
        rows.append(row)
    return rows


def run_stack(stack: LayerStack, observations, actions=None, workers: int = 1) -> StackResult:
    """
    Dos pasadas deterministas:

      1. De abajo arriba: para cada ventana de cada capa (salvo la superior)
         se ejecuta el hijo con el prior fijado a cada valor del padre y se
         sube la evidencia exp(-F_v); la capa superior se infiere con ella.
      2. De arriba abajo: la predicción de resultado del padre en cada tick
         se baja como prior y cada ventana del hijo se infiere con ese prior.

    `observations` son los datos de la capa inferior (una lista de ventanas o
    la secuencia completa). `actions`, si se da, es una lista por capa con
    una secuencia de acciones por ventana.
    """
    L = stack.depth
    layer_actions = list(actions) if actions is not None else [None] * L
    if len(layer_actions) != L:
        raise LengthMismatch(f"actions necesita una entrada por capa ({L})")

    if L == 1:
        layer = stack.layers[0]
        try:
            res, F = run_child(layer, observations, layer_actions[0])
        except Exception as e:
            raise LayerError(0, e) from e
        return StackResult([LayerRun([res], [F], [None], [None])])

    n_windows = [stack.windows(l) for l in range(L)]
    runs = [LayerRun() for _ in range(L)]
    inputs: list[list] = [[None] * n for n in n_windows]
    inputs[L - 1] = _window_inputs(stack, L - 1, observations, n_windows[L - 1])

    def _acts(level: int, w: int):
        a = layer_actions[level]
        return None if a is None else a[w]

    # pasada 1: evidencia ascendente
    for level in range(L - 1, 0, -1):
        link = stack.links[level - 1]
        child = stack.layers[level]
        parent = stack.layers[level - 1]
        try:
            evidence = [
                ascend_evidence(clamped_child_runs(child, link, inputs[level][w], _acts(level, w), workers), link)
                for w in range(n_windows[level])
            ]
        except Exception as e:
            raise LayerError(level, e) from e
        runs[level].evidence = evidence
        T_parent = parent.horizon
        inputs[level - 1] = [
            evidence_rows(parent, link, evidence[w * T_parent:(w + 1) * T_parent])
            for w in range(n_windows[level - 1])
        ]

    try:
        top_res, top_F = run_child(stack.layers[0], inputs[0][0], _acts(0, 0))
    except Exception as e:
        raise LayerError(0, e) from e
    runs[0].posteriors = [top_res]
    runs[0].free_energies = [top_F]
    runs[0].priors = [None]

    # pasada 2: priors descendentes e inferencia por capa
    for level in range(1, L):
        link = stack.links[level - 1]
        parent = stack.layers[level - 1]
        child = stack.layers[level]
        T_parent = parent.horizon
        try:
            for w in range(n_windows[level]):
                pw, t = divmod(w, T_parent)
                belief = predictive_outcome(parent, runs[level - 1].posteriors[pw], link.parent_modality, t)
                prior = descend_prior(belief, link)
                res, F = run_child(with_child_prior(child, link, prior), inputs[level][w], _acts(level, w))
                runs[level].priors.append(prior)
                runs[level].posteriors.append(res)
                runs[level].free_energies.append(F)
        except Exception as e:
            raise LayerError(level, e) from e
    return StackResult(runs)


# ---------------------------------------------------------------------------
# Muestreo y oráculo aplanado (dos niveles)
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class StackSample:
    parent: Trajectory
    children: tuple     # Trajectory o Simulation por tick del padre

    def bottom_observations(self) -> list:
        out = []
        for c in self.children:
            out.append(c.y if isinstance(c, Simulation) else [list(map(int, row)) for row in c.observations])
        return out


def sample_stack(stack: LayerStack, seed: int, parent_actions=None) -> StackSample:
    """Padre por muestreo ancestral; en cada tick, una ventana del hijo con prior one-hot."""
    if stack.depth != 2:
        raise ShapeMismatch("sample_stack admite pilas de dos niveles")
    parent, child = stack.layers
    link = stack.links[0]
    ss = np.random.SeedSequence(seed)
    parent_seed, *child_seeds = (int(s.generate_state(1)[0]) for s in ss.spawn(parent.horizon + 1))
    p_traj = sample_trajectory(parent, parent_actions, parent_seed)
    n = link.cardinality
    children = []
    for t in range(parent.horizon):
        v = int(p_traj.observations[t, link.parent_modality])
        clamped = with_child_prior(child, link, np.eye(n)[v])
        if isinstance(clamped, RsldsModel):
            children.append(simulate(clamped, link.temporal_ratio, child_seeds[t]))
        else:
            acts = np.full((clamped.horizon - 1, clamped.spec.n_base), -1, dtype=int)
            children.append(sample_trajectory(clamped, acts, child_seeds[t]))
    return StackSample(p_traj, tuple(children))


def flatten_parent_posterior(stack: LayerStack, windows: Sequence, actions=None) -> ExactPosterior:
    """
    Posterior exacto del padre en una pila discreta de dos niveles: como el
    resultado enlazado fija el prior del hijo, la verosimilitud exacta de la
    ventana t dado el valor v es p(datos_t | v), calculada por enumeración.
    """
    if stack.depth != 2 or isinstance(stack.layers[1], RsldsModel):
        raise ShapeMismatch("flatten_parent_posterior admite pilas discretas de dos niveles")
    parent, child = stack.layers
    link = stack.links[0]
    n = link.cardinality
    rows = []
    for w, data in enumerate(windows):
        acts = None if actions is None else actions[w]
        log_lik = np.array([
            exact_posterior_oracle(with_child_prior(child, link, np.eye(n)[v]), data, acts).log_evidence
            for v in range(n)
        ])
        row: list = [None] * parent.spec.n_modalities
        row[link.parent_modality] = np.exp(log_lik - log_lik.max())
        rows.append(row)
    return exact_posterior_oracle(parent, rows)
