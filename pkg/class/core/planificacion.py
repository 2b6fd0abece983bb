#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
planificacion.py
----------------
Evaluación de políticas por energía libre esperada (EFE) y selección de acción.

EFE de una política (secuencia de acciones en lazo abierto) a partir de la
creencia actual, sumando por cada paso futuro:

    riesgo      = KL(q(o) || softmax(C_t))
    ambigüedad  = E_q(s)[H(A(.|s))]
    novedad     = ganancia de información esperada sobre los conteos de A y B

    total = riesgo + ambigüedad - novedad

La predicción de estados se propaga sobre el espacio conjunto de la capa
(producto de los factores expandidos), partiendo del producto de las
marginales actuales.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import digamma

from creencias import Categorical, entropy, kl_categorical, softmax_array
from errores import HorizonExceeded, NonFinite, PolicySpaceTooLarge, ShapeMismatch, TooLarge
from inferencia_discreta import StatePosterior
from pomdp_discreto import MOD_ACTION, MOD_FACTOR, DirichletModel, DiscreteLayerModel, DiscreteLayerSpec

MAX_POLICIES = 4096
MAX_JOINT_STATES = 20000
DEFAULT_PRECISION = 16.0
TIE_TOL = 1e-12


# ---------------------------------------------------------------------------
# Tipos
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Policy:
    """Acciones (H, n_base); columnas no controlables a 0."""

    actions: np.ndarray

    def __post_init__(self) -> None:
        a = np.asarray(self.actions, dtype=int)
        if a.ndim != 2 or a.shape[0] < 1:
            raise ShapeMismatch(f"Policy necesita forma (H>=1, n_base), recibido {a.shape}")
        a = a.copy()
        a.setflags(write=False)
        object.__setattr__(self, "actions", a)

    @property
    def horizon(self) -> int:
        return int(self.actions.shape[0])

    @property
    def first_action(self) -> tuple[int, ...]:
        return tuple(int(x) for x in self.actions[0])

    def key(self) -> tuple[int, ...]:
        return tuple(int(x) for x in self.actions.ravel())


@dataclass(frozen=True)
class EfeBreakdown:
    risk: float
    ambiguity: float
    novelty: float
    total: float = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "total", self.risk + self.ambiguity - self.novelty)

    def to_dict(self) -> dict:
        return {
            "risk": self.risk,
            "ambiguity": self.ambiguity,
            "novelty": self.novelty,
            "total": self.total,
        }


# ---------------------------------------------------------------------------
# Enumeración
# ---------------------------------------------------------------------------

def enumerate_policies(spec: DiscreteLayerSpec, horizon: int) -> list[Policy]:
    """Todas las políticas de longitud H en orden lexicográfico."""
    if horizon < 1:
        raise ShapeMismatch(f"horizon de planificación debe ser >= 1, recibido {horizon}")
    ctrl = [i for i in range(spec.n_base) if spec.controllable[i]]
    per_step = int(np.prod([spec.control_sizes[i] for i in ctrl])) if ctrl else 1
    total = per_step ** horizon
    if total > MAX_POLICIES:
        raise PolicySpaceTooLarge(f"{total} políticas superan el tope {MAX_POLICIES}")

    ranges = [range(spec.control_sizes[i]) for i in ctrl] * horizon
    policies = []
    for combo in itertools.product(*ranges):
        acts = np.zeros((horizon, spec.n_base), dtype=int)
        for k, value in enumerate(combo):
            acts[k // len(ctrl), ctrl[k % len(ctrl)]] = value
        policies.append(Policy(acts))
    if not ctrl:
        policies = [Policy(np.zeros((horizon, spec.n_base), dtype=int))]
    return policies


# ---------------------------------------------------------------------------
# Espacio conjunto
# ---------------------------------------------------------------------------

class _JointSpace:
    """Índices del espacio conjunto y transiciones conjuntas por acción."""

    def __init__(self, model: DiscreteLayerModel, A: Sequence[np.ndarray], B: Sequence[np.ndarray]) -> None:
        self.model = model
        self.sizes = model.factor_sizes
        self.J = int(np.prod(self.sizes))
        if self.J > MAX_JOINT_STATES:
            raise TooLarge(f"Espacio conjunto de {self.J} estados para planificar (máx {MAX_JOINT_STATES})")
        self.idx = np.unravel_index(np.arange(self.J), self.sizes)
        self.A = [np.asarray(a, dtype=float) for a in A]
        self.B = [np.asarray(b, dtype=float) for b in B]
        self.obs_axes = model.observed
        self.hidden_axes = tuple(f for f in range(len(self.sizes)) if f not in model.observed)
        self._cache: dict[tuple[int, ...], np.ndarray] = {}

    def transition(self, action: tuple[int, ...]) -> np.ndarray:
        """[siguiente, previo] del producto de las transiciones por factor."""
        if action in self._cache:
            return self._cache[action]
        out = np.ones((self.J, self.J))
        for f, fi in enumerate(self.model.factors):
            nxt, prv = self.idx[f][:, None], self.idx[f][None, :]
            if fi.modulator == MOD_FACTOR:
                out = out * self.B[f][nxt, prv, self.idx[fi.modulator_index][None, :]]
            elif fi.modulator == MOD_ACTION:
                out = out * self.B[f][nxt, prv, int(action[fi.modulator_index])]
            else:
                out = out * self.B[f][nxt, prv, 0]
        self._cache[action] = out
        return out

    def product_state(self, marginals: Sequence[np.ndarray]) -> np.ndarray:
        joint = np.asarray(marginals[0], dtype=float)
        for m in marginals[1:]:
            joint = np.multiply.outer(joint, m)
        return joint.ravel()

    def observed_marginal(self, q_joint: np.ndarray) -> np.ndarray:
        t = q_joint.reshape(self.sizes)
        if self.hidden_axes:
            t = t.sum(axis=self.hidden_axes)
        return t.ravel()

    def pair_marginal(self, q_joint: np.ndarray, f: int, g: int) -> np.ndarray:
        t = q_joint.reshape(self.sizes)
        other = tuple(a for a in range(len(self.sizes)) if a not in (f, g))
        t = t.sum(axis=other) if other else t
        return t if f < g else t.T


def dirichlet_novelty_terms(counts: np.ndarray) -> np.ndarray:
    """
    KL(Dir(α + e_o) || Dir(α)) por entrada (o, corte):
        ln α0 - ln α_o + ψ(α_o + 1) - ψ(α0 + 1)
    Entradas con α_o = 0 valen 0 (no pueden observarse).
    """
    a = np.asarray(counts, dtype=float)
    a0 = a.sum(axis=0, keepdims=True)
    safe = np.where(a > 0, a, 1.0)
    term = np.log(a0) - np.log(safe) + digamma(safe + 1.0) - digamma(a0 + 1.0)
    return np.where(a > 0, term, 0.0)


def _preferences(model: DiscreteLayerModel, preferences_C) -> list[np.ndarray]:
    if preferences_C is None:
        return [np.asarray(c) for c in model.C]
    out = []
    for m, c in enumerate(preferences_C):
        c = np.asarray(c, dtype=float)
        if c.ndim == 1:
            c = np.repeat(c[:, None], model.horizon, axis=1)
        if c.shape != (model.spec.modality_sizes[m], model.horizon):
            raise ShapeMismatch(f"C[{m}] con forma {c.shape}")
        out.append(c)
    return out


# ---------------------------------------------------------------------------
# EFE
# ---------------------------------------------------------------------------

def expected_free_energy(
    model: DiscreteLayerModel,
    dirichlet: Optional[DirichletModel],
    current: StatePosterior,
    policy: Policy,
    preferences_C=None,
    time: Optional[int] = None,
    _space: Optional[_JointSpace] = None,
) -> EfeBreakdown:
    """
    Propaga la creencia actual (tiempo `time`, por defecto el último
    observado) bajo la política y acumula riesgo, ambigüedad y novedad
    en cada paso futuro. Sin `dirichlet` los parámetros se consideran
    conocidos y la novedad es 0.
    """
    t0 = current.current_time if time is None else int(time)
    H = policy.horizon
    if t0 + H > model.horizon - 1:
        raise HorizonExceeded(f"Política de {H} pasos desde t={t0} con T={model.horizon}")

    if _space is None:
        if dirichlet is None:
            _space = _JointSpace(model, model.A, model.B)
        else:
            _space = _JointSpace(
                model,
                [c.mean() for c in dirichlet.a_counts],
                [c.mean() for c in dirichlet.b_counts],
            )
    space = _space
    C = _preferences(model, preferences_C)

    novelty_A = novelty_B = None
    if dirichlet is not None:
        novelty_A = [dirichlet_novelty_terms(c.counts) for c in dirichlet.a_counts]
        novelty_B = [dirichlet_novelty_terms(c.counts) for c in dirichlet.b_counts]

    q = space.product_state([current.marginals[f][t0] for f in range(len(space.sizes))])
    risk = ambiguity = novelty = 0.0
    for tau in range(H):
        action = tuple(int(x) for x in policy.actions[tau])
        q_prev = q
        q = space.transition(action) @ q_prev
        t = t0 + tau + 1

        p_s = space.observed_marginal(q)
        for m, a in enumerate(space.A):
            a_flat = a.reshape(a.shape[0], -1)
            q_o = a_flat @ p_s
            q_o = q_o / q_o.sum()
            pref = softmax_array(C[m][:, t])
            risk += kl_categorical(q_o, pref)
            h_cols = np.array([entropy(a_flat[:, s]) for s in range(a_flat.shape[1])])
            ambiguity += float(h_cols @ p_s)
            if novelty_A is not None:
                kl = novelty_A[m].reshape(a_flat.shape)
                novelty += float(np.sum(p_s[None, :] * a_flat * kl))

        if novelty_B is not None:
            for f, fi in enumerate(model.factors):
                b = space.B[f]
                if fi.modulator == MOD_FACTOR:
                    q_sm = space.pair_marginal(q_prev, f, fi.modulator_index)
                else:
                    q_f = _single_marginal(space, q_prev, f)
                    q_sm = np.zeros((fi.size, fi.n_mod))
                    col = int(action[fi.modulator_index]) if fi.modulator == MOD_ACTION else 0
                    q_sm[:, col] = q_f
                novelty += float(np.einsum("sm,psm,psm->", q_sm, b, novelty_B[f]))

    return EfeBreakdown(float(risk), float(ambiguity), float(novelty))


def _single_marginal(space: _JointSpace, q_joint: np.ndarray, f: int) -> np.ndarray:
    t = q_joint.reshape(space.sizes)
    other = tuple(a for a in range(len(space.sizes)) if a != f)
    return t.sum(axis=other) if other else t


def evaluate_policies(
    model: DiscreteLayerModel,
    dirichlet: Optional[DirichletModel],
    current: StatePosterior,
    policies: Sequence[Policy],
    preferences_C=None,
    time: Optional[int] = None,
    workers: int = 1,
) -> list[EfeBreakdown]:
    """EFE de cada política; el orden de salida es el de `policies`."""
    if dirichlet is None:
        space = _JointSpace(model, model.A, model.B)
    else:
        space = _JointSpace(model, [c.mean() for c in dirichlet.a_counts], [c.mean() for c in dirichlet.b_counts])
    # precalcular transiciones para que los hilos solo lean la caché
    for p in policies:
        for row in p.actions:
            space.transition(tuple(int(x) for x in row))

    def _one(p: Policy) -> EfeBreakdown:
        return expected_free_energy(model, dirichlet, current, p, preferences_C, time, _space=space)

    if workers > 1 and len(policies) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_one, policies))
    return [_one(p) for p in policies]


def policy_posterior(efes: Sequence[float], precision: float = DEFAULT_PRECISION) -> Categorical:
    """softmax(-γ · EFE)."""
    totals = np.asarray([e.total if isinstance(e, EfeBreakdown) else e for e in efes], dtype=float)
    if not np.all(np.isfinite(totals)):
        raise NonFinite("policy_posterior con EFE no finitas")
    return Categorical(softmax_array(-totals, precision))


def select_action(policies: Sequence[Policy], posterior: Categorical) -> tuple[int, ...]:
    """
    Marginaliza el posterior sobre políticas que comparten primera acción y
    devuelve la de mayor masa; empates (±1e-12) al índice más bajo.
    """
    probs = posterior.probs if isinstance(posterior, Categorical) else np.asarray(posterior)
    if len(policies) != probs.size:
        raise ShapeMismatch(f"{len(policies)} políticas y {probs.size} probabilidades")
    mass: dict[tuple[int, ...], float] = {}
    for p, w in zip(policies, probs):
        key = p.first_action
        mass[key] = mass.get(key, 0.0) + float(w)
    best = max(mass.values())
    return min(k for k, v in mass.items() if v >= best - TIE_TOL)
