#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
agente.py
---------
Agentes que cierran el ciclo percibir -> planificar -> actuar -> aprender.

    - DiscreteAgent : inferencia de estados, EFE sobre todas las políticas
                      del horizonte restante, selección de acción y
                      aprendizaje Dirichlet al final de cada episodio.
    - RsldsObserver : observador pasivo de una capa continua (filtro
                      incremental + fit_em entre episodios).

Ambos devuelven un StepOutcome por paso; el experimento lo convierte en
un RunRecord.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from creencias import LOG_FLOOR, Categorical, kl_categorical, normalize
from errores import ShapeMismatch
from inferencia_discreta import StatePosterior, dirichlet_complexity, infer_states, update_parameters
from planificacion import (
    DEFAULT_PRECISION,
    EfeBreakdown,
    Policy,
    enumerate_policies,
    evaluate_policies,
    policy_posterior,
    select_action,
)
from pomdp_discreto import DirichletModel, DiscreteLayerModel
from rslds_continuo import RsldsFilter, RsldsModel, fit_em

KNOWN_SCALE = 100.0


@dataclass
class StepOutcome:
    """Lo que el agente deja registrado en un paso."""

    t: int
    observation: list
    action: Optional[int] = None
    policies: list = field(default_factory=list)          # claves de política
    efe: list = field(default_factory=list)                # EfeBreakdown por política
    free_energy: Optional[float] = None
    info_gain: Optional[float] = None


def learning_prior(
    model: DiscreteLayerModel,
    learn: Sequence[str],
    prior_scale: float = 1.0,
    known_scale: float = KNOWN_SCALE,
) -> DirichletModel:
    """
    Conteos iniciales centrados en `model`: los tensores en `learn` con
    concentración `prior_scale`, el resto casi fijos (`known_scale`).
    """
    loose = DirichletModel.from_model(model, scale=prior_scale)
    tight = DirichletModel.from_model(model, scale=known_scale)
    return DirichletModel(
        loose.a_counts if "A" in learn else tight.a_counts,
        loose.b_counts if "B" in learn else tight.b_counts,
        loose.d_counts if "D" in learn else tight.d_counts,
    )


def _floored(p: np.ndarray) -> np.ndarray:
    return normalize(np.maximum(np.asarray(p, dtype=float), LOG_FLOOR)).probs


class DiscreteAgent:
    """
    Agente de inferencia activa sobre una capa discreta con un único factor
    controlable. Sin `dirichlet` los parámetros son conocidos (novedad 0 y
    sin aprendizaje).
    """

    def __init__(
        self,
        model: DiscreteLayerModel,
        dirichlet: Optional[DirichletModel] = None,
        planning_horizon: int = 2,
        precision: float = DEFAULT_PRECISION,
        learning_rate: float = 1.0,
        learn: Sequence[str] = ("A",),
        workers: int = 1,
    ) -> None:
        ctrl = [i for i, c in enumerate(model.spec.controllable) if c]
        if len(ctrl) != 1:
            raise ShapeMismatch(f"DiscreteAgent necesita exactamente un factor controlable, hay {len(ctrl)}")
        self.model = model
        self.dirichlet = dirichlet
        self.planning_horizon = int(planning_horizon)
        self.precision = float(precision)
        self.learning_rate = float(learning_rate)
        self.learn = tuple(learn)
        self.workers = int(workers)
        self.control_factor = ctrl[0]
        self.reset()

    # ---------- episodio ----------

    def reset(self) -> None:
        self.observations: list[list[int]] = []
        self.actions: list[int] = []
        self.posterior: Optional[StatePosterior] = None

    def _action_array(self) -> np.ndarray:
        T = self.model.horizon
        acts = np.zeros((T - 1, self.model.spec.n_base), dtype=int)
        acts[:, self.control_factor] = -1
        for t, a in enumerate(self.actions):
            acts[t, self.control_factor] = a
        return acts

    def _predicted(self, t: int) -> list[np.ndarray]:
        if self.posterior is not None:
            return [self.posterior.marginals[f][t] for f in range(self.model.n_factors)]
        if self.dirichlet is not None:
            return [c.mean() for c in self.dirichlet.d_counts]
        return list(self.model.D)

    def perceive(self, observation) -> tuple[StatePosterior, float, float]:
        """Incorpora o_t; devuelve (posterior, energía libre, ganancia de información)."""
        t = len(self.observations)
        before = self._predicted(t)
        self.observations.append([int(o) for o in observation])
        post, trace = infer_states(self.model, self.observations, self._action_array(), dirichlet=self.dirichlet)
        gain = 0.0
        for f in range(self.model.n_factors):
            gain += kl_categorical(post.marginals[f][t], _floored(before[f]))
        self.posterior = post
        return post, float(trace.final), float(gain)

    def plan(self) -> tuple[list[Policy], list[EfeBreakdown]]:
        t = len(self.observations) - 1
        H = min(self.planning_horizon, self.model.horizon - 1 - t)
        if H < 1:
            return [], []
        policies = enumerate_policies(self.model.spec, H)
        efes = evaluate_policies(self.model, self.dirichlet, self.posterior, policies, time=t, workers=self.workers)
        return policies, efes

    def act(self, policies: Sequence[Policy], efes: Sequence[EfeBreakdown]) -> int:
        post = policy_posterior(efes, self.precision)
        action = int(select_action(policies, post)[self.control_factor])
        self.actions.append(action)
        return action

    def step(self, observation) -> StepOutcome:
        """Percibe y, si quedan pasos, planifica y elige la acción siguiente."""
        t = len(self.observations)
        _, F, gain = self.perceive(observation)
        out = StepOutcome(t, [int(o) for o in observation], free_energy=F, info_gain=gain)
        policies, efes = self.plan()
        if policies:
            out.action = self.act(policies, efes)
            out.policies = [list(p.key()) for p in policies]
            out.efe = list(efes)
        return out

    def learn_from_episode(self) -> float:
        """Actualiza los conteos con el episodio; devuelve KL(nuevo || anterior)."""
        if self.dirichlet is None or self.posterior is None or self.learning_rate == 0.0:
            return 0.0
        T = self.model.horizon
        obs = self.observations[:T]
        before = self.dirichlet
        self.dirichlet = update_parameters(
            before, self.posterior, obs, self._action_array(), self.learning_rate, self.model, tensors=self.learn
        )
        return float(dirichlet_complexity(self.dirichlet, before))

    def learned_model(self) -> DiscreteLayerModel:
        if self.dirichlet is None:
            return self.model
        return self.dirichlet.expected_model(self.model)


class RsldsObserver:
    """
    Observador pasivo: filtra cada paso y, si aprende, reajusta el modelo
    con fit_em sobre las últimas `memory` trayectorias al cerrar el episodio.
    """

    def __init__(
        self,
        model: RsldsModel,
        learn: bool = False,
        em_iters: int = 5,
        memory: int = 20,
        progress: Optional[Callable[[str], None]] = None,
    ) -> None:
        self.model = model
        self.learn = bool(learn)
        self.em_iters = int(em_iters)
        self.memory = int(memory)
        self.progress = progress
        self.history: list[np.ndarray] = []
        self.reset()

    def reset(self) -> None:
        self.filter = RsldsFilter(self.model)
        self.trajectory: list[np.ndarray] = []
        self.regime_belief: Categorical = self.model.initial_regime

    def step(self, observation) -> StepOutcome:
        y = np.asarray(observation, dtype=float).ravel()
        t = len(self.trajectory)
        regime, _ = self.filter.update(y)
        self.trajectory.append(y)
        # energía libre acumulada del episodio: -log p(y_1..t)
        out = StepOutcome(t, y.tolist(), free_energy=-float(self.filter.log_evidence))
        self.regime_belief = regime
        return out

    def learn_from_episode(self) -> float:
        """Devuelve la mejora de log-evidencia del reajuste (0 si no aprende)."""
        if self.trajectory:
            self.history.append(np.asarray(self.trajectory))
        if not self.learn or not self.history:
            return 0.0
        data = self.history[-self.memory:]
        fit = fit_em(self.model, data, iters=self.em_iters, progress=self.progress)
        self.model = fit.model
        return float(fit.trace[-1] - fit.trace[0])
