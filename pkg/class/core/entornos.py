#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
entornos.py
-----------
Entornos de referencia con su modelo generativo exacto:

    - TMazeEnv      : laberinto en T con pista (POMDP discreto).
    - PoolTableEnv  : bola en una mesa de billar unitaria (rsLDS, K = 5).

Ambos registran un log de episodio (t, acción, observación, estado oculto);
el estado oculto solo sirve para diagnóstico y nunca lo ve el agente.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from creencias import Categorical, GaussianBelief
from errores import EpisodeDone, InvalidAction, NonFinite
from pomdp_discreto import DiscreteLayerModel, DiscreteLayerSpec
from rslds_continuo import EmissionModel, RecurrentRule, RegimeParams, RsldsModel


def _episode_record(t: int, action, observation, hidden: dict) -> dict:
    return {
        "t": int(t),
        "action": action,
        "observation": observation,
        "hidden": hidden,
        "diagnostic_only": ["hidden"],
    }


# ---------------------------------------------------------------------------
# T-maze
# ---------------------------------------------------------------------------

CENTRE, LEFT, RIGHT, CUE = 0, 1, 2, 3
LOCATION_NAMES = ("centre", "left", "right", "cue")

REWARD_NULL, REWARD_HIT, REWARD_MISS = 0, 1, 2
CUE_NULL, CUE_LEFT, CUE_RIGHT = 0, 1, 2


def tmaze_spec(horizon: int = 3) -> DiscreteLayerSpec:
    return DiscreteLayerSpec(
        factor_sizes=(4, 2),
        modality_sizes=(4, 3, 3),
        horizon=horizon,
        controllable=(True, False),
        control_sizes=(4, 1),
        factor_names=("location", "context"),
    )


def _tmaze_next_location(loc: int, action: int) -> int:
    """Los brazos son absorbentes; desde centro o pista se va a `action`."""
    if loc in (LEFT, RIGHT):
        return loc
    return action


def tmaze_tensors(reward_prob: float = 1.0) -> tuple[tuple[np.ndarray, ...], tuple[np.ndarray, ...]]:
    """A (ubicación, recompensa, pista) y B (ubicación, contexto) del T-maze."""
    A_loc = np.zeros((4, 4, 2))
    A_rew = np.zeros((3, 4, 2))
    A_cue = np.zeros((3, 4, 2))
    for loc in range(4):
        for ctx in range(2):
            A_loc[loc, loc, ctx] = 1.0
            if loc in (LEFT, RIGHT):
                good = (loc == LEFT) == (ctx == 0)
                p_hit = reward_prob if good else 1.0 - reward_prob
                A_rew[REWARD_HIT, loc, ctx] = p_hit
                A_rew[REWARD_MISS, loc, ctx] = 1.0 - p_hit
            else:
                A_rew[REWARD_NULL, loc, ctx] = 1.0
            if loc == CUE:
                A_cue[CUE_LEFT if ctx == 0 else CUE_RIGHT, loc, ctx] = 1.0
            else:
                A_cue[CUE_NULL, loc, ctx] = 1.0

    B_loc = np.zeros((4, 4, 4))
    for a in range(4):
        for loc in range(4):
            B_loc[_tmaze_next_location(loc, a), loc, a] = 1.0
    B_ctx = np.eye(2)[:, :, None]
    return (A_loc, A_rew, A_cue), (B_loc, B_ctx)


def tmaze_preferences(horizon: int, reward_pref: float = 0.0) -> tuple[np.ndarray, ...]:
    """C plano (reward_pref = 0) o preferencia ±reward_pref por acierto/fallo."""
    c_rew = np.zeros((3, horizon))
    c_rew[REWARD_HIT] = reward_pref
    c_rew[REWARD_MISS] = -reward_pref
    return (np.zeros((4, horizon)), c_rew, np.zeros((3, horizon)))


@dataclass
class TMazeEnv:
    """
    Laberinto en T: el agente parte del centro; el contexto oculto decide
    qué brazo paga (0 = izquierda). La pista revela el contexto. Dos
    acciones por episodio; cada acción es 'ir a' una ubicación.
    """

    reward_prob: float = 1.0
    n_actions: int = 2

    location: int = field(default=CENTRE, init=False)
    reward_arm: int = field(default=0, init=False)
    t: int = field(default=0, init=False)
    log: list = field(default_factory=list, init=False)
    _rng: Optional[np.random.Generator] = field(default=None, init=False, repr=False)

    @property
    def horizon(self) -> int:
        return self.n_actions + 1

    @property
    def done(self) -> bool:
        return self.t >= self.n_actions

    def reset(self, seed: int) -> tuple[int, int, int]:
        self._rng = np.random.default_rng(seed)
        self.reward_arm = int(self._rng.integers(2))
        self.location = CENTRE
        self.t = 0
        obs = self._observe()
        self.log = [_episode_record(0, None, list(obs), self._hidden())]
        return obs

    def _hidden(self) -> dict:
        return {"location": self.location, "reward_arm": LOCATION_NAMES[LEFT + self.reward_arm]}

    def _observe(self) -> tuple[int, int, int]:
        loc = self.location
        if loc in (LEFT, RIGHT):
            good = (loc == LEFT) == (self.reward_arm == 0)
            p_hit = self.reward_prob if good else 1.0 - self.reward_prob
            if p_hit >= 1.0:
                reward = REWARD_HIT
            elif p_hit <= 0.0:
                reward = REWARD_MISS
            else:
                reward = REWARD_HIT if self._rng.random() < p_hit else REWARD_MISS
        else:
            reward = REWARD_NULL
        if loc == CUE:
            cue = CUE_LEFT if self.reward_arm == 0 else CUE_RIGHT
        else:
            cue = CUE_NULL
        return (loc, reward, cue)

    def step(self, action: int) -> tuple[tuple[int, int, int], bool]:
        if self._rng is None:
            raise EpisodeDone("TMazeEnv.step() antes de reset()")
        if self.done:
            raise EpisodeDone(f"El episodio terminó tras {self.n_actions} acciones")
        if not isinstance(action, (int, np.integer)) or not 0 <= int(action) < 4:
            raise InvalidAction(f"Acción de T-maze inválida: {action!r} (0..3)")
        self.location = _tmaze_next_location(self.location, int(action))
        self.t += 1
        obs = self._observe()
        self.log.append(_episode_record(self.t, int(action), list(obs), self._hidden()))
        return obs, self.done

    def ground_truth_model(self, reward_pref: float = 0.0) -> DiscreteLayerModel:
        """Modelo exacto desde el punto de vista del agente (contexto uniforme)."""
        A, B = tmaze_tensors(self.reward_prob)
        D = (np.eye(4)[CENTRE], np.full(2, 0.5))
        spec = tmaze_spec(self.horizon)
        return DiscreteLayerModel(spec, A, B, D, tmaze_preferences(self.horizon, reward_pref))


# ---------------------------------------------------------------------------
# Mesa de billar
# ---------------------------------------------------------------------------

INTERIOR, WALL_LEFT, WALL_RIGHT, WALL_BOTTOM, WALL_TOP = range(5)
REGIME_NAMES = ("interior", "left", "right", "bottom", "top")
# (eje, signo): margen = signo · (posición prevista) + constante
_WALLS = ((0, -1.0), (0, 1.0), (1, -1.0), (1, 1.0))
RULE_SHARPNESS = 1e8


def impulse_directions() -> np.ndarray:
    """9 impulsos unitarios: 0 = ninguno, 1..8 cada 45°."""
    dirs = [np.zeros(2)]
    for k in range(8):
        ang = k * np.pi / 4.0
        dirs.append(np.array([np.cos(ang), np.sin(ang)]))
    return np.asarray(dirs)


def wall_margins(position: np.ndarray, velocity: np.ndarray, dt: float, band: float) -> np.ndarray:
    """Penetración de la posición prevista en cada banda (>0 = dentro)."""
    pred = position + dt * velocity
    return np.array([
        band - pred[0],
        pred[0] - (1.0 - band),
        band - pred[1],
        pred[1] - (1.0 - band),
    ])


def wall_regime(position: np.ndarray, velocity: np.ndarray, dt: float, band: float) -> int:
    """Régimen activo: la pared con mayor margen positivo o el interior."""
    m = wall_margins(position, velocity, dt, band)
    k = int(np.argmax(m))
    return k + 1 if m[k] > 0 else INTERIOR


def _reflection(regime: int) -> np.ndarray:
    R = np.eye(2)
    if regime != INTERIOR:
        axis, _ = _WALLS[regime - 1]
        R[axis, axis] = -1.0
    return R


def reflect_velocity(position: np.ndarray, velocity: np.ndarray, dt: float, band: float) -> np.ndarray:
    """
    Invierte, eje por eje, la componente normal de cada pared en cuya banda
    cae la posición prevista, siempre que la bola se acerque a esa pared.
    En una esquina se invierten ambas componentes.
    """
    m = wall_margins(position, velocity, dt, band)
    v = np.array(velocity, dtype=float)
    for k, (axis, sign) in enumerate(_WALLS):
        if m[k] > 0 and sign * velocity[axis] > 0:
            v[axis] = -v[axis]
    return v


def fold_into_table(position: np.ndarray, velocity: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Refleja en espejo la posición que sale de [0,1]² e invierte la componente de velocidad afectada."""
    p = np.array(position, dtype=float)
    v = np.array(velocity, dtype=float)
    if not np.all(np.isfinite(p)):
        raise NonFinite(f"Posición no finita: {p.tolist()}")
    for axis in range(2):
        while p[axis] < 0.0 or p[axis] > 1.0:
            p[axis] = -p[axis] if p[axis] < 0.0 else 2.0 - p[axis]
            v[axis] = -v[axis]
    return p, v


@dataclass
class PoolTableEnv:
    """
    Bola en [0,1]² con bandas de pared de ancho `band`. En cada paso:
        v_r = v con la componente normal invertida en cada pared cuya banda
              alcanza la posición prevista (ambas en una esquina)
        p' = p + dt · v_r, reflejada en espejo si sale de [0,1]²
        v' = v_r + σ·ε
    El régimen registrado es la pared con mayor margen (o el interior).
    Observación: posición + ruido N(0, σ_obs²).
    """

    dt: float = 0.05
    band: float = 0.05
    sigma: float = 0.01
    sigma_obs: float = 0.005
    impulse: float = 0.2
    max_steps: Optional[int] = None

    position: np.ndarray = field(default_factory=lambda: np.full(2, 0.5), init=False)
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(2), init=False)
    regime: int = field(default=INTERIOR, init=False)
    t: int = field(default=0, init=False)
    log: list = field(default_factory=list, init=False)
    _rng: Optional[np.random.Generator] = field(default=None, init=False, repr=False)

    @property
    def n_actions(self) -> int:
        return 9

    @property
    def done(self) -> bool:
        return self.max_steps is not None and self.t >= self.max_steps

    def reset(self, seed: int) -> np.ndarray:
        self._rng = np.random.default_rng(seed)
        self.position = self._rng.uniform(0.2, 0.8, size=2)
        speed = self._rng.uniform(0.3, 0.7)
        ang = self._rng.uniform(0.0, 2.0 * np.pi)
        self.velocity = speed * np.array([np.cos(ang), np.sin(ang)])
        self.regime = INTERIOR
        self.t = 0
        obs = self._observe()
        self.log = [_episode_record(0, None, obs.tolist(), self._hidden())]
        return obs

    def set_state(self, position, velocity) -> None:
        self.position = np.asarray(position, dtype=float).copy()
        self.velocity = np.asarray(velocity, dtype=float).copy()

    def _hidden(self) -> dict:
        return {
            "position": self.position.tolist(),
            "velocity": self.velocity.tolist(),
            "regime": REGIME_NAMES[self.regime],
        }

    def _observe(self) -> np.ndarray:
        if self.sigma_obs > 0:
            return self.position + self.sigma_obs * self._rng.standard_normal(2)
        return self.position.copy()

    def step(self, action: Optional[int] = None) -> tuple[np.ndarray, bool]:
        if self._rng is None:
            raise EpisodeDone("PoolTableEnv.step() antes de reset()")
        if self.done:
            raise EpisodeDone(f"El episodio terminó tras {self.max_steps} pasos")
        if action is not None:
            if not isinstance(action, (int, np.integer)) or not 0 <= int(action) < self.n_actions:
                raise InvalidAction(f"Impulso inválido: {action!r} (0..{self.n_actions - 1} o None)")
            self.velocity = self.velocity + self.impulse * impulse_directions()[int(action)]

        self.regime = wall_regime(self.position, self.velocity, self.dt, self.band)
        v_ref = reflect_velocity(self.position, self.velocity, self.dt, self.band)
        self.position, self.velocity = fold_into_table(self.position + self.dt * v_ref, v_ref)
        if self.sigma > 0:
            self.velocity = self.velocity + self.sigma * self._rng.standard_normal(2)
        self.t += 1
        obs = self._observe()
        self.log.append(_episode_record(self.t, None if action is None else int(action), obs.tolist(), self._hidden()))
        return obs, self.done

    def ground_truth_model(self) -> RsldsModel:
        """
        rsLDS con 5 regímenes (interior + 4 paredes) sobre x = [p, v].
        La regla recurrente puntúa cada pared con κ·margen (κ = 1e8) frente
        a 0 del interior, de modo que el softmax reproduce la elección de
        régimen del entorno. Los impulsos no forman parte del modelo.
        En las esquinas el modelo solo refleja el eje de la pared dominante.
        """
        dt = self.dt
        I2 = np.eye(2)
        regimes = []
        Qd = np.zeros((4, 4))
        Qd[2:, 2:] = self.sigma ** 2 * I2
        for k in range(5):
            R = _reflection(k)
            F = np.zeros((4, 4))
            F[:2, :2] = I2
            F[:2, 2:] = dt * R
            F[2:, 2:] = R
            regimes.append(RegimeParams((F - np.eye(4)) / dt, np.zeros(4), Qd / dt))

        W = np.zeros((5, 4))
        r = np.zeros(5)
        limits = (self.band, 1.0 - self.band)
        for k, (axis, sign) in enumerate(_WALLS, start=1):
            W[k, axis] = sign * RULE_SHARPNESS
            W[k, 2 + axis] = sign * dt * RULE_SHARPNESS
            r[k] = -sign * RULE_SHARPNESS * (limits[0] if sign < 0 else limits[1])
        rule = RecurrentRule(np.zeros((5, 5)), W, r)

        C = np.hstack([I2, np.zeros((2, 2))])
        emission = EmissionModel(C, self.sigma_obs ** 2 * I2)
        if self._rng is not None:
            init_x = GaussianBelief(np.concatenate([self.position, self.velocity]), np.zeros((4, 4)))
        else:
            init_x = GaussianBelief(np.array([0.5, 0.5, 0.0, 0.0]), np.diag([0.03, 0.03, 0.25, 0.25]))
        return RsldsModel(
            tuple(regimes),
            rule,
            emission,
            dt,
            Categorical(np.eye(5)[INTERIOR]),
            init_x,
        )
