#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
rslds_continuo.py
-----------------
Capa continua: sistema lineal dinámico conmutado recurrente (rsLDS).

    z_1 ~ initial_regime            x_1 ~ initial_state
    z_t ~ softmax(markov[z_{t-1}] + W x_{t-1} + r + action[:, a_{t-1}])
    x_t = F_{z_t} x_{t-1} + u_{z_t} + w,     w ~ N(0, Q_d)
    y_t = C x_t + v,                         v ~ N(0, R)

con F = I + dt·A, u = dt·b, Q_d = dt·Q (discretización de Euler).

Contenido:
    - Tipos: RegimeParams, RecurrentRule, EmissionModel, RsldsModel,
      GeneralisedConfig.
    - euler_discretise, switch_distribution, simulate.
    - filter_trajectory (GPB2, dominio logarítmico) y RsldsFilter (online).
    - fit_em (E: filtro + suavizado; M: mínimos cuadrados ponderados +
      ascenso de gradiente sobre los logits de la regla).
    - log_evidence_gradient (autograd), predictive_mse.
    - embed_generalised (coordenadas generalizadas).
    - default_model / initialise_switching (inicialización para ajuste).

El filtro está escrito con autograd.numpy para poder derivar la
log-evidencia respecto a los logits de la regla recurrente.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import autograd.numpy as anp
import numpy as np
from autograd import grad
from autograd.scipy.special import logsumexp as alogsumexp
from autograd.tracer import getval
from scipy.cluster.vq import kmeans2
from scipy.optimize import minimize

from creencias import PROB_TOL, Categorical, GaussianBelief, log_stable, normalize, softmax_array
from errores import DegenerateCovariance, DepthExceeded, DimensionMismatch, NonFinite, ShapeMismatch

JITTER = 1e-9
Q_FLOOR = 1e-10
RIDGE = 1e-6
MAX_GENERALISED_ORDER = 3
FORMAT_VERSION = 1
LOG_2PI = math.log(2.0 * math.pi)


def _frozen(a) -> np.ndarray:
    out = np.array(a, dtype=float, copy=True)
    out.setflags(write=False)
    return out


def _check_psd(name: str, M: np.ndarray) -> None:
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ShapeMismatch(f"{name} debe ser cuadrada, forma {M.shape}")
    if not np.all(np.isfinite(M)):
        raise NonFinite(f"{name} con entradas no finitas")
    if np.max(np.abs(M - M.T)) > PROB_TOL:
        raise DimensionMismatch(f"{name} no es simétrica")
    if np.linalg.eigvalsh(0.5 * (M + M.T)).min() < -PROB_TOL:
        raise DimensionMismatch(f"{name} no es semidefinida positiva")


def psd_sqrt(M: np.ndarray) -> np.ndarray:
    """L con L L' = M (vía eigh; exactamente 0 si M = 0)."""
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    return V * np.sqrt(np.clip(w, 0.0, None))[None, :]


def _floor_psd(M: np.ndarray, floor: float) -> np.ndarray:
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    return (V * np.maximum(w, floor)[None, :]) @ V.T


# ---------------------------------------------------------------------------
# Tipos
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RegimeParams:
    drift_A: np.ndarray
    bias_b: np.ndarray
    volatility_Q: np.ndarray

    def __post_init__(self) -> None:
        A = np.atleast_2d(np.asarray(self.drift_A, dtype=float))
        b = np.atleast_1d(np.asarray(self.bias_b, dtype=float))
        Q = np.atleast_2d(np.asarray(self.volatility_Q, dtype=float))
        d = A.shape[0]
        if A.shape != (d, d) or b.shape != (d,) or Q.shape != (d, d):
            raise ShapeMismatch(f"RegimeParams inconsistentes: A{A.shape} b{b.shape} Q{Q.shape}")
        _check_psd("volatility_Q", Q)
        object.__setattr__(self, "drift_A", _frozen(A))
        object.__setattr__(self, "bias_b", _frozen(b))
        object.__setattr__(self, "volatility_Q", _frozen(0.5 * (Q + Q.T)))

    @property
    def dim(self) -> int:
        return int(self.drift_A.shape[0])


@dataclass(frozen=True, eq=False)
class DiscreteRegime:
    F: np.ndarray
    u: np.ndarray
    Q_d: np.ndarray


def euler_discretise(regime: RegimeParams, dt: float) -> DiscreteRegime:
    """F = I + dt·A, u = dt·b, Q_d = dt·Q."""
    if dt <= 0:
        raise ShapeMismatch(f"dt debe ser > 0, recibido {dt}")
    d = regime.dim
    return DiscreteRegime(
        np.eye(d) + dt * regime.drift_A,
        dt * regime.bias_b,
        dt * regime.volatility_Q,
    )


def regime_from_discrete(F: np.ndarray, u: np.ndarray, Q_d: np.ndarray, dt: float) -> RegimeParams:
    d = F.shape[0]
    return RegimeParams((F - np.eye(d)) / dt, u / dt, Q_d / dt)


@dataclass(frozen=True, eq=False)
class RecurrentRule:
    markov_logits: np.ndarray
    recurrent_W: np.ndarray
    recurrent_r: np.ndarray
    action_logits: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        P = np.atleast_2d(np.asarray(self.markov_logits, dtype=float))
        W = np.atleast_2d(np.asarray(self.recurrent_W, dtype=float))
        r = np.atleast_1d(np.asarray(self.recurrent_r, dtype=float))
        K = P.shape[0]
        if P.shape != (K, K) or W.shape[0] != K or r.shape != (K,):
            raise ShapeMismatch(f"RecurrentRule inconsistente: markov{P.shape} W{W.shape} r{r.shape}")
        arrays = [P, W, r]
        act = None
        if self.action_logits is not None:
            act = np.atleast_2d(np.asarray(self.action_logits, dtype=float))
            if act.shape[0] != K:
                raise ShapeMismatch(f"action_logits debe tener {K} filas")
            arrays.append(act)
        if not all(np.all(np.isfinite(a)) for a in arrays):
            raise NonFinite("RecurrentRule con logits no finitos")
        object.__setattr__(self, "markov_logits", _frozen(P))
        object.__setattr__(self, "recurrent_W", _frozen(W))
        object.__setattr__(self, "recurrent_r", _frozen(r))
        object.__setattr__(self, "action_logits", None if act is None else _frozen(act))

    @property
    def K(self) -> int:
        return int(self.markov_logits.shape[0])


@dataclass(frozen=True, eq=False)
class EmissionModel:
    C: np.ndarray
    R: np.ndarray

    def __post_init__(self) -> None:
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        if R.shape != (C.shape[0], C.shape[0]):
            raise ShapeMismatch(f"EmissionModel: C{C.shape} y R{R.shape} incompatibles")
        _check_psd("R", R)
        object.__setattr__(self, "C", _frozen(C))
        object.__setattr__(self, "R", _frozen(0.5 * (R + R.T)))


@dataclass(frozen=True, eq=False)
class RsldsModel:
    regimes: tuple[RegimeParams, ...]
    rule: RecurrentRule
    emission: EmissionModel
    dt: float
    initial_regime: Categorical
    initial_state: GaussianBelief

    def __post_init__(self) -> None:
        regimes = tuple(self.regimes)
        if len(regimes) < 1:
            raise ShapeMismatch("RsldsModel necesita K >= 1 regímenes")
        if self.dt <= 0:
            raise ShapeMismatch(f"dt debe ser > 0, recibido {self.dt}")
        d = regimes[0].dim
        if any(r.dim != d for r in regimes):
            raise ShapeMismatch("Todos los regímenes deben tener la misma dimensión")
        K = len(regimes)
        if self.rule.K != K or self.rule.recurrent_W.shape[1] != d:
            raise ShapeMismatch(f"La regla no coincide con K={K}, d={d}")
        if self.emission.C.shape[1] != d:
            raise ShapeMismatch(f"Emisión con {self.emission.C.shape[1]} columnas para d={d}")
        init_r = self.initial_regime if isinstance(self.initial_regime, Categorical) else Categorical(self.initial_regime)
        if init_r.n != K:
            raise ShapeMismatch("initial_regime debe tener K entradas")
        init_x = self.initial_state
        if init_x.dim != d:
            raise ShapeMismatch("initial_state con dimensión incorrecta")
        object.__setattr__(self, "regimes", regimes)
        object.__setattr__(self, "initial_regime", init_r)
        object.__setattr__(self, "dt", float(self.dt))

    @property
    def K(self) -> int:
        return len(self.regimes)

    @property
    def dim(self) -> int:
        return self.regimes[0].dim

    @property
    def obs_dim(self) -> int:
        return int(self.emission.C.shape[0])

    def discretised(self) -> list[DiscreteRegime]:
        return [euler_discretise(r, self.dt) for r in self.regimes]

    def parameter_count(self) -> int:
        """Parámetros libres ajustados por fit_em (dinámica, ruido, regla, R)."""
        d, K, p = self.dim, self.K, self.obs_dim
        per_regime = d * d + d + d * (d + 1) // 2
        rule = K * K + K * d + K if K > 1 else 0
        return int(K * per_regime + rule + p * (p + 1) // 2)

    def with_initial_regime(self, prior) -> "RsldsModel":
        return replace(self, initial_regime=normalize(prior.probs if isinstance(prior, Categorical) else prior))

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "kind": "rslds",
            "dt": self.dt,
            "regimes": [
                {"A": r.drift_A.tolist(), "b": r.bias_b.tolist(), "Q": r.volatility_Q.tolist()}
                for r in self.regimes
            ],
            "rule": {
                "markov_logits": self.rule.markov_logits.tolist(),
                "recurrent_W": self.rule.recurrent_W.tolist(),
                "recurrent_r": self.rule.recurrent_r.tolist(),
                "action_logits": None if self.rule.action_logits is None else self.rule.action_logits.tolist(),
            },
            "emission": {"C": self.emission.C.tolist(), "R": self.emission.R.tolist()},
            "initial_regime": self.initial_regime.probs.tolist(),
            "initial_state": {
                "mean": self.initial_state.mean.tolist(),
                "covariance": self.initial_state.covariance.tolist(),
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RsldsModel":
        rule = d["rule"]
        return cls(
            tuple(RegimeParams(r["A"], r["b"], r["Q"]) for r in d["regimes"]),
            RecurrentRule(rule["markov_logits"], rule["recurrent_W"], rule["recurrent_r"], rule.get("action_logits")),
            EmissionModel(d["emission"]["C"], d["emission"]["R"]),
            float(d["dt"]),
            Categorical(np.asarray(d["initial_regime"], dtype=float)),
            GaussianBelief(d["initial_state"]["mean"], d["initial_state"]["covariance"]),
        )


def validate_model(model: RsldsModel) -> list[str]:
    """Diagnósticos de invariantes (lista vacía = correcto); nunca lanza."""
    out: list[str] = []
    if not model.dt > 0:
        out.append(f"dt={model.dt} no es positivo")
    for k, r in enumerate(model.regimes):
        for name, arr in (("A", r.drift_A), ("b", r.bias_b), ("Q", r.volatility_Q)):
            if not np.all(np.isfinite(arr)):
                out.append(f"régimen {k}: {name} no finito")
        if np.linalg.eigvalsh(r.volatility_Q).min() < -PROB_TOL:
            out.append(f"régimen {k}: Q no semidefinida positiva")
    if np.linalg.eigvalsh(model.emission.R).min() < -PROB_TOL:
        out.append("R no semidefinida positiva")
    if abs(model.initial_regime.probs.sum() - 1.0) > PROB_TOL:
        out.append("initial_regime no normalizada")
    return out


@dataclass(frozen=True)
class GeneralisedConfig:
    order_n: int
    smoothness: float = 1.0

    def __post_init__(self) -> None:
        if self.order_n < 0:
            raise DepthExceeded(f"order_n negativo: {self.order_n}")
        if self.smoothness <= 0:
            raise ShapeMismatch(f"smoothness debe ser > 0, recibido {self.smoothness}")


# ---------------------------------------------------------------------------
# Regla de conmutación y simulación
# ---------------------------------------------------------------------------

def switch_logits(rule: RecurrentRule, z_prev: int, x_prev: np.ndarray, a: Optional[int] = None) -> np.ndarray:
    logits = rule.markov_logits[z_prev] + rule.recurrent_W @ np.asarray(x_prev, dtype=float) + rule.recurrent_r
    if a is not None and a >= 0 and rule.action_logits is not None:
        logits = logits + rule.action_logits[:, a]
    return logits


def switch_distribution(rule: RecurrentRule, z_prev: int, x_prev, a: Optional[int] = None) -> Categorical:
    """softmax(markov[z_prev] + W x_prev + r + action[:, a])."""
    return Categorical(softmax_array(switch_logits(rule, z_prev, x_prev, a)))


@dataclass(frozen=True, eq=False)
class Simulation:
    z: np.ndarray   # (T,)
    x: np.ndarray   # (T, d)
    y: np.ndarray   # (T, p)


def _draw(rng: np.random.Generator, p: np.ndarray) -> int:
    cdf = np.cumsum(p)
    u = rng.random() * cdf[-1]
    return int(min(np.searchsorted(cdf, u, side="right"), p.size - 1))


def simulate(model: RsldsModel, T: int, seed: int, actions: Optional[Sequence[int]] = None) -> Simulation:
    """Muestreo ancestral con las dinámicas discretizadas; determinista dada la semilla."""
    if T < 1:
        raise ShapeMismatch(f"T debe ser >= 1, recibido {T}")
    rng = np.random.default_rng(seed)
    disc = model.discretised()
    d, p = model.dim, model.obs_dim
    Lq = [psd_sqrt(r.Q_d) for r in disc]
    Lr = psd_sqrt(model.emission.R)
    L0 = psd_sqrt(model.initial_state.covariance)
    C = model.emission.C

    z = np.zeros(T, dtype=int)
    x = np.zeros((T, d))
    y = np.zeros((T, p))
    z[0] = _draw(rng, model.initial_regime.probs)
    x[0] = model.initial_state.mean + L0 @ rng.standard_normal(d)
    y[0] = C @ x[0] + Lr @ rng.standard_normal(p)
    for t in range(1, T):
        a = None if actions is None else int(actions[t - 1])
        z[t] = _draw(rng, softmax_array(switch_logits(model.rule, z[t - 1], x[t - 1], a)))
        reg = disc[z[t]]
        x[t] = reg.F @ x[t - 1] + reg.u + Lq[z[t]] @ rng.standard_normal(d)
        y[t] = C @ x[t] + Lr @ rng.standard_normal(p)
    return Simulation(z, x, y)


# ---------------------------------------------------------------------------
# Filtro GPB2 (autograd.numpy)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _Dynamics:
    F: np.ndarray     # (K, d, d)
    u: np.ndarray     # (K, d)
    Qd: np.ndarray    # (K, d, d)
    C: np.ndarray
    R: np.ndarray
    log_pi0: np.ndarray
    m0: np.ndarray
    P0: np.ndarray


def _dynamics(model: RsldsModel) -> _Dynamics:
    disc = model.discretised()
    return _Dynamics(
        np.stack([r.F for r in disc]),
        np.stack([r.u for r in disc]),
        np.stack([r.Q_d for r in disc]),
        np.asarray(model.emission.C),
        np.asarray(model.emission.R),
        log_stable(model.initial_regime.probs),
        np.asarray(model.initial_state.mean),
        np.asarray(model.initial_state.covariance),
    )


def _rule_params(rule: RecurrentRule) -> dict:
    out = {
        "markov_logits": np.asarray(rule.markov_logits),
        "recurrent_W": np.asarray(rule.recurrent_W),
        "recurrent_r": np.asarray(rule.recurrent_r),
    }
    if rule.action_logits is not None:
        out["action_logits"] = np.asarray(rule.action_logits)
    return out


def _checked_innovation(S):
    """Devuelve S (o S + 1e-9·I si S no admite Cholesky); si no, DegenerateCovariance."""
    Sv = getval(S)
    if not np.all(np.isfinite(Sv)):
        raise NonFinite("Covarianza de innovación no finita")
    try:
        np.linalg.cholesky(Sv)
        return S
    except np.linalg.LinAlgError:
        pass
    eye = JITTER * np.eye(Sv.shape[-1])
    try:
        np.linalg.cholesky(Sv + eye)
    except np.linalg.LinAlgError as e:
        raise DegenerateCovariance(f"Covarianza de innovación no invertible con jitter {JITTER}") from e
    return S + eye


def _log_switch(rule: dict, mu, a: Optional[int]):
    logits = rule["markov_logits"] + anp.dot(mu, anp.transpose(rule["recurrent_W"])) + rule["recurrent_r"][None, :]
    if a is not None and a >= 0 and "action_logits" in rule:
        logits = logits + rule["action_logits"][:, a][None, :]
    return logits - alogsumexp(logits, axis=1, keepdims=True)


def _kalman_update(m, P, y, C, R):
    """Actualización de un único Gaussiano; devuelve (m', P', loglik)."""
    CP = anp.dot(C, P)
    S = _checked_innovation(anp.dot(CP, anp.transpose(C)) + R)
    innov = y - anp.dot(C, m)
    gain_t = anp.linalg.solve(S, CP)
    m_post = m + anp.dot(innov, gain_t)
    P_post = P - anp.dot(anp.transpose(CP), gain_t)
    P_post = 0.5 * (P_post + anp.transpose(P_post))
    _, logdet = anp.linalg.slogdet(S)
    quad = anp.dot(innov, anp.linalg.solve(S, innov))
    ll = -0.5 * (y.shape[0] * LOG_2PI + logdet + quad)
    return m_post, P_post, ll


def _gpb2_init(dyn: _Dynamics, K: int, y):
    m, P, ll = _kalman_update(dyn.m0, dyn.P0, y, dyn.C, dyn.R)
    mu = anp.tile(m[None, :], (K, 1))
    Sig = anp.tile(P[None, :, :], (K, 1, 1))
    log_pi = dyn.log_pi0 - alogsumexp(dyn.log_pi0)
    return log_pi, mu, Sig, ll, anp.dot(dyn.C, dyn.m0)


def _gpb2_step(dyn: _Dynamics, rule: dict, log_pi, mu, Sig, y, a: Optional[int]):
    """
    Un paso GPB2: propaga cada (i -> j), actualiza con y, pondera con
    π(i)·p(j|i, μ_i)·N(y) y colapsa a K Gaussianas por emparejamiento
    de momentos.
    """
    F, u, Qd, C, R = dyn.F, dyn.u, dyn.Qd, dyn.C, dyn.R
    L = _log_switch(rule, mu, a)                                      # (K, K)
    m_pred = anp.einsum("jab,ib->ija", F, mu) + u[None, :, :]         # (K, K, d)
    P_pred = anp.einsum("jab,ibc,jdc->ijad", F, Sig, F) + Qd[None, :, :, :]
    y_hat = anp.einsum("pa,ija->ijp", C, m_pred)
    y_pred = anp.einsum("ij,ijp->p", anp.exp(log_pi[:, None] + L), y_hat)

    CP = anp.einsum("pa,ijab->ijpb", C, P_pred)
    S = _checked_innovation(anp.einsum("ijpb,qb->ijpq", CP, C) + R[None, None, :, :])
    innov = y[None, None, :] - y_hat
    gain_t = anp.linalg.solve(S, CP)                                  # S^-1 C P
    m_post = m_pred + anp.einsum("ijpd,ijp->ijd", gain_t, innov)
    P_post = P_pred - anp.einsum("ijpd,ijpe->ijde", CP, gain_t)
    P_post = 0.5 * (P_post + anp.swapaxes(P_post, -1, -2))

    sol = anp.linalg.solve(S, innov[..., None])[..., 0]
    _, logdet = anp.linalg.slogdet(S)
    loglik = -0.5 * (y.shape[0] * LOG_2PI + logdet + anp.sum(innov * sol, axis=-1))

    log_w = log_pi[:, None] + L + loglik
    log_inc = alogsumexp(log_w)
    log_w = log_w - log_inc
    log_pi_new = alogsumexp(log_w, axis=0)
    cond = anp.exp(log_w - log_pi_new[None, :])                       # p(i | j)
    mu_new = anp.einsum("ij,ijd->jd", cond, m_post)
    diff = m_post - mu_new[None, :, :]
    spread = diff[..., :, None] * diff[..., None, :]
    Sig_new = anp.einsum("ij,ijab->jab", cond, P_post + spread)
    return log_pi_new, mu_new, Sig_new, log_inc, y_pred, anp.exp(log_w)


def _action_at(actions, t: int) -> Optional[int]:
    if actions is None:
        return None
    a = int(actions[t])
    return a if a >= 0 else None


def _filter_log_evidence(rule: dict, dyn: _Dynamics, K: int, ys, actions) -> float:
    log_pi, mu, Sig, total, _ = _gpb2_init(dyn, K, ys[0])
    for t in range(1, ys.shape[0]):
        log_pi, mu, Sig, inc, _, _ = _gpb2_step(dyn, rule, log_pi, mu, Sig, ys[t], _action_at(actions, t - 1))
        total = total + inc
    return total


@dataclass(frozen=True, eq=False)
class FilterResult:
    regime_probs: np.ndarray        # (T, K)
    means: np.ndarray               # (T, K, d)
    covs: np.ndarray                # (T, K, d, d)
    pair_probs: np.ndarray          # (T-1, K, K)  p(z_t=i, z_{t+1}=j | y_1:t+1)
    predicted_obs: np.ndarray       # (T, p)       E[y_t | y_1:t-1]
    step_log_likelihood: np.ndarray # (T,)
    log_evidence: float

    def regime_belief(self, t: int) -> Categorical:
        return normalize(self.regime_probs[t])

    def state_belief(self, t: int) -> GaussianBelief:
        return collapse(self.regime_probs[t], self.means[t], self.covs[t])


def collapse(weights: np.ndarray, means: np.ndarray, covs: np.ndarray) -> GaussianBelief:
    """Emparejamiento de momentos de una mezcla de Gaussianas."""
    w = np.asarray(weights) / np.sum(weights)
    m = w @ means
    diff = means - m[None, :]
    P = np.einsum("k,kab->ab", w, covs + diff[:, :, None] * diff[:, None, :])
    return GaussianBelief(m, 0.5 * (P + P.T))


def _as_obs(model: RsldsModel, y) -> np.ndarray:
    ys = np.asarray(y, dtype=float)
    if ys.ndim == 1 and model.obs_dim == 1:
        ys = ys[:, None]
    if ys.ndim != 2 or ys.shape[1] != model.obs_dim:
        raise ShapeMismatch(f"Observaciones con forma {ys.shape}, se esperaba (T, {model.obs_dim})")
    return ys


def filter_trajectory(model: RsldsModel, y, actions: Optional[Sequence[int]] = None) -> FilterResult:
    """Filtro GPB2 sobre una trayectoria; marginales filtradas + log-evidencia."""
    ys = _as_obs(model, y)
    T = ys.shape[0]
    dyn = _dynamics(model)
    rule = _rule_params(model.rule)
    K = model.K

    log_pi, mu, Sig, ll, y0 = _gpb2_init(dyn, K, ys[0])
    pis, mus, sigs, lls, preds, pairs = [np.exp(log_pi)], [mu], [Sig], [ll], [y0], []
    for t in range(1, T):
        log_pi, mu, Sig, ll, yp, pw = _gpb2_step(dyn, rule, log_pi, mu, Sig, ys[t], _action_at(actions, t - 1))
        pis.append(np.exp(log_pi))
        mus.append(mu)
        sigs.append(Sig)
        lls.append(ll)
        preds.append(yp)
        pairs.append(pw)
    step_ll = np.asarray(lls, dtype=float)
    total = float(np.sum(step_ll))
    if not np.isfinite(total):
        raise NonFinite("Log-evidencia del filtro no finita")
    return FilterResult(
        np.asarray(pis),
        np.asarray(mus),
        np.asarray(sigs),
        np.asarray(pairs) if pairs else np.zeros((0, K, K)),
        np.asarray(preds),
        step_ll,
        total,
    )


class RsldsFilter:
    """Filtro incremental: un update() por observación (uso online)."""

    def __init__(self, model: RsldsModel) -> None:
        self.model = model
        self._dyn = _dynamics(model)
        self._rule = _rule_params(model.rule)
        self._state = None
        self.log_evidence = 0.0
        self.t = 0

    def update(self, y, action_prev: Optional[int] = None) -> tuple[Categorical, GaussianBelief]:
        y = np.asarray(y, dtype=float).ravel()
        if y.shape != (self.model.obs_dim,):
            raise ShapeMismatch(f"Observación con forma {y.shape}")
        if self._state is None:
            log_pi, mu, Sig, ll, _ = _gpb2_init(self._dyn, self.model.K, y)
        else:
            a = None if action_prev is None or action_prev < 0 else int(action_prev)
            log_pi, mu, Sig, ll, _, _ = _gpb2_step(self._dyn, self._rule, *self._state, y, a)
        self._state = (log_pi, mu, Sig)
        self.log_evidence += float(ll)
        self.t += 1
        pi = np.exp(log_pi)
        return normalize(pi), collapse(pi, mu, Sig)

    def predict_observation(self, action: Optional[int] = None) -> np.ndarray:
        """E[y_{t+1} | y_1:t]."""
        if self._state is None:
            return self._dyn.C @ self._dyn.m0
        log_pi, mu, _ = self._state
        L = _log_switch(self._rule, mu, action)
        m_pred = np.einsum("jab,ib->ija", self._dyn.F, mu) + self._dyn.u[None]
        w = np.exp(log_pi[:, None] + L)
        return self._dyn.C @ np.einsum("ij,ija->a", w, m_pred)


# ---------------------------------------------------------------------------
# Gradiente de la log-evidencia respecto a la regla
# ---------------------------------------------------------------------------

def total_log_evidence(model: RsldsModel, dataset: Sequence[np.ndarray], actions=None) -> float:
    total = 0.0
    for n, y in enumerate(dataset):
        acts = None if actions is None else actions[n]
        total += filter_trajectory(model, y, acts).log_evidence
    return float(total)


def log_evidence_gradient(model: RsldsModel, dataset: Sequence[np.ndarray], actions=None) -> dict:
    """∂ Σ log-evidencia / ∂ logits de la regla (markov, W, r y acción si existe)."""
    dyn = _dynamics(model)
    K = model.K
    ys_list = [_as_obs(model, y) for y in dataset]

    def objective(rule: dict):
        total = 0.0
        for n, ys in enumerate(ys_list):
            acts = None if actions is None else actions[n]
            total = total + _filter_log_evidence(rule, dyn, K, ys, acts)
        return total

    g = grad(objective)(_rule_params(model.rule))
    return {k: np.asarray(v, dtype=float) for k, v in g.items()}


def _with_rule(model: RsldsModel, params: dict) -> RsldsModel:
    return replace(
        model,
        rule=RecurrentRule(
            params["markov_logits"],
            params["recurrent_W"],
            params["recurrent_r"],
            params.get("action_logits"),
        ),
    )


# ---------------------------------------------------------------------------
# Suavizado (para el paso E)
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SmoothedStats:
    gamma: np.ndarray       # (T, K)
    mean: np.ndarray        # (T, d)
    cov: np.ndarray         # (T, d, d)
    cross: np.ndarray       # (T-1, d, d)  E[x_{t+1} x_t']


def smooth(model: RsldsModel, y, filt: Optional[FilterResult] = None) -> SmoothedStats:
    """
    Regímenes: recursión hacia atrás con las probabilidades de pares del
    filtro. Estados: Kalman + RTS sobre la dinámica promediada con γ_t.
    Con K = 1 es el suavizador de Kalman exacto.
    """
    ys = _as_obs(model, y)
    filt = filt or filter_trajectory(model, ys)
    T, K = filt.regime_probs.shape
    gamma = np.zeros((T, K))
    gamma[-1] = filt.regime_probs[-1]
    for t in range(T - 2, -1, -1):
        pw = filt.pair_probs[t]
        col = pw.sum(axis=0, keepdims=True)
        cond = np.divide(pw, col, out=np.zeros_like(pw), where=col > 0)
        gamma[t] = cond @ gamma[t + 1]
    gamma = gamma / gamma.sum(axis=1, keepdims=True)

    disc = model.discretised()
    F = np.stack([r.F for r in disc])
    u = np.stack([r.u for r in disc])
    Qd = np.stack([r.Q_d for r in disc])
    C, R = model.emission.C, model.emission.R
    d = model.dim

    m_f = np.zeros((T, d))
    P_f = np.zeros((T, d, d))
    m_p = np.zeros((T, d))
    P_p = np.zeros((T, d, d))
    Fbar = np.zeros((T, d, d))
    for t in range(T):
        if t == 0:
            m_p[0] = model.initial_state.mean
            P_p[0] = model.initial_state.covariance
        else:
            Fbar[t] = np.einsum("k,kab->ab", gamma[t], F)
            ubar = gamma[t] @ u
            Qbar = np.einsum("k,kab->ab", gamma[t], Qd)
            m_p[t] = Fbar[t] @ m_f[t - 1] + ubar
            P_p[t] = Fbar[t] @ P_f[t - 1] @ Fbar[t].T + Qbar
        m, P, _ = _kalman_update(m_p[t], P_p[t], ys[t], C, R)
        m_f[t], P_f[t] = m, P

    m_s = m_f.copy()
    P_s = P_f.copy()
    cross = np.zeros((max(T - 1, 0), d, d))
    for t in range(T - 2, -1, -1):
        G = P_f[t] @ Fbar[t + 1].T @ np.linalg.pinv(P_p[t + 1], hermitian=True)
        m_s[t] = m_f[t] + G @ (m_s[t + 1] - m_p[t + 1])
        P_s[t] = P_f[t] + G @ (P_s[t + 1] - P_p[t + 1]) @ G.T
        P_s[t] = 0.5 * (P_s[t] + P_s[t].T)
        cross[t] = P_s[t + 1] @ G.T + np.outer(m_s[t + 1], m_s[t])
    return SmoothedStats(gamma, m_s, P_s, cross)


# ---------------------------------------------------------------------------
# EM
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FitResult:
    model: RsldsModel
    trace: tuple[float, ...]


def _m_step(model: RsldsModel, dataset: Sequence[np.ndarray], stats: Sequence[SmoothedStats], learn_emission: bool) -> RsldsModel:
    d, K, dt = model.dim, model.K, model.dt
    disc = model.discretised()
    Sxx = np.zeros((K, d + 1, d + 1))
    Syx = np.zeros((K, d, d + 1))
    Syy = np.zeros((K, d, d))
    N = np.zeros(K)
    for st in stats:
        T = st.mean.shape[0]
        for t in range(1, T):
            w = st.gamma[t]
            Exx = st.cov[t - 1] + np.outer(st.mean[t - 1], st.mean[t - 1])
            xt = np.zeros((d + 1, d + 1))
            xt[:d, :d] = Exx
            xt[:d, d] = st.mean[t - 1]
            xt[d, :d] = st.mean[t - 1]
            xt[d, d] = 1.0
            yx = np.zeros((d, d + 1))
            yx[:, :d] = st.cross[t - 1]
            yx[:, d] = st.mean[t]
            yy = st.cov[t] + np.outer(st.mean[t], st.mean[t])
            Sxx += w[:, None, None] * xt[None]
            Syx += w[:, None, None] * yx[None]
            Syy += w[:, None, None] * yy[None]
            N += w

    regimes = []
    for k in range(K):
        old = np.hstack([disc[k].F, disc[k].u[:, None]])
        if N[k] < (d + 1):
            regimes.append(model.regimes[k])
            continue
        lam = RIDGE * max(N[k], 1.0)
        theta = np.linalg.solve((Sxx[k] + lam * np.eye(d + 1)).T, (Syx[k] + lam * old).T).T
        Qd = (Syy[k] - theta @ Syx[k].T - Syx[k] @ theta.T + theta @ Sxx[k] @ theta.T) / N[k]
        Qd = _floor_psd(Qd, Q_FLOOR)
        regimes.append(regime_from_discrete(theta[:, :d], theta[:, d], Qd, dt))

    C = np.asarray(model.emission.C)
    if learn_emission:
        Sxx_all = sum(np.einsum("tab->ab", st.cov) + st.mean.T @ st.mean for st in stats)
        Syx_all = sum(np.asarray(y).T @ st.mean for y, st in zip(dataset, stats))
        C = np.linalg.solve((Sxx_all + RIDGE * np.eye(d)).T, Syx_all.T).T
    p = C.shape[0]
    Rsum = np.zeros((p, p))
    count = 0
    for y, st in zip(dataset, stats):
        y = np.asarray(y, dtype=float)
        for t in range(y.shape[0]):
            Exx = st.cov[t] + np.outer(st.mean[t], st.mean[t])
            Rsum += (
                np.outer(y[t], y[t])
                - C @ np.outer(st.mean[t], y[t])
                - np.outer(y[t], st.mean[t]) @ C.T
                + C @ Exx @ C.T
            )
            count += 1
    R = _floor_psd(Rsum / max(count, 1), Q_FLOOR)
    return replace(model, regimes=tuple(regimes), emission=EmissionModel(C, R))


def _interpolate(old: RsldsModel, new: RsldsModel, alpha: float) -> RsldsModel:
    regs = []
    for ro, rn in zip(old.regimes, new.regimes):
        regs.append(
            RegimeParams(
                ro.drift_A + alpha * (rn.drift_A - ro.drift_A),
                ro.bias_b + alpha * (rn.bias_b - ro.bias_b),
                ro.volatility_Q + alpha * (rn.volatility_Q - ro.volatility_Q),
            )
        )
    em = EmissionModel(
        old.emission.C + alpha * (new.emission.C - old.emission.C),
        old.emission.R + alpha * (new.emission.R - old.emission.R),
    )
    return replace(old, regimes=tuple(regs), emission=em)


def _safe_objective(model: RsldsModel, dataset, actions) -> float:
    try:
        return total_log_evidence(model, dataset, actions)
    except (NonFinite, DegenerateCovariance, np.linalg.LinAlgError):
        return -np.inf


def fit_em(
    init: RsldsModel,
    dataset: Sequence[np.ndarray],
    iters: int = 5,
    actions=None,
    learn_rule: bool = True,
    learn_emission: bool = False,
    rule_steps: int = 1,
    progress: Optional[Callable[[str], None]] = None,
) -> FitResult:
    """
    EM aproximado. Cada iteración:
        1. E: filtro GPB2 + suavizado por trayectoria.
        2. M: mínimos cuadrados ponderados por régimen (F, u, Q_d) y R.
        3. Regla: ascenso de gradiente sobre la log-evidencia filtrada.
    Un paso solo se acepta si no reduce el objetivo (se prueban
    interpolaciones hacia los parámetros previos), así la traza es
    no decreciente.
    """
    if not dataset:
        raise ShapeMismatch("fit_em necesita al menos una trayectoria")
    data = [_as_obs(init, y) for y in dataset]
    model = init
    current = total_log_evidence(model, data, actions)
    trace = [current]
    for it in range(iters):
        stats = []
        for n, y in enumerate(data):
            acts = None if actions is None else actions[n]
            stats.append(smooth(model, y, filter_trajectory(model, y, acts)))
        proposal = _m_step(model, data, stats, learn_emission)

        accepted = False
        for alpha in (1.0, 0.5, 0.25, 0.125):
            cand = proposal if alpha == 1.0 else _interpolate(model, proposal, alpha)
            value = _safe_objective(cand, data, actions)
            if value >= current:
                model, current, accepted = cand, value, True
                break

        if learn_rule and model.K > 1:
            for _ in range(rule_steps):
                model, current = _rule_ascent(model, data, actions, current)

        if not np.isfinite(current):
            raise NonFinite(f"Objetivo no finito en la iteración {it + 1}")
        trace.append(float(current))
        if progress:
            progress(f"  [EM] iteración {it + 1}/{iters}: log-evidencia={current:.4f}" + ("" if accepted else " (paso M rechazado)"))
    return FitResult(model, tuple(trace))


def _rule_ascent(model: RsldsModel, data, actions, current: float) -> tuple[RsldsModel, float]:
    g = log_evidence_gradient(model, data, actions)
    norm = math.sqrt(sum(float(np.sum(v * v)) for v in g.values()))
    if not np.isfinite(norm) or norm == 0.0:
        return model, current
    params = _rule_params(model.rule)
    for k in range(12):
        step = 0.5 ** k / norm
        cand_params = {key: params[key] + step * g[key] for key in params}
        try:
            cand = _with_rule(model, cand_params)
        except NonFinite:
            continue
        value = _safe_objective(cand, data, actions)
        if value > current:
            return cand, value
    return model, current


def predictive_mse(model: RsldsModel, dataset: Sequence[np.ndarray], actions=None) -> float:
    """Error cuadrático medio de la predicción de y_{t+1} a un paso."""
    errs = []
    for n, y in enumerate(dataset):
        ys = _as_obs(model, y)
        res = filter_trajectory(model, ys, None if actions is None else actions[n])
        if ys.shape[0] > 1:
            errs.append((ys[1:] - res.predicted_obs[1:]) ** 2)
    if not errs:
        return float("nan")
    return float(np.mean(np.concatenate(errs, axis=0)))


# ---------------------------------------------------------------------------
# Coordenadas generalizadas
# ---------------------------------------------------------------------------

def embed_generalised(model: RsldsModel, cfg: GeneralisedConfig) -> RsldsModel:
    """
    Estado [x, x', ..., x^(n)] de dimensión d·(n+1). El orden k deriva al
    orden k+1; el orden más alto sigue la deriva original

        x^(n)' = A x^(n) + b + ξ

    con ξ de intensidad Q / s^(2n). La suavidad s solo escala el ruido.
    La emisión lee el orden 0 y W se extiende con ceros.
    """
    n = int(cfg.order_n)
    if n > MAX_GENERALISED_ORDER:
        raise DepthExceeded(f"order_n={n} supera la cota {MAX_GENERALISED_ORDER}")
    if n == 0:
        return model
    d = model.dim
    D = d * (n + 1)
    s = float(cfg.smoothness)
    I = np.eye(d)

    def block(k: int) -> slice:
        return slice(k * d, (k + 1) * d)

    regimes = []
    for r in model.regimes:
        A = np.zeros((D, D))
        for k in range(n):
            A[block(k), block(k + 1)] = I
        A[block(n), block(n)] = r.drift_A
        b = np.zeros(D)
        b[block(n)] = r.bias_b
        Q = np.zeros((D, D))
        Q[block(n), block(n)] = r.volatility_Q / s ** (2 * n)
        regimes.append(RegimeParams(A, b, Q))

    W = np.hstack([model.rule.recurrent_W, np.zeros((model.K, d * n))])
    rule = RecurrentRule(model.rule.markov_logits, W, model.rule.recurrent_r, model.rule.action_logits)
    C = np.hstack([model.emission.C, np.zeros((model.obs_dim, d * n))])
    m0 = np.concatenate([model.initial_state.mean, np.zeros(d * n)])
    P0 = np.zeros((D, D))
    for k in range(n + 1):
        P0[block(k), block(k)] = model.initial_state.covariance
    return RsldsModel(
        tuple(regimes),
        rule,
        EmissionModel(C, model.emission.R),
        model.dt,
        model.initial_regime,
        GaussianBelief(m0, P0),
    )


# ---------------------------------------------------------------------------
# Inicialización para ajuste
# ---------------------------------------------------------------------------

def default_model(
    obs_dim: int,
    dt: float,
    order_n: int = 0,
    smoothness: float = 1.0,
    process_var: float = 0.01,
    obs_var: float = 1e-4,
    initial_mean: Optional[np.ndarray] = None,
    initial_var: float = 1.0,
) -> RsldsModel:
    """
    Modelo K = 1 de partida: latente base de dimensión p con C = I,
    deriva nula y ruido isótropo; opcionalmente embebido en coordenadas
    generalizadas de orden n.
    """
    p = int(obs_dim)
    m0 = np.zeros(p) if initial_mean is None else np.asarray(initial_mean, dtype=float)
    base = RsldsModel(
        (RegimeParams(np.zeros((p, p)), np.zeros(p), process_var * np.eye(p)),),
        RecurrentRule(np.zeros((1, 1)), np.zeros((1, p)), np.zeros(1)),
        EmissionModel(np.eye(p), obs_var * np.eye(p)),
        dt,
        Categorical(np.ones(1)),
        GaussianBelief(m0, initial_var * np.eye(p)),
    )
    return embed_generalised(base, GeneralisedConfig(order_n, smoothness))


def _fit_rule_logistic(labels_prev, labels, feats, K: int, l2: float = 1e-2) -> RecurrentRule:
    """Regresión logística multinomial: z_t ~ softmax(markov[z_{t-1}] + W x_{t-1} + r)."""
    d = feats.shape[1]
    onehot = np.eye(K)[labels_prev]
    target = np.eye(K)[labels]

    def unpack(theta):
        P = anp.reshape(theta[: K * K], (K, K))
        W = anp.reshape(theta[K * K: K * K + K * d], (K, d))
        r = theta[K * K + K * d:]
        return P, W, r

    def loss(theta):
        P, W, r = unpack(theta)
        logits = anp.dot(onehot, P) + anp.dot(feats, anp.transpose(W)) + r[None, :]
        logp = logits - alogsumexp(logits, axis=1, keepdims=True)
        return -anp.sum(target * logp) / labels.shape[0] + l2 * anp.sum(theta ** 2)

    theta0 = np.zeros(K * K + K * d + K)
    res = minimize(loss, theta0, jac=grad(loss), method="L-BFGS-B")
    P, W, r = unpack(np.asarray(res.x))
    return RecurrentRule(np.asarray(P), np.asarray(W), np.asarray(r))


def initialise_switching(base: RsldsModel, dataset: Sequence[np.ndarray], K: int, seed: int) -> RsldsModel:
    """
    Parte de un modelo K = 1 (normalmente ya ajustado): estima los estados
    latentes con el suavizador, agrupa por k-means los residuos de un paso,
    ajusta (F, u, Q_d) por grupo y la regla por regresión logística sobre
    el estado previo. El grupo de residuo medio más pequeño queda como
    régimen 0.
    """
    if K == 1:
        return base
    if base.K != 1:
        raise ShapeMismatch("initialise_switching parte de un modelo con K = 1")
    d, dt = base.dim, base.dt
    reg = base.discretised()[0]
    xs_prev, xs_next = [], []
    for y in dataset:
        st = smooth(base, y)
        xs_prev.append(st.mean[:-1])
        xs_next.append(st.mean[1:])
    X0 = np.concatenate(xs_prev)
    X1 = np.concatenate(xs_next)
    resid = X1 - (X0 @ reg.F.T + reg.u)
    scale = resid.std(axis=0)
    scale[scale == 0] = 1.0
    feats = resid / scale

    rng = np.random.default_rng(seed)
    _, labels = kmeans2(feats, K, minit="++", seed=rng)
    norms = np.array([np.linalg.norm(feats[labels == k], axis=1).mean() if np.any(labels == k) else np.inf for k in range(K)])
    order = np.argsort(norms, kind="stable")
    relabel = np.empty(K, dtype=int)
    relabel[order] = np.arange(K)
    labels = relabel[labels]

    regimes = []
    aug = np.hstack([X0, np.ones((X0.shape[0], 1))])
    old = np.hstack([reg.F, reg.u[:, None]])
    for k in range(K):
        mask = labels == k
        if mask.sum() < d + 2:
            regimes.append(base.regimes[0])
            continue
        Xa, Y = aug[mask], X1[mask]
        lam = RIDGE * max(mask.sum(), 1)
        theta = np.linalg.solve(Xa.T @ Xa + lam * np.eye(d + 1), Xa.T @ Y + lam * old.T).T
        res = Y - Xa @ theta.T
        Qd = _floor_psd(0.5 * (res.T @ res / mask.sum() + reg.Q_d), Q_FLOOR)
        regimes.append(regime_from_discrete(theta[:, :d], theta[:, d], Qd, dt))

    # etiqueta previa de cada transición dentro de su trayectoria
    labels_prev = np.zeros_like(labels)
    start = 0
    for xp in xs_prev:
        n = xp.shape[0]
        seg = labels[start:start + n]
        labels_prev[start:start + n] = np.concatenate([[0], seg[:-1]])
        start += n
    rule = _fit_rule_logistic(labels_prev, labels, X0, K)
    pi0 = np.full(K, 1.0 / K)
    return RsldsModel(tuple(regimes), rule, base.emission, dt, Categorical(pi0), base.initial_state)
