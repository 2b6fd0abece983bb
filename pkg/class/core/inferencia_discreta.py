#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
inferencia_discreta.py
----------------------
Inferencia variacional de estados y aprendizaje Dirichlet en una capa discreta.

    - infer_states()             : campo medio sobre factores y tiempo,
                                   barridos secuenciales hacia delante y
                                   hacia atrás, energía libre por barrido.
    - exact_posterior_oracle()   : marginales exactas sumando la conjunta
                                   sobre todas las secuencias de estados.
    - update_parameters()        : incremento de conteos Dirichlet.
    - variational_free_energy()  : E_q[ln q - ln p(o, s)].
    - dirichlet_complexity()     : Σ KL(posterior || prior) de los conteos.

Observaciones: secuencia temporal (longitud τ <= T); en cada tiempo, una
entrada por modalidad que puede ser:
    - int            : índice del resultado observado
    - None           : modalidad no observada en ese tiempo
    - vector (n_o,)  : verosimilitud sobre resultados (evidencia blanda,
                       la usan las jerarquías para la evidencia ascendente)
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from creencias import Categorical, expected_log_params, kl_dirichlet, log_stable, softmax_array
from errores import LengthMismatch, ShapeMismatch, TooLarge, ZeroMass
from pomdp_discreto import (
    MOD_ACTION,
    MOD_FACTOR,
    DirichletModel,
    DiscreteLayerModel,
    as_action_array,
)

CONVERGENCE_TOL = 1e-6
MAX_SWEEPS = 64
MAX_ORACLE_CONFIGURATIONS = 10**6


# ---------------------------------------------------------------------------
# Tipos de resultado
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class StatePosterior:
    """Marginales q(s_t^f): un array (T, n_f) por factor expandido."""

    marginals: tuple[np.ndarray, ...]
    observed_until: int = 0
    converged: bool = True
    sweeps: int = 0

    @property
    def horizon(self) -> int:
        return int(self.marginals[0].shape[0])

    def marginal(self, factor: int, t: int) -> Categorical:
        return Categorical(self.marginals[factor][t])

    def at(self, t: int) -> list[np.ndarray]:
        return [np.array(m[t]) for m in self.marginals]

    @property
    def current_time(self) -> int:
        """Último tiempo con observación (0 si no hubo ninguna)."""
        return max(self.observed_until - 1, 0)


@dataclass(frozen=True)
class FreeEnergyTrace:
    values: tuple[float, ...]
    no_convergence: bool = False

    @property
    def final(self) -> float:
        return self.values[-1] if self.values else float("nan")

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True, eq=False)
class ExactPosterior:
    marginals: tuple[np.ndarray, ...]
    log_evidence: float


# ---------------------------------------------------------------------------
# Preparación de datos
# ---------------------------------------------------------------------------

Entry = Optional[object]


def prepare_observations(model: DiscreteLayerModel, observations) -> tuple[list[list[Entry]], int]:
    """Normaliza observaciones a una lista de longitud T (None = sin dato)."""
    T = model.horizon
    M = model.spec.n_modalities
    rows: list[list[Entry]] = [[None] * M for _ in range(T)]
    if observations is None:
        return rows, 0
    seq = list(observations) if not isinstance(observations, np.ndarray) else list(observations)
    if len(seq) > T:
        raise LengthMismatch(f"{len(seq)} observaciones para un horizonte T={T}")
    for t, row in enumerate(seq):
        if row is None:
            continue
        if np.isscalar(row) or (isinstance(row, np.ndarray) and row.ndim == 0):
            if M != 1:
                raise ShapeMismatch(f"Observación escalar en t={t} con {M} modalidades")
            row = [row]
        row = list(row)
        if len(row) != M:
            raise ShapeMismatch(f"t={t}: {len(row)} entradas para {M} modalidades")
        for m, entry in enumerate(row):
            n_o = model.spec.modality_sizes[m]
            if entry is None:
                continue
            if np.ndim(entry) == 0:
                o = int(entry)
                if o < 0:
                    continue
                if o >= n_o:
                    raise ShapeMismatch(f"t={t}, modalidad {m}: resultado {o} fuera de rango (n={n_o})")
                rows[t][m] = o
            else:
                vec = np.asarray(entry, dtype=float)
                if vec.shape != (n_o,):
                    raise ShapeMismatch(f"t={t}, modalidad {m}: verosimilitud {vec.shape} != ({n_o},)")
                if np.any(vec < 0) or vec.sum() <= 0:
                    raise ZeroMass(f"t={t}, modalidad {m}: verosimilitud sin masa")
                rows[t][m] = vec
    return rows, len(seq)


def _log_A(model: DiscreteLayerModel, dirichlet: Optional[DirichletModel]) -> list[np.ndarray]:
    if dirichlet is None:
        return [log_stable(a) for a in model.A]
    return [expected_log_params(c) for c in dirichlet.a_counts]


def _log_B(model: DiscreteLayerModel, dirichlet: Optional[DirichletModel]) -> tuple[list[np.ndarray], list[np.ndarray]]:
    if dirichlet is None:
        lnB = [log_stable(b) for b in model.B]
        avg = [log_stable(b.mean(axis=2)) for b in model.B]
    else:
        lnB = [expected_log_params(c) for c in dirichlet.b_counts]
        avg = [log_stable(c.mean().mean(axis=2)) for c in dirichlet.b_counts]
    return lnB, avg


def _log_D(model: DiscreteLayerModel, dirichlet: Optional[DirichletModel]) -> list[np.ndarray]:
    if dirichlet is None:
        return [log_stable(d) for d in model.D]
    return [expected_log_params(c) for c in dirichlet.d_counts]


def log_likelihood_tensors(rows: list[list[Entry]], lnA: list[np.ndarray]) -> list[Optional[np.ndarray]]:
    """Por tiempo, Σ_m ln p(o_m | s_obs) como tensor sobre los factores observados."""
    out: list[Optional[np.ndarray]] = []
    for row in rows:
        total = None
        for m, entry in enumerate(row):
            if entry is None:
                continue
            if isinstance(entry, np.ndarray):
                lam = log_stable(entry).reshape((-1,) + (1,) * (lnA[m].ndim - 1))
                term = logsumexp(lam + lnA[m], axis=0)
            else:
                term = lnA[m][entry]
            total = term if total is None else total + term
        out.append(None if total is None else np.array(total, dtype=float))
    return out


def _contract_except(tensor: np.ndarray, qs: Sequence[np.ndarray], keep: Optional[int]):
    """Contrae cada eje j != keep con qs[j]; de atrás hacia delante."""
    out = tensor
    for j in range(len(qs) - 1, -1, -1):
        if j == keep:
            continue
        out = np.tensordot(out, qs[j], axes=([j], [0]))
    return out


# ---------------------------------------------------------------------------
# Contexto de inferencia (mensajes esperados)
# ---------------------------------------------------------------------------

class _MeanField:
    """Términos de ln p(o, s) en forma de tensores listos para contraer."""

    def __init__(self, model: DiscreteLayerModel, rows, actions, dirichlet) -> None:
        self.model = model
        self.T = model.horizon
        self.factors = model.factors
        self.nF = len(self.factors)
        self.observed = model.observed
        self.obs_pos = {f: j for j, f in enumerate(self.observed)}
        self.acts = as_action_array(model.spec, actions)
        self.lnD = _log_D(model, dirichlet)
        self.lnB, self.lnB_avg = _log_B(model, dirichlet)
        self.LL = log_likelihood_tensors(rows, _log_A(model, dirichlet))
        # factores modulados por cada factor
        self.modulates: list[list[int]] = [[] for _ in range(self.nF)]
        for g, fi in enumerate(self.factors):
            if fi.modulator == MOD_FACTOR:
                self.modulates[fi.modulator_index].append(g)

    def trans(self, f: int, t: int, q: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
        """(L, w) de la transición t -> t+1 del factor f."""
        fi = self.factors[f]
        if fi.modulator == MOD_FACTOR:
            return self.lnB[f], q[fi.modulator_index][t]
        if fi.modulator == MOD_ACTION:
            a = int(self.acts[t, fi.modulator_index])
            if a < 0:
                return self.lnB_avg[f][:, :, None], np.ones(1)
            return self.lnB[f][:, :, a:a + 1], np.ones(1)
        return self.lnB[f], np.ones(1)

    def log_message(self, f: int, t: int, q: list[np.ndarray]) -> np.ndarray:
        msg = np.zeros(self.factors[f].size)
        if t == 0:
            msg = msg + self.lnD[f]
        if t > 0:
            L, w = self.trans(f, t - 1, q)
            msg = msg + np.einsum("abk,b,k->a", L, q[f][t - 1], w)
        if t < self.T - 1:
            L, w = self.trans(f, t, q)
            msg = msg + np.einsum("abk,a,k->b", L, q[f][t + 1], w)
            for g in self.modulates[f]:
                Lg, _ = self.trans(g, t, q)
                msg = msg + np.einsum("abk,a,b->k", Lg, q[g][t + 1], q[g][t])
        if f in self.obs_pos and self.LL[t] is not None:
            qs = [q[h][t] for h in self.observed]
            msg = msg + _contract_except(self.LL[t], qs, self.obs_pos[f])
        return msg

    def free_energy(self, q: list[np.ndarray]) -> float:
        neg_entropy = 0.0
        for f in range(self.nF):
            p = q[f]
            nz = p > 0
            neg_entropy += float(np.sum(p[nz] * np.log(p[nz])))
        energy = 0.0
        for f in range(self.nF):
            energy += float(q[f][0] @ self.lnD[f])
            for t in range(self.T - 1):
                L, w = self.trans(f, t, q)
                energy += float(np.einsum("abk,a,b,k->", L, q[f][t + 1], q[f][t], w))
        for t in range(self.T):
            if self.LL[t] is not None:
                qs = [q[h][t] for h in self.observed]
                energy += float(_contract_except(self.LL[t], qs, None))
        return neg_entropy - energy


# ---------------------------------------------------------------------------
# API
# ---------------------------------------------------------------------------

def infer_states(
    model: DiscreteLayerModel,
    observations,
    actions=None,
    dirichlet: Optional[DirichletModel] = None,
    tol: float = CONVERGENCE_TOL,
    max_sweeps: int = MAX_SWEEPS,
) -> tuple[StatePosterior, FreeEnergyTrace]:
    """
    Iteración de punto fijo de campo medio. Cada barrido actualiza q(s_t^f)
    para t = 0..T-1 y después t = T-1..0; para cuando el cambio máximo de
    una marginal cae por debajo de `tol` o tras `max_sweeps` barridos.
    Con `dirichlet` se usa E[ln θ] en lugar de ln θ.
    """
    rows, tau = prepare_observations(model, observations)
    ctx = _MeanField(model, rows, actions, dirichlet)
    T = ctx.T
    q = [np.full((T, fi.size), 1.0 / fi.size) for fi in ctx.factors]

    values: list[float] = []
    converged = False
    sweeps = 0
    order = list(range(T)) + list(range(T - 1, -1, -1))
    for sweeps in range(1, max_sweeps + 1):
        before = [x.copy() for x in q]
        for t in order:
            for f in range(ctx.nF):
                q[f][t] = softmax_array(ctx.log_message(f, t, q))
        values.append(ctx.free_energy(q))
        change = max(float(np.max(np.abs(q[f] - before[f]))) for f in range(ctx.nF))
        if change < tol:
            converged = True
            break

    if not converged:
        warnings.warn(
            f"infer_states: sin convergencia tras {max_sweeps} barridos",
            RuntimeWarning,
            stacklevel=2,
        )
    posterior = StatePosterior(tuple(q), observed_until=tau, converged=converged, sweeps=sweeps)
    return posterior, FreeEnergyTrace(tuple(values), no_convergence=not converged)


def variational_free_energy(
    model: DiscreteLayerModel,
    posterior: StatePosterior,
    observations,
    actions=None,
    dirichlet: Optional[DirichletModel] = None,
) -> float:
    rows, _ = prepare_observations(model, observations)
    ctx = _MeanField(model, rows, actions, dirichlet)
    if len(posterior.marginals) != ctx.nF:
        raise ShapeMismatch("El posterior no coincide con los factores del modelo")
    return ctx.free_energy([np.asarray(m, dtype=float) for m in posterior.marginals])


def exact_posterior_oracle(
    model: DiscreteLayerModel,
    observations,
    actions=None,
    max_configurations: int = MAX_ORACLE_CONFIGURATIONS,
) -> ExactPosterior:
    """Marginales exactas y ln p(o) sumando la conjunta sobre todas las secuencias."""
    rows, _ = prepare_observations(model, observations)
    T = model.horizon
    sizes = model.factor_sizes
    J = int(np.prod(sizes))
    if J ** T > max_configurations:
        raise TooLarge(f"Espacio conjunto {J}^{T} supera {max_configurations} configuraciones")

    acts = as_action_array(model.spec, actions)
    idx = np.unravel_index(np.arange(J), sizes)
    with np.errstate(divide="ignore"):
        lnA = [np.log(a) for a in model.A]
        lnD = [np.log(d) for d in model.D]
        lnB = [np.log(b) for b in model.B]
        lnB_avg = [np.log(b.mean(axis=2)) for b in model.B]
    LL = log_likelihood_tensors(rows, lnA)

    logp = np.zeros((J,) * T)

    def _on_axes(vec_or_mat: np.ndarray, axes: tuple[int, ...]) -> np.ndarray:
        shape = [1] * T
        for k, ax in enumerate(axes):
            shape[ax] = vec_or_mat.shape[k]
        return vec_or_mat.reshape(shape)

    lnD_joint = sum(lnD[f][idx[f]] for f in range(len(sizes)))
    logp = logp + _on_axes(lnD_joint, (0,))
    for t in range(T):
        if LL[t] is not None:
            ll = LL[t][tuple(idx[f] for f in model.observed)]
            logp = logp + _on_axes(ll, (t,))
    for t in range(T - 1):
        trans = np.zeros((J, J))  # [siguiente, previo]
        for f, fi in enumerate(model.factors):
            nxt, prv = idx[f][:, None], idx[f][None, :]
            if fi.modulator == MOD_FACTOR:
                trans = trans + lnB[f][nxt, prv, idx[fi.modulator_index][None, :]]
            elif fi.modulator == MOD_ACTION and acts[t, fi.modulator_index] < 0:
                trans = trans + lnB_avg[f][nxt, prv]
            elif fi.modulator == MOD_ACTION:
                trans = trans + lnB[f][nxt, prv, int(acts[t, fi.modulator_index])]
            else:
                trans = trans + lnB[f][nxt, prv, 0]
        logp = logp + _on_axes(trans.T, (t, t + 1))

    log_z = float(logsumexp(logp))
    if not np.isfinite(log_z):
        raise ZeroMass("Observaciones imposibles bajo el modelo")
    post = np.exp(logp - log_z)
    marginals = []
    per_time = []
    for t in range(T):
        axes = tuple(a for a in range(T) if a != t)
        per_time.append(post.sum(axis=axes) if axes else post)
    for f, n in enumerate(sizes):
        m = np.zeros((T, n))
        for t in range(T):
            m[t] = np.bincount(idx[f], weights=per_time[t], minlength=n)
        marginals.append(m)
    return ExactPosterior(tuple(marginals), log_z)


def update_parameters(
    dirichlet: DirichletModel,
    posterior: StatePosterior,
    observations,
    actions,
    rate: float,
    model: DiscreteLayerModel,
    tensors: Sequence[str] = ("A", "B", "D"),
) -> DirichletModel:
    """
    Suma rate × estadísticos suficientes a los conteos:
        A: q(s_t obs) ⊗ resultado observado
        B: q(s_{t+1}) ⊗ q(s_t) ⊗ modulador (acción o orden superior)
        D: q(s_1)
    Los conteos nunca decrecen.
    """
    if rate < 0 or not np.isfinite(rate):
        raise ValueError(f"rate debe ser >= 0, recibido {rate}")
    rows, _ = prepare_observations(model, observations)
    acts = as_action_array(model.spec, actions)
    q = posterior.marginals
    if len(q) != model.n_factors or any(q[f].shape != (model.horizon, fi.size) for f, fi in enumerate(model.factors)):
        raise ShapeMismatch("Las marginales del posterior no coinciden con el modelo")
    if len(dirichlet.a_counts) != len(model.A) or len(dirichlet.b_counts) != len(model.B):
        raise ShapeMismatch("Los conteos Dirichlet no coinciden con el modelo")
    for m, c in enumerate(dirichlet.a_counts):
        if c.shape != model.A[m].shape:
            raise ShapeMismatch(f"a_counts[{m}] {c.shape} != A[{m}] {model.A[m].shape}")
    for f, c in enumerate(dirichlet.b_counts):
        if c.shape != model.B[f].shape:
            raise ShapeMismatch(f"b_counts[{f}] {c.shape} != B[{f}] {model.B[f].shape}")

    new_a = list(dirichlet.a_counts)
    new_b = list(dirichlet.b_counts)
    new_d = list(dirichlet.d_counts)

    if "A" in tensors:
        for m in range(len(new_a)):
            delta = np.zeros(new_a[m].shape)
            for t, row in enumerate(rows):
                entry = row[m]
                if entry is None:
                    continue
                joint = q[model.observed[0]][t]
                for h in model.observed[1:]:
                    joint = np.multiply.outer(joint, q[h][t])
                if isinstance(entry, np.ndarray):
                    delta += np.multiply.outer(entry / entry.sum(), joint)
                else:
                    delta[entry] += joint
            new_a[m] = new_a[m].incremented(rate * delta)

    if "B" in tensors:
        for f, fi in enumerate(model.factors):
            delta = np.zeros(new_b[f].shape)
            for t in range(model.horizon - 1):
                pair = np.multiply.outer(q[f][t + 1], q[f][t])
                if fi.modulator == MOD_FACTOR:
                    delta += np.multiply.outer(pair, q[fi.modulator_index][t])
                elif fi.modulator == MOD_ACTION:
                    a = int(acts[t, fi.modulator_index])
                    if a < 0:
                        continue
                    delta[:, :, a] += pair
                else:
                    delta[:, :, 0] += pair
            new_b[f] = new_b[f].incremented(rate * delta)

    if "D" in tensors:
        for f in range(len(new_d)):
            new_d[f] = new_d[f].incremented(rate * q[f][0])

    return DirichletModel(tuple(new_a), tuple(new_b), tuple(new_d))


def dirichlet_complexity(posterior: DirichletModel, prior: DirichletModel) -> float:
    """Σ KL(Dir(posterior) || Dir(prior)) sobre todos los tensores."""
    total = 0.0
    for (_, post), (_, pri) in zip(posterior.all_counts(), prior.all_counts()):
        total += kl_dirichlet(post, pri)
    return total
