#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
creencias.py
------------
Primitivas probabilísticas compartidas por todas las capas:

    - Categorical      : creencia discreta sobre estados / resultados.
    - DirichletCounts  : conteos de concentración de un mapa categórico.
    - GaussianBelief   : media + covarianza de un estado continuo.

Operaciones (todas puras, sin estado compartido):
    normalize, kl_categorical, expected_log_params, softmax, entropy,
    kl_dirichlet, log_stable.

Convenciones globales:
    - Tolerancia de suma de probabilidades: PROB_TOL = 1e-9.
    - Antes de cualquier log se recorta por abajo a LOG_FLOOR = 1e-16.
    - En los conteos Dirichlet el eje 0 es el índice normalizado
      (resultado en A, estado siguiente en B, estado inicial en D).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.special import digamma, gammaln

from errores import (
    DimensionMismatch,
    NonFinite,
    SupportMismatch,
    ZeroMass,
    ZeroSlice,
)

PROB_TOL = 1e-9
LOG_FLOOR = 1e-16

ArrayLike = Union[np.ndarray, list, tuple]


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=float, copy=True)
    out.setflags(write=False)
    return out


def log_stable(x) -> np.ndarray:
    """ln(max(x, 1e-16)) entrada a entrada."""
    return np.log(np.maximum(np.asarray(x, dtype=float), LOG_FLOOR))


# ---------------------------------------------------------------------------
# Tipos
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Categorical:
    """Vector de probabilidades no negativo que suma 1 (±1e-9)."""

    probs: np.ndarray

    def __post_init__(self) -> None:
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or p.size < 1:
            raise DimensionMismatch(f"Categorical necesita un vector 1D no vacío, recibido shape={p.shape}")
        if not np.all(np.isfinite(p)):
            raise NonFinite("Categorical con entradas no finitas")
        if np.any(p < -PROB_TOL):
            raise ZeroMass(f"Categorical con entradas negativas: min={p.min()}")
        if abs(p.sum() - 1.0) > PROB_TOL:
            raise ZeroMass(f"Categorical no normalizada: suma={p.sum()!r}")
        object.__setattr__(self, "probs", _frozen(np.clip(p, 0.0, None)))

    @property
    def n(self) -> int:
        return int(self.probs.size)

    def __len__(self) -> int:
        return self.n

    def __repr__(self) -> str:
        return f"Categorical({np.array2string(self.probs, precision=4)})"


@dataclass(frozen=True, eq=False)
class DirichletCounts:
    """Conteos de concentración; eje 0 = índice normalizado de cada corte."""

    counts: np.ndarray

    def __post_init__(self) -> None:
        c = np.asarray(self.counts, dtype=float)
        if c.ndim < 1:
            raise DimensionMismatch("DirichletCounts necesita al menos una dimensión")
        if not np.all(np.isfinite(c)):
            raise NonFinite("DirichletCounts con entradas no finitas")
        if np.any(c < 0):
            idx = tuple(int(i) for i in np.argwhere(c < 0)[0])
            raise ZeroMass(f"DirichletCounts con conteo negativo en {idx}")
        sums = c.sum(axis=0)
        if np.any(sums <= 0):
            idx = tuple(int(i) for i in np.argwhere(np.atleast_1d(sums) <= 0)[0])
            raise ZeroSlice(f"Corte Dirichlet sin masa en {idx}")
        object.__setattr__(self, "counts", _frozen(c))

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.counts.shape)

    def mean(self) -> np.ndarray:
        """Parámetros esperados (conteos normalizados por corte)."""
        return self.counts / self.counts.sum(axis=0, keepdims=True)

    def incremented(self, delta: np.ndarray) -> "DirichletCounts":
        delta = np.asarray(delta, dtype=float)
        if delta.shape != self.counts.shape:
            raise DimensionMismatch(f"Incremento {delta.shape} no coincide con {self.counts.shape}")
        return DirichletCounts(self.counts + delta)


@dataclass(frozen=True, eq=False)
class GaussianBelief:
    """Media y covarianza simétrica semidefinida positiva (±1e-9)."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self) -> None:
        m = np.atleast_1d(np.asarray(self.mean, dtype=float))
        S = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        if m.ndim != 1 or S.shape != (m.size, m.size):
            raise DimensionMismatch(f"GaussianBelief: media {m.shape} y covarianza {S.shape} incompatibles")
        if not (np.all(np.isfinite(m)) and np.all(np.isfinite(S))):
            raise NonFinite("GaussianBelief con entradas no finitas")
        if np.max(np.abs(S - S.T)) > PROB_TOL:
            raise DimensionMismatch("Covarianza no simétrica")
        if np.linalg.eigvalsh(0.5 * (S + S.T)).min() < -PROB_TOL:
            raise DimensionMismatch("Covarianza no semidefinida positiva")
        object.__setattr__(self, "mean", _frozen(m))
        object.__setattr__(self, "covariance", _frozen(0.5 * (S + S.T)))

    @property
    def dim(self) -> int:
        return int(self.mean.size)


# ---------------------------------------------------------------------------
# Operaciones
# ---------------------------------------------------------------------------

def _probs(p) -> np.ndarray:
    if isinstance(p, Categorical):
        return p.probs
    return np.asarray(p, dtype=float)


def normalize(v: ArrayLike) -> Categorical:
    """Devuelve v / sum(v) como Categorical."""
    arr = np.asarray(v, dtype=float).ravel()
    if arr.size < 1:
        raise ZeroMass("normalize() sobre un vector vacío")
    if not np.all(np.isfinite(arr)):
        raise NonFinite("normalize() con entradas no finitas")
    if np.any(arr < 0):
        raise ZeroMass(f"normalize() con entradas negativas: {arr}")
    total = arr.sum()
    if total <= 0:
        raise ZeroMass("normalize() sobre un vector de masa cero")
    return Categorical(arr / total)


def kl_categorical(p, q) -> float:
    """KL(p||q) con el convenio 0·ln0 = 0."""
    pa, qa = _probs(p), _probs(q)
    if pa.shape != qa.shape:
        raise DimensionMismatch(f"kl_categorical: {pa.shape} vs {qa.shape}")
    support = pa > 0
    if np.any(support & (qa <= 0)):
        idx = int(np.argmax(support & (qa <= 0)))
        raise SupportMismatch(f"kl_categorical: p[{idx}] > 0 pero q[{idx}] = 0")
    ps, qs = pa[support], qa[support]
    return float(max(np.sum(ps * (np.log(ps) - np.log(qs))), 0.0))


def expected_log_params(counts) -> np.ndarray:
    """
    E[ln θ] bajo Dirichlet, por corte del eje 0:
        digamma(c) - digamma(sum(c)).
    Entradas con conteo exactamente 0 se fijan a ln(1e-16).
    """
    c = counts.counts if isinstance(counts, DirichletCounts) else np.asarray(counts, dtype=float)
    sums = c.sum(axis=0, keepdims=True)
    if np.any(sums <= 0):
        raise ZeroSlice("expected_log_params: algún corte suma 0")
    safe = np.where(c > 0, c, 1.0)
    out = digamma(safe) - digamma(sums)
    return np.where(c > 0, out, np.log(LOG_FLOOR))


def softmax_array(logits, precision: float = 1.0) -> np.ndarray:
    """softmax(precision·logits) como ndarray, con resta del máximo."""
    x = np.asarray(logits, dtype=float)
    if not np.all(np.isfinite(x)) or not np.isfinite(precision):
        raise NonFinite("softmax() con logits no finitos")
    if precision <= 0:
        raise NonFinite(f"softmax() necesita precisión > 0, recibido {precision}")
    z = precision * x
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def softmax(logits, precision: float = 1.0) -> Categorical:
    return Categorical(softmax_array(logits, precision))


def entropy(p) -> float:
    """-Σ p ln p con 0·ln0 = 0."""
    pa = _probs(p)
    nz = pa[pa > 0]
    return float(max(-np.sum(nz * np.log(nz)), 0.0))


def kl_dirichlet(alpha, beta) -> float:
    """
    Σ sobre cortes del eje 0 de KL(Dir(alpha) || Dir(beta)).
    Se usa como término de complejidad del puntaje de estructura.
    """
    a = alpha.counts if isinstance(alpha, DirichletCounts) else np.asarray(alpha, dtype=float)
    b = beta.counts if isinstance(beta, DirichletCounts) else np.asarray(beta, dtype=float)
    if a.shape != b.shape:
        raise DimensionMismatch(f"kl_dirichlet: {a.shape} vs {b.shape}")
    a0 = a.sum(axis=0)
    b0 = b.sum(axis=0)
    kl = (
        gammaln(a0) - gammaln(b0)
        - np.sum(gammaln(a) - gammaln(b), axis=0)
        + np.sum((a - b) * (digamma(a) - np.expand_dims(np.asarray(digamma(a0)), 0)), axis=0)
    )
    return float(max(np.sum(kl), 0.0))
