#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
pomdp_discreto.py
-----------------
Una capa POMDP discreta con profundidad temporal, factorial y generalizada.

Contenido:
    - DiscreteLayerSpec / FactorInfo : descripción estructural de la capa.
    - apply_generalised_structure()  : expande los factores marcados con
      g órdenes auxiliares (velocidad, aceleración, ...).
    - DiscreteLayerModel             : tensores A, B, C, D.
    - DirichletModel                 : conteos Dirichlet sobre A, B, D.
    - validate()                     : diagnóstico de invariantes (no lanza).
    - sample_trajectory()            : muestreo ancestral con semilla.
    - Constructores auxiliares (anillos, cinemática, modelos aleatorios).
    - save_model() / load_model()    : serialización JSON (format_version 1).

Formas de los tensores (n_f = cardinalidad del factor expandido f):
    A[m] : (n_o_m, *tamaños de los factores observados)
    B[f] : (n_f, n_f, n_mod_f)   índice 0 = estado siguiente,
                                 índice 1 = estado previo,
                                 índice 2 = modulador (acción, orden k+1 o 1 si no hay)
    C[m] : (n_o_m, T)            log-preferencias por tiempo
    D[f] : (n_f,)
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from creencias import PROB_TOL, DirichletCounts
from errores import DepthExceeded, InvalidAction, LengthMismatch, ShapeMismatch

MAX_GENERALISED_DEPTH = 3
FORMAT_VERSION = 1

MOD_NONE = "none"
MOD_FACTOR = "factor"
MOD_ACTION = "action"


# ---------------------------------------------------------------------------
# Especificación y factores expandidos
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DiscreteLayerSpec:
    """
    Estructura de una capa discreta.

    factor_sizes      : cardinalidades de los factores base (>= 2).
    modality_sizes    : cardinalidades de las modalidades (>= 1).
    horizon           : T, número de pasos de tiempo (>= 1).
    generalised_depth : g, órdenes auxiliares por factor marcado.
    controllable      : por factor base; el orden más alto es la acción.
    control_sizes     : nº de acciones por factor base (1 si no controlable;
                        por defecto el tamaño del factor controlado).
    generalised       : por factor base, si recibe la cadena generalizada
                        (por defecto todos cuando g > 0).
    generalised_sizes : cardinalidad de cada orden auxiliar 1..g (defecto 3).
    aux_observed      : si los órdenes auxiliares también emiten resultados.
    """

    factor_sizes: tuple[int, ...]
    modality_sizes: tuple[int, ...]
    horizon: int
    generalised_depth: int = 0
    controllable: tuple[bool, ...] = ()
    control_sizes: tuple[int, ...] = ()
    generalised: tuple[bool, ...] = ()
    generalised_sizes: tuple[int, ...] = ()
    aux_observed: bool = False
    factor_names: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        fs = tuple(int(n) for n in self.factor_sizes)
        ms = tuple(int(n) for n in self.modality_sizes)
        if not fs:
            raise ShapeMismatch("La capa necesita al menos un factor")
        if any(n < 2 for n in fs):
            raise ShapeMismatch(f"Cardinalidad de factor < 2: {fs}")
        if any(n < 1 for n in ms):
            raise ShapeMismatch(f"Cardinalidad de modalidad < 1: {ms}")
        if int(self.horizon) < 1:
            raise ShapeMismatch(f"horizon debe ser >= 1, recibido {self.horizon}")
        if int(self.generalised_depth) < 0:
            raise DepthExceeded(f"generalised_depth negativo: {self.generalised_depth}")
        g = int(self.generalised_depth)

        ctrl = tuple(bool(c) for c in self.controllable) or (False,) * len(fs)
        if len(ctrl) != len(fs):
            raise ShapeMismatch("controllable debe tener un flag por factor base")
        gen = tuple(bool(c) for c in self.generalised) or ((g > 0,) * len(fs))
        if len(gen) != len(fs):
            raise ShapeMismatch("generalised debe tener un flag por factor base")
        gsz = tuple(int(n) for n in self.generalised_sizes) or (3,) * g
        if len(gsz) != g or any(n < 2 for n in gsz):
            raise ShapeMismatch(f"generalised_sizes necesita {g} cardinalidades >= 2")

        if self.control_sizes:
            csz = tuple(int(n) for n in self.control_sizes)
        else:
            csz = tuple(
                (gsz[-1] if (gen[i] and g > 0) else fs[i]) if ctrl[i] else 1
                for i in range(len(fs))
            )
        if len(csz) != len(fs) or any(n < 1 for n in csz):
            raise ShapeMismatch("control_sizes debe tener un entero >= 1 por factor base")
        if any(csz[i] != 1 for i in range(len(fs)) if not ctrl[i]):
            raise ShapeMismatch("Un factor no controlable debe tener control_size 1")

        names = tuple(self.factor_names) or tuple(f"f{i}" for i in range(len(fs)))
        if len(names) != len(fs):
            raise ShapeMismatch("factor_names debe tener un nombre por factor base")

        object.__setattr__(self, "factor_sizes", fs)
        object.__setattr__(self, "modality_sizes", ms)
        object.__setattr__(self, "horizon", int(self.horizon))
        object.__setattr__(self, "generalised_depth", g)
        object.__setattr__(self, "controllable", ctrl)
        object.__setattr__(self, "generalised", gen)
        object.__setattr__(self, "generalised_sizes", gsz)
        object.__setattr__(self, "control_sizes", csz)
        object.__setattr__(self, "factor_names", names)

    @property
    def n_base(self) -> int:
        return len(self.factor_sizes)

    @property
    def n_modalities(self) -> int:
        return len(self.modality_sizes)

    def to_dict(self) -> dict:
        return {
            "factor_sizes": list(self.factor_sizes),
            "modality_sizes": list(self.modality_sizes),
            "horizon": self.horizon,
            "generalised_depth": self.generalised_depth,
            "controllable": list(self.controllable),
            "control_sizes": list(self.control_sizes),
            "generalised": list(self.generalised),
            "generalised_sizes": list(self.generalised_sizes),
            "aux_observed": self.aux_observed,
            "factor_names": list(self.factor_names),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DiscreteLayerSpec":
        return cls(
            factor_sizes=tuple(d["factor_sizes"]),
            modality_sizes=tuple(d["modality_sizes"]),
            horizon=int(d["horizon"]),
            generalised_depth=int(d.get("generalised_depth", 0)),
            controllable=tuple(d.get("controllable", ())),
            control_sizes=tuple(d.get("control_sizes", ())),
            generalised=tuple(d.get("generalised", ())),
            generalised_sizes=tuple(d.get("generalised_sizes", ())),
            aux_observed=bool(d.get("aux_observed", False)),
            factor_names=tuple(d.get("factor_names", ())),
        )


@dataclass(frozen=True)
class FactorInfo:
    """Un factor de la capa expandida y qué modula su transición."""

    name: str
    size: int
    base_index: int
    order: int
    modulator: str            # "none" | "factor" | "action"
    modulator_index: int      # factor expandido o factor base (acción); -1 si no hay
    n_mod: int


def apply_generalised_structure(spec: DiscreteLayerSpec) -> tuple[FactorInfo, ...]:
    """
    Expande la especificación: los factores base ocupan los índices
    0..F-1; después, por cada factor base marcado y en orden, sus órdenes
    auxiliares 1..g. El orden k+1 modula la transición del orden k; el
    orden más alto de un factor controlable queda modulado por la acción.
    """
    g = spec.generalised_depth
    if g > MAX_GENERALISED_DEPTH:
        raise DepthExceeded(f"generalised_depth={g} supera la cota {MAX_GENERALISED_DEPTH}")

    n_base = spec.n_base
    # índice expandido de (factor base, orden)
    index: dict[tuple[int, int], int] = {(i, 0): i for i in range(n_base)}
    nxt = n_base
    for i in range(n_base):
        if spec.generalised[i] and g > 0:
            for k in range(1, g + 1):
                index[(i, k)] = nxt
                nxt += 1

    factors: list[Optional[FactorInfo]] = [None] * nxt
    for (i, k), f in index.items():
        size = spec.factor_sizes[i] if k == 0 else spec.generalised_sizes[k - 1]
        top = k == (g if (spec.generalised[i] and g > 0) else 0)
        if not top:
            mod, mod_idx = MOD_FACTOR, index[(i, k + 1)]
            n_mod = spec.generalised_sizes[k]
        elif spec.controllable[i]:
            mod, mod_idx, n_mod = MOD_ACTION, i, spec.control_sizes[i]
        else:
            mod, mod_idx, n_mod = MOD_NONE, -1, 1
        name = spec.factor_names[i] if k == 0 else f"{spec.factor_names[i]}^({k})"
        factors[f] = FactorInfo(name, int(size), i, k, mod, mod_idx, int(n_mod))
    return tuple(factors)  # type: ignore[arg-type]


def observed_factor_indices(spec: DiscreteLayerSpec, factors: Sequence[FactorInfo]) -> tuple[int, ...]:
    if spec.aux_observed:
        return tuple(range(len(factors)))
    return tuple(range(spec.n_base))


# ---------------------------------------------------------------------------
# Modelo
# ---------------------------------------------------------------------------

def _frozen(a) -> np.ndarray:
    out = np.array(a, dtype=float, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class DiscreteLayerModel:
    """Tensores de una capa; las formas se comprueban al construir."""

    spec: DiscreteLayerSpec
    A: tuple[np.ndarray, ...]
    B: tuple[np.ndarray, ...]
    D: tuple[np.ndarray, ...]
    C: tuple[np.ndarray, ...] = ()
    factors: tuple[FactorInfo, ...] = field(init=False)
    observed: tuple[int, ...] = field(init=False)

    def __post_init__(self) -> None:
        factors = apply_generalised_structure(self.spec)
        observed = observed_factor_indices(self.spec, factors)
        obs_shape = tuple(factors[f].size for f in observed)
        T = self.spec.horizon

        A = tuple(_frozen(a) for a in self.A)
        if len(A) != self.spec.n_modalities:
            raise ShapeMismatch(f"Se esperaban {self.spec.n_modalities} tensores A, recibidos {len(A)}")
        for m, a in enumerate(A):
            want = (self.spec.modality_sizes[m],) + obs_shape
            if a.shape != want:
                raise ShapeMismatch(f"A[{m}] tiene forma {a.shape}, se esperaba {want}")

        B = tuple(_frozen(b) for b in self.B)
        if len(B) != len(factors):
            raise ShapeMismatch(f"Se esperaban {len(factors)} tensores B, recibidos {len(B)}")
        for f, b in enumerate(B):
            fi = factors[f]
            if b.ndim == 2 and fi.n_mod == 1:
                b = _frozen(b[:, :, None])
            want = (fi.size, fi.size, fi.n_mod)
            if b.shape != want:
                raise ShapeMismatch(f"B[{f}] ({fi.name}) tiene forma {b.shape}, se esperaba {want}")
        B = tuple(_frozen(b if b.ndim == 3 else b[:, :, None]) for b in B)

        if len(self.D) != len(factors):
            raise ShapeMismatch(f"Se esperaban {len(factors)} vectores D, recibidos {len(self.D)}")
        D = tuple(_frozen(d) for d in self.D)
        for f, d in enumerate(D):
            if d.shape != (factors[f].size,):
                raise ShapeMismatch(f"D[{f}] tiene forma {d.shape}, se esperaba {(factors[f].size,)}")

        if self.C:
            C = []
            for m, c in enumerate(self.C):
                c = np.asarray(c, dtype=float)
                if c.ndim == 1:
                    c = np.repeat(c[:, None], T, axis=1)
                if c.shape != (self.spec.modality_sizes[m], T):
                    raise ShapeMismatch(f"C[{m}] tiene forma {c.shape}, se esperaba {(self.spec.modality_sizes[m], T)}")
                C.append(_frozen(c))
            C = tuple(C)
        else:
            C = tuple(_frozen(np.zeros((n, T))) for n in self.spec.modality_sizes)
        if len(C) != self.spec.n_modalities:
            raise ShapeMismatch("Se necesita una matriz C por modalidad")

        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "factors", factors)
        object.__setattr__(self, "observed", observed)

    @property
    def horizon(self) -> int:
        return self.spec.horizon

    @property
    def n_factors(self) -> int:
        return len(self.factors)

    @property
    def factor_sizes(self) -> tuple[int, ...]:
        return tuple(f.size for f in self.factors)

    def parameter_count(self) -> int:
        """Nº de parámetros libres (entradas menos restricciones de normalización)."""
        total = 0
        for a in self.A:
            total += (a.shape[0] - 1) * int(np.prod(a.shape[1:]))
        for b in self.B:
            total += (b.shape[0] - 1) * b.shape[1] * b.shape[2]
        for d in self.D:
            total += d.shape[0] - 1
        return int(total)

    def with_preferences(self, C: Sequence[np.ndarray]) -> "DiscreteLayerModel":
        return DiscreteLayerModel(self.spec, self.A, self.B, self.D, tuple(C))

    def with_prior(self, factor: int, prior: np.ndarray) -> "DiscreteLayerModel":
        D = list(self.D)
        D[factor] = np.asarray(prior, dtype=float)
        return DiscreteLayerModel(self.spec, self.A, self.B, tuple(D), self.C)


# ---------------------------------------------------------------------------
# Validación (devuelve diagnósticos, nunca lanza)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    tensor: str
    index: tuple
    message: str

    def __str__(self) -> str:
        return f"{self.tensor}{list(self.index)}: {self.message}"


def _check_tensor(name: str, arr: np.ndarray, out: list[Violation]) -> None:
    bad = ~np.isfinite(arr)
    for idx in np.argwhere(bad):
        out.append(Violation(name, tuple(int(i) for i in idx), "entrada no finita"))
    neg = np.isfinite(arr) & (arr < 0)
    for idx in np.argwhere(neg):
        out.append(Violation(name, tuple(int(i) for i in idx), f"entrada negativa {arr[tuple(idx)]:.6g}"))
    sums = np.nansum(np.where(np.isfinite(arr), arr, 0.0), axis=0)
    sums = np.atleast_1d(sums)
    for idx in np.argwhere(np.abs(sums - 1.0) > PROB_TOL):
        idx_t = tuple(int(i) for i in idx)
        col = (":",) + idx_t if arr.ndim > 1 else ()
        out.append(Violation(name, col, f"corte suma {float(sums[tuple(idx)]):.12g} != 1"))


def validate(model: DiscreteLayerModel) -> list[Violation]:
    """Lista vacía = modelo correcto; si no, una violación por problema."""
    out: list[Violation] = []
    try:
        for m, a in enumerate(model.A):
            _check_tensor(f"A[{m}]", a, out)
        for f, b in enumerate(model.B):
            _check_tensor(f"B[{f}]", b, out)
        for f, d in enumerate(model.D):
            _check_tensor(f"D[{f}]", d, out)
        for m, c in enumerate(model.C):
            for idx in np.argwhere(~np.isfinite(c)):
                out.append(Violation(f"C[{m}]", tuple(int(i) for i in idx), "preferencia no finita"))
    except Exception as e:  # diagnóstico, no excepción
        out.append(Violation("model", (), f"no se pudo validar: {e}"))
    return out


# ---------------------------------------------------------------------------
# Acciones
# ---------------------------------------------------------------------------

def as_action_array(spec: DiscreteLayerSpec, actions, length: Optional[int] = None) -> np.ndarray:
    """
    Normaliza una secuencia de acciones a un array int (L, n_base).
    Acepta None (sin factores controlables), una secuencia 1D cuando hay un
    único factor controlable, o un array 2D. Un valor -1 marca acción
    desconocida (se marginaliza de forma uniforme).
    """
    L = spec.horizon - 1 if length is None else length
    ctrl = [i for i in range(spec.n_base) if spec.controllable[i]]
    if actions is None:
        if ctrl and L > 0:
            raise LengthMismatch(f"Se esperaban {L} acciones y no se dio ninguna")
        return np.zeros((L, spec.n_base), dtype=int)
    arr = np.asarray(actions, dtype=int)
    if arr.ndim == 1 and arr.size == 0:
        arr = arr.reshape(0, spec.n_base)
    if arr.ndim == 1:
        if len(ctrl) > 1:
            raise ShapeMismatch("Con varios factores controlables las acciones deben ser 2D")
        full = np.zeros((arr.shape[0], spec.n_base), dtype=int)
        if ctrl:
            full[:, ctrl[0]] = arr
        arr = full
    if arr.ndim != 2 or arr.shape[1] != spec.n_base:
        raise ShapeMismatch(f"Acciones con forma {arr.shape}, se esperaba (L, {spec.n_base})")
    if arr.shape[0] != L:
        raise LengthMismatch(f"Se esperaban {L} acciones, recibidas {arr.shape[0]}")
    for i in range(spec.n_base):
        col = arr[:, i]
        if np.any(col >= spec.control_sizes[i]) or np.any(col < -1):
            raise InvalidAction(f"Acción fuera de rango para el factor {i}: {col.tolist()}")
    return arr


def transition_slice(model: DiscreteLayerModel, f: int, mod_value: int) -> np.ndarray:
    """B[f][:, :, m]; con m = -1 promedia sobre moduladores (acción desconocida)."""
    b = model.B[f]
    if mod_value < 0:
        return b.mean(axis=2)
    return b[:, :, mod_value]


# ---------------------------------------------------------------------------
# Muestreo
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Trajectory:
    states: np.ndarray         # (T, n_factores_expandidos)
    observations: np.ndarray   # (T, n_modalidades)
    actions: np.ndarray        # (T-1, n_base)


def _draw(rng: np.random.Generator, p: np.ndarray) -> int:
    cdf = np.cumsum(p)
    u = rng.random() * cdf[-1]
    return int(min(np.searchsorted(cdf, u, side="right"), p.size - 1))


def sample_trajectory(model: DiscreteLayerModel, actions, seed: int) -> Trajectory:
    """Muestreo ancestral: s_1 ~ D, s_{t+1} ~ B(.|s_t, mod_t), o_t ~ A(.|s_t)."""
    spec = model.spec
    T = spec.horizon
    acts = as_action_array(spec, actions)
    rng = np.random.default_rng(seed)
    nF = model.n_factors

    states = np.zeros((T, nF), dtype=int)
    obs = np.zeros((T, spec.n_modalities), dtype=int)
    for f in range(nF):
        states[0, f] = _draw(rng, model.D[f])
    for t in range(T):
        s_obs = tuple(states[t, f] for f in model.observed)
        for m, a in enumerate(model.A):
            obs[t, m] = _draw(rng, a[(slice(None),) + s_obs])
        if t == T - 1:
            break
        for f, fi in enumerate(model.factors):
            if fi.modulator == MOD_FACTOR:
                mod = states[t, fi.modulator_index]
            elif fi.modulator == MOD_ACTION:
                mod = acts[t, fi.modulator_index]
                if mod < 0:
                    mod = _draw(rng, np.full(fi.n_mod, 1.0 / fi.n_mod))
            else:
                mod = 0
            states[t + 1, f] = _draw(rng, model.B[f][:, states[t, f], mod])
    return Trajectory(states, obs, acts)


# ---------------------------------------------------------------------------
# Dirichlet
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DirichletModel:
    a_counts: tuple[DirichletCounts, ...]
    b_counts: tuple[DirichletCounts, ...]
    d_counts: tuple[DirichletCounts, ...]

    @classmethod
    def from_model(cls, model: DiscreteLayerModel, scale: float = 1.0, floor: float = 0.0) -> "DirichletModel":
        """Conteos = scale · tensor + floor (prior centrado en el modelo)."""
        return cls(
            tuple(DirichletCounts(scale * a + floor) for a in model.A),
            tuple(DirichletCounts(scale * b + floor) for b in model.B),
            tuple(DirichletCounts(scale * d + floor) for d in model.D),
        )

    @classmethod
    def uniform(cls, model: DiscreteLayerModel, concentration: float = 1.0) -> "DirichletModel":
        return cls(
            tuple(DirichletCounts(np.full(a.shape, concentration)) for a in model.A),
            tuple(DirichletCounts(np.full(b.shape, concentration)) for b in model.B),
            tuple(DirichletCounts(np.full(d.shape, concentration)) for d in model.D),
        )

    def replace(self, a=None, b=None, d=None) -> "DirichletModel":
        return DirichletModel(
            self.a_counts if a is None else tuple(a),
            self.b_counts if b is None else tuple(b),
            self.d_counts if d is None else tuple(d),
        )

    def expected_model(self, model: DiscreteLayerModel) -> DiscreteLayerModel:
        """Modelo con A, B, D sustituidos por las medias Dirichlet."""
        return DiscreteLayerModel(
            model.spec,
            tuple(c.mean() for c in self.a_counts),
            tuple(c.mean() for c in self.b_counts),
            tuple(c.mean() for c in self.d_counts),
            model.C,
        )

    def all_counts(self) -> list[tuple[str, DirichletCounts]]:
        out = [(f"A[{m}]", c) for m, c in enumerate(self.a_counts)]
        out += [(f"B[{f}]", c) for f, c in enumerate(self.b_counts)]
        out += [(f"D[{f}]", c) for f, c in enumerate(self.d_counts)]
        return out


# ---------------------------------------------------------------------------
# Constructores
# ---------------------------------------------------------------------------

def ring_shift_transitions(n: int, shifts: Sequence[int]) -> np.ndarray:
    """B[(s + shift) mod n, s, j] = 1 para cada desplazamiento j."""
    B = np.zeros((n, n, len(shifts)))
    for j, k in enumerate(shifts):
        for s in range(n):
            B[(s + k) % n, s, j] = 1.0
    return B


def clipped_shift_transitions(n: int, shifts: Sequence[int]) -> np.ndarray:
    """Como ring_shift_transitions pero saturando en los extremos."""
    B = np.zeros((n, n, len(shifts)))
    for j, k in enumerate(shifts):
        for s in range(n):
            B[min(max(s + k, 0), n - 1), s, j] = 1.0
    return B


def centred_values(n: int) -> list[int]:
    """Valores con signo de un orden generalizado: n=5 -> [-2..2]."""
    half = (n - 1) // 2
    return [i - half for i in range(n)]


def build_ring_kinematics(
    n_position: int,
    order_sizes: Sequence[int],
    horizon: int,
    initial_orders: Optional[Sequence[int]] = None,
    initial_position: Optional[int] = None,
) -> DiscreteLayerModel:
    """
    Cadena cinemática sobre un anillo: posición <- velocidad <- aceleración ...
    El orden k+1 (con signo) desplaza al orden k; la posición vive en un
    anillo y los órdenes superiores saturan. El orden más alto se mantiene.
    Una modalidad observa la posición sin ruido.
    """
    g = len(order_sizes)
    spec = DiscreteLayerSpec(
        factor_sizes=(n_position,),
        modality_sizes=(n_position,),
        horizon=horizon,
        generalised_depth=g,
        generalised=(g > 0,),
        generalised_sizes=tuple(order_sizes),
        factor_names=("position",),
    )
    factors = apply_generalised_structure(spec)
    B = []
    for fi in factors:
        if fi.modulator == MOD_FACTOR:
            shifts = centred_values(factors[fi.modulator_index].size)
            if fi.order == 0:
                B.append(ring_shift_transitions(fi.size, shifts))
            else:
                B.append(clipped_shift_transitions(fi.size, shifts))
        else:
            B.append(np.eye(fi.size)[:, :, None])
    D = []
    for fi in factors:
        if fi.order == 0:
            d = np.full(fi.size, 1.0 / fi.size)
            if initial_position is not None:
                d = np.eye(fi.size)[initial_position]
        else:
            d = np.full(fi.size, 1.0 / fi.size)
            if initial_orders is not None:
                d = np.eye(fi.size)[initial_orders[fi.order - 1]]
        D.append(d)
    A = (np.eye(n_position),)
    return DiscreteLayerModel(spec, A, tuple(B), tuple(D))


def _random_stochastic(rng: np.random.Generator, shape: tuple[int, ...], concentration: float) -> np.ndarray:
    x = rng.gamma(concentration, 1.0, size=shape)
    x = np.maximum(x, 1e-12)
    return x / x.sum(axis=0, keepdims=True)


def random_layer_model(
    spec: DiscreteLayerSpec,
    seed: int,
    concentration: float = 1.0,
    accuracy: Optional[float] = None,
    stickiness: Optional[float] = None,
) -> DiscreteLayerModel:
    """
    Modelo aleatorio para pruebas y búsqueda de estructura.

    accuracy   : si se da, cada modalidad m observa el factor m mod F con
                 esa probabilidad de acierto (resto repartido al azar).
    stickiness : si se da, B = stickiness·I + (1-stickiness)·Dir.
    """
    rng = np.random.default_rng(seed)
    factors = apply_generalised_structure(spec)
    observed = observed_factor_indices(spec, factors)
    obs_shape = tuple(factors[f].size for f in observed)

    A = []
    for m, n_o in enumerate(spec.modality_sizes):
        if accuracy is None or n_o < 2:
            A.append(_random_stochastic(rng, (n_o,) + obs_shape, concentration))
            continue
        target = m % len(observed)
        noise = _random_stochastic(rng, (n_o,) + obs_shape, concentration)
        a = (1.0 - accuracy) * noise
        for idx in np.ndindex(*obs_shape):
            a[(idx[target] % n_o,) + idx] += accuracy
        A.append(a / a.sum(axis=0, keepdims=True))

    B = []
    for fi in factors:
        b = _random_stochastic(rng, (fi.size, fi.size, fi.n_mod), concentration)
        if stickiness is not None:
            b = stickiness * np.eye(fi.size)[:, :, None] + (1.0 - stickiness) * b
        B.append(b)
    D = [_random_stochastic(rng, (fi.size,), concentration) for fi in factors]
    return DiscreteLayerModel(spec, tuple(A), tuple(B), tuple(D))


# ---------------------------------------------------------------------------
# Serialización JSON
# ---------------------------------------------------------------------------

def model_to_dict(model: DiscreteLayerModel) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "kind": "discrete",
        "spec": model.spec.to_dict(),
        "A": [a.tolist() for a in model.A],
        "B": [b.tolist() for b in model.B],
        "D": [d.tolist() for d in model.D],
        "C": [c.tolist() for c in model.C],
    }


def model_from_dict(d: dict) -> DiscreteLayerModel:
    if int(d.get("format_version", -1)) != FORMAT_VERSION:
        raise ShapeMismatch(f"format_version no soportado: {d.get('format_version')!r}")
    spec = DiscreteLayerSpec.from_dict(d["spec"])
    return DiscreteLayerModel(
        spec,
        tuple(np.asarray(a, dtype=float) for a in d["A"]),
        tuple(np.asarray(b, dtype=float) for b in d["B"]),
        tuple(np.asarray(x, dtype=float) for x in d["D"]),
        tuple(np.asarray(c, dtype=float) for c in d.get("C", [])),
    )


def save_model(model: DiscreteLayerModel, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(model_to_dict(model), indent=1), encoding="utf-8")
    return path


def load_model(path: Path) -> DiscreteLayerModel:
    return model_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
