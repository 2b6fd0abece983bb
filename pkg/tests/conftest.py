# -*- coding: utf-8 -*-

"""
conftest.py
-----------
Mismas rutas que main.py (class/core, class/exp, source) y constructores
compartidos por las pruebas.
"""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

ROOT_DIR = Path(__file__).resolve().parent.parent
for p in (ROOT_DIR / "source", ROOT_DIR / "class" / "core", ROOT_DIR / "class" / "exp"):
    if p.is_dir() and str(p) not in sys.path:
        sys.path.insert(0, str(p))

from pomdp_discreto import DiscreteLayerSpec, random_layer_model  # noqa: E402


def random_stochastic(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    x = rng.gamma(1.0, 1.0, size=shape) + 1e-3
    return x / x.sum(axis=0, keepdims=True)


def make_spec(factor_sizes=(2,), modality_sizes=(2,), horizon=3, controllable=(), **kw) -> DiscreteLayerSpec:
    return DiscreteLayerSpec(
        factor_sizes=tuple(factor_sizes),
        modality_sizes=tuple(modality_sizes),
        horizon=horizon,
        controllable=tuple(controllable),
        **kw,
    )


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def small_model():
    """Capa de 2 factores (uno controlable), 2 modalidades, T = 3."""
    spec = make_spec((2, 3), (3, 2), horizon=3, controllable=(True, False))
    return random_layer_model(spec, seed=5)


@pytest.fixture
def project_root() -> Path:
    return ROOT_DIR
