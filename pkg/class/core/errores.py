#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
errores.py
----------
Jerarquía de excepciones de la librería de modelos generativos del mundo.

Todas heredan de WorldModelError, de forma que el lanzador (main.py)
puede distinguir:
    - ConfigError       -> código de salida 2
    - cualquier otra    -> RuntimeFailure, código de salida 1

Las que representan un valor inválido heredan además de ValueError.
"""

from __future__ import annotations


class WorldModelError(Exception):
    """Raíz de todos los errores de la librería."""


# ---------------------------------------------------------------------------
# Creencias (categorical / dirichlet / gaussiana)
# ---------------------------------------------------------------------------

class ZeroMass(WorldModelError, ValueError):
    """Vector sin masa (suma <= 0) o con entradas negativas."""


class SupportMismatch(WorldModelError, ValueError):
    """p_i > 0 donde q_i = 0 en una divergencia KL."""


class DimensionMismatch(WorldModelError, ValueError):
    """Dimensiones incompatibles entre dos creencias."""


class ZeroSlice(WorldModelError, ValueError):
    """Un corte normalizado de conteos Dirichlet suma 0."""


class NonFinite(WorldModelError, ValueError):
    """NaN o infinito donde se exige un valor finito."""


# ---------------------------------------------------------------------------
# Capas discretas / continuas
# ---------------------------------------------------------------------------

class DepthExceeded(WorldModelError, ValueError):
    """Profundidad generalizada fuera de la cota de la clase (> 3)."""


class LengthMismatch(WorldModelError, ValueError):
    """Secuencia de acciones u observaciones de longitud incorrecta."""


class ShapeMismatch(WorldModelError, ValueError):
    """Formas de tensores / datos incompatibles."""


class TooLarge(WorldModelError, ValueError):
    """Espacio conjunto demasiado grande para enumerarlo."""


class HorizonExceeded(WorldModelError, ValueError):
    """La política se sale del horizonte restante del modelo."""


class PolicySpaceTooLarge(WorldModelError, ValueError):
    """Más políticas que el tope de enumeración."""


class DegenerateCovariance(WorldModelError):
    """Covarianza de innovación no invertible ni con jitter."""


class FitDiverged(WorldModelError):
    """El ajuste de un candidato produjo un objetivo no finito."""


# ---------------------------------------------------------------------------
# Jerarquías
# ---------------------------------------------------------------------------

class CardinalityMismatch(WorldModelError, ValueError):
    """La modalidad del padre y el objetivo del hijo no tienen la misma cardinalidad."""


class MissingChildRun(WorldModelError):
    """Falta la ejecución del hijo para algún valor candidato del padre."""


class LayerError(WorldModelError):
    """Error de una capa dentro de una pila, con el índice de la capa."""

    def __init__(self, layer_index: int, cause: BaseException) -> None:
        self.layer_index = layer_index
        self.cause = cause
        super().__init__(f"Capa {layer_index}: {type(cause).__name__}: {cause}")


# ---------------------------------------------------------------------------
# Entornos
# ---------------------------------------------------------------------------

class EpisodeDone(WorldModelError):
    """step() llamado sobre un episodio ya terminado."""


class InvalidAction(WorldModelError, ValueError):
    """Acción fuera del conjunto permitido por el entorno."""


# ---------------------------------------------------------------------------
# Arnés de experimentos
# ---------------------------------------------------------------------------

class ConfigError(WorldModelError, ValueError):
    """Documento de configuración inválido (nombra el campo)."""


class RuntimeFailure(WorldModelError):
    """Fallo durante la ejecución de un experimento."""


class CorruptLog(WorldModelError):
    """Registro ilegible o inconsistente al hacer replay."""

    def __init__(self, message: str, line: int | None = None, record_index: int | None = None) -> None:
        self.line = line
        self.record_index = record_index
        super().__init__(message)
