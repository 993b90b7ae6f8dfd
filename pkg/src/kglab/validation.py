"""Small argument-checking helpers shared by the estimator and CLI layers."""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError, DimensionMismatchError
from .graph import KnowledgeGraph


def ensure_positive(value, name: str):
    if value is None or value <= 0:
        raise ConfigurationError(f"{name} must be positive, got {value!r}")
    return value


def ensure_unit_interval(value, name: str, *, closed_right: bool = False):
    upper_ok = value <= 1 if closed_right else value < 1
    if not (0 <= value and upper_ok):
        bracket = "[0, 1]" if closed_right else "[0, 1)"
        raise ConfigurationError(f"{name} must lie in {bracket}, got {value!r}")
    return value


def ensure_choice(value, allowed, name: str):
    if value not in allowed:
        raise ConfigurationError(
            f"{name} must be one of {sorted(allowed)}, got {value!r}")
    return value


def as_float_vector(x, dim: int | None = None, name: str = "x") -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1:
        raise DimensionMismatchError(f"{name} must be 1-d, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise DimensionMismatchError(
            f"{name} must have length {dim}, got {arr.shape[0]}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_kg(obj) -> KnowledgeGraph:
    if not isinstance(obj, KnowledgeGraph):
        raise TypeError(f"expected a KnowledgeGraph, got {type(obj).__name__}")
    if not obj.splits.get("train"):
        raise ConfigurationError("graph has no train triples to fit on")
    return obj


def check_queries(queries):
    """Normalize link-prediction queries to (known id, relation id, direction)."""
    out = []
    for q in queries:
        if len(q) == 2:
            known, relation = q
            direction = "predict_tail"
        elif len(q) == 3:
            known, relation, direction = q
        else:
            raise ValueError(f"query {q!r} must be (known, relation[, direction])")
        if direction not in ("predict_tail", "predict_head"):
            raise ValueError(f"bad direction {direction!r} in query {q!r}")
        out.append((int(known), int(relation), direction))
    return out
