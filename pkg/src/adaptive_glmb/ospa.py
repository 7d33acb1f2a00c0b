"""Optimal sub-pattern assignment (OSPA) distance between finite point sets."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .assign import solve_lsa


@dataclass(frozen=True)
class OspaParams:
    c: float = 300.0
    p: float = 1.0

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError("cutoff c must be positive")
        if not self.p >= 1:
            raise ValueError("order p must be >= 1")


def _points(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.size == 0:
        return np.zeros((0, X.shape[-1] if X.ndim == 2 else 0))
    return np.atleast_2d(X)


def ospa(X, Y, c: float = 300.0, p: float = 1.0) -> tuple[float, float, float]:
    """OSPA distance and its localization and cardinality components.

    Returns ``(total, localization, cardinality)`` with
    ``total**p == localization**p + cardinality**p``. Two empty sets are at
    distance 0.
    """
    params = OspaParams(c, p)
    X, Y = _points(X), _points(Y)
    m, n = X.shape[0], Y.shape[0]
    if m == 0 and n == 0:
        return 0.0, 0.0, 0.0
    if m == 0 or n == 0:
        return params.c, 0.0, params.c
    if X.shape[1] != Y.shape[1]:
        raise ValueError("point sets must share a dimension")
    if m > n:
        X, Y, m, n = Y, X, n, m
    D = np.minimum(cdist(X, Y), params.c) ** params.p
    rows, cols, _ = solve_lsa(D)
    # correctly rounded sum so that swapping the arguments is exact
    cost = math.fsum(D[rows, cols].tolist())
    loc = (cost / n) ** (1.0 / params.p)
    card = ((params.c**params.p) * (n - m) / n) ** (1.0 / params.p)
    total = ((cost + params.c**params.p * (n - m)) / n) ** (1.0 / params.p)
    return float(total), float(loc), float(card)
