"""
Gauss–Legendre quadrature on uniform mesh cells.

All cell integrals in the package (proximity terms of the discrete cost,
localization integrals, θ-quantities, realized approximation errors) go
through this module so that they share one rule.
"""

from functools import lru_cache
from typing import Callable

import numpy as np

DEFAULT_POINTS = 4


@lru_cache(maxsize=8)
def _rule(points: int) -> tuple[np.ndarray, np.ndarray]:
    nodes, weights = np.polynomial.legendre.leggauss(points)
    return nodes, weights


def cell_nodes(t0: float, t1: float, points: int = DEFAULT_POINTS) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature nodes and weights mapped to [t0, t1]."""
    nodes, weights = _rule(points)
    half = 0.5 * (t1 - t0)
    return t0 + half * (nodes + 1.0), half * weights


def integrate_cell(
    fn: Callable[[float], np.ndarray | float],
    t0: float,
    t1: float,
    points: int = DEFAULT_POINTS,
) -> np.ndarray | float:
    """Integrate fn over [t0, t1]; fn may return scalars or arrays."""
    ts, ws = cell_nodes(t0, t1, points)
    total = None
    for t, w in zip(ts, ws):
        value = w * np.asarray(fn(float(t)), dtype=float)
        total = value if total is None else total + value
    return total if np.ndim(total) else float(total)
