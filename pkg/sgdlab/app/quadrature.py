# sgdlab/app/quadrature.py
from functools import lru_cache
from typing import Callable

import numpy as np


@lru_cache(maxsize=None)
def gauss_hermite(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Probabilists' Gauss-Hermite rule: E[g(Z)] ~ sum(w * g(knots)), Z ~ N(0, 1)."""
    knots, weights = np.polynomial.hermite.hermgauss(n)
    knots = knots * np.sqrt(2.0)
    weights = weights / np.sqrt(np.pi)
    knots.setflags(write=False)
    weights.setflags(write=False)
    return knots, weights


@lru_cache(maxsize=None)
def _legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    return np.polynomial.legendre.leggauss(n)


def gauss_legendre(a: float, b: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre knots and weights mapped onto [a, b]."""
    knots, weights = _legendre(n)
    return 0.5 * (b - a) * knots + 0.5 * (b + a), 0.5 * (b - a) * weights


def composite_gauss_legendre(
    a: float, b: float, panels: int = 64, order: int = 5
) -> tuple[np.ndarray, np.ndarray]:
    """Composite rule with `panels` equal panels of `order` nodes each.

    Nodes are returned in increasing order.
    """
    if panels < 1 or order < 1:
        raise ValueError("panels and order must be positive")
    edges = np.linspace(a, b, panels + 1)
    knots, weights = _legendre(order)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    nodes = (mid[:, None] + half[:, None] * knots[None, :]).ravel()
    wts = (half[:, None] * weights[None, :]).ravel()
    return nodes, wts


def gaussian_expectation(
    g: Callable[[np.ndarray], np.ndarray], mean, variance, n: int = 64
) -> np.ndarray:
    """E[g(mean + sqrt(variance) Z)] by n-node Gauss-Hermite.

    `mean` and `variance` broadcast together; zero variance returns g(mean).
    """
    knots, weights = gauss_hermite(n)
    mean = np.asarray(mean, dtype=float)
    sd = np.sqrt(np.maximum(np.asarray(variance, dtype=float), 0.0))
    points = mean[..., None] + sd[..., None] * knots
    return np.sum(weights * g(points), axis=-1)
