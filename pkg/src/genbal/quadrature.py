"""Deterministic expectation grids over box-uniform covariate laws."""

from __future__ import annotations

import dataclasses

import numpy as np
from scipy.stats import qmc

__all__ = ["QuadratureGrid", "gauss_legendre_box", "sobol_box"]


@dataclasses.dataclass(frozen=True)
class QuadratureGrid:
    """Points and probability weights: E[f(X)] ~= weights @ f(points)."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.points.setflags(write=False)
        self.weights.setflags(write=False)

    @property
    def size(self) -> int:
        return self.points.shape[0]

    def expect(self, values) -> float:
        return float(self.weights @ np.asarray(values, dtype=float))


def gauss_legendre_box(p: int, low: float = -2.0, high: float = 2.0, nodes: int = 16) -> QuadratureGrid:
    """Tensor-product Gauss-Legendre grid for a uniform law on [low, high]^p.

    Weights are normalized to sum to one, so sums against them are
    expectations under the uniform law. Memory grows as nodes**p.
    """
    x, w = np.polynomial.legendre.leggauss(nodes)
    x = low + (high - low) * (x + 1.0) / 2.0
    w = w / w.sum()
    grids = np.meshgrid(*([x] * p), indexing="ij")
    points = np.column_stack([g.ravel() for g in grids])
    weights = np.ones(1)
    for _ in range(p):
        weights = np.multiply.outer(weights, w).ravel()
    return QuadratureGrid(points, weights)


def sobol_box(p: int, low: float = -2.0, high: float = 2.0, m: int = 2 ** 17, seed: int = 0) -> QuadratureGrid:
    """Scrambled Sobol fallback grid with equal weights.

    Useful as an independent cross-check of the Gauss-Legendre grids and
    for integrands too rough for polynomial rules.
    """
    sampler = qmc.Sobol(d=p, scramble=True, seed=seed)
    u = sampler.random(m)
    points = low + (high - low) * u
    weights = np.full(m, 1.0 / m)
    return QuadratureGrid(points, weights)
