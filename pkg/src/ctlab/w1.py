"""Wasserstein-1 reference values.

In 1-D the distance is the L1 norm of the CDF difference.  In any dimension
it is the optimum of the transport linear program between point masses,
solved exactly with POT's network simplex on integer costs.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .grid import Grid
from .measures import DensityPair

__all__ = [
    "DiscreteMeasurePair",
    "W1Result",
    "w1_cdf_1d",
    "w1_lp",
    "w1_grid",
    "coarsen",
    "discretize_pair",
    "MAX_SUPPORT_SIDE",
]

# POT probes optional GPU/autodiff backends on import; none are needed here
for _backend in ("PYTORCH", "TENSORFLOW", "JAX", "CUPY"):
    os.environ.setdefault(f"POT_BACKEND_DISABLE_{_backend}", "1")

import ot  # noqa: E402

MAX_SUPPORT_SIDE = 64
_COST_RESOLUTION = 1e-12


@dataclass
class DiscreteMeasurePair:
    """Two weighted point clouds with unit total mass each."""

    x: np.ndarray
    a: np.ndarray
    y: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        self.y = np.atleast_2d(np.asarray(self.y, dtype=float))
        self.a = np.asarray(self.a, dtype=float).ravel()
        self.b = np.asarray(self.b, dtype=float).ravel()
        if self.x.shape[0] != self.a.size or self.y.shape[0] != self.b.size:
            raise ValueError("support and weight sizes differ")
        if self.x.shape[1] != self.y.shape[1]:
            raise ValueError("supports live in different dimensions")
        if np.any(self.a < 0) or np.any(self.b < 0):
            raise ValueError("weights must be nonnegative")
        if abs(self.a.sum() - self.b.sum()) > 1e-12:
            raise ValueError(f"mass mismatch: {self.a.sum()!r} vs {self.b.sum()!r}")

    def swapped(self) -> "DiscreteMeasurePair":
        return DiscreteMeasurePair(self.y, self.b, self.x, self.a)


@dataclass
class W1Result:
    w1: float
    method: str
    support_size: int
    coarsen_factor: int

    def to_dict(self) -> dict:
        return {"w1": self.w1, "method": self.method, "support_size": self.support_size,
                "coarsen_factor": self.coarsen_factor}


def w1_cdf_1d(pair: DensityPair) -> float:
    """Integral of |F - G| with F, G sampled at the cell faces."""
    grid = pair.grid
    if grid.dim != 1:
        raise ValueError(f"w1_cdf_1d needs d = 1, got d = {grid.dim}")
    diff = np.cumsum(pair.rhs) * grid.h
    return float(np.sum(np.abs(diff[:-1])) * grid.h)


def w1_lp(pair: DiscreteMeasurePair, max_support: int = 4096) -> float:
    """Exact transport optimum for the cost |x - y|.

    Costs are rounded to integer multiples of 1e-12 for the network simplex,
    so the optimal plan is found on an exactly representable problem; the
    returned value re-evaluates that plan with the unrounded costs.
    """
    keep_a = pair.a > 0
    keep_b = pair.b > 0
    x, a = pair.x[keep_a], pair.a[keep_a]
    y, b = pair.y[keep_b], pair.b[keep_b]
    if max(a.size, b.size) > max_support:
        raise ValueError(f"support of size {max(a.size, b.size)} exceeds {max_support}")
    if a.size == 0 or b.size == 0:
        raise ValueError("empty measure")
    # direct differences; the expanded |x|^2 + |y|^2 - 2xy form loses ~1e-8 to cancellation
    cost = cdist(x, y)
    icost = np.rint(cost / _COST_RESOLUTION)
    # emd needs marginals with identical float sums
    a = a / a.sum()
    b = b / b.sum()
    plan, log = ot.emd(a, b, icost, numItermax=10_000_000, log=True)
    if log["warning"] is not None:
        raise RuntimeError(f"network simplex did not finish cleanly: {log['warning']}")
    scale = pair.a.sum()
    return float(np.sum(plan * cost) * scale)


def coarsen(grid: Grid, density: np.ndarray, factor: int) -> np.ndarray:
    """Block-average a density by ``factor`` along every axis."""
    if grid.n % factor:
        raise ValueError(f"factor {factor} does not divide n = {grid.n}")
    m = grid.n // factor
    shape = []
    for _ in range(grid.dim):
        shape += [m, factor]
    blocks = density.reshape(shape)
    return blocks.mean(axis=tuple(range(1, 2 * grid.dim, 2)))


def discretize_pair(pair: DensityPair, factor: int = 1) -> DiscreteMeasurePair:
    """Point masses at (coarse) cell centres carrying the cell masses."""
    grid = pair.grid
    coarse = Grid(grid.dim, grid.n // factor)
    pts = coarse.centers().reshape(grid.dim, -1).T
    a = coarsen(grid, pair.f, factor).ravel() * coarse.cell_volume
    b = coarsen(grid, pair.g, factor).ravel() * coarse.cell_volume
    b = b * (a.sum() / b.sum())
    return DiscreteMeasurePair(pts, a, pts, b)


def _coarsen_factor(n: int, max_side: int) -> int:
    factor = 1
    while n // factor > max_side or n % factor:
        factor += 1
        if factor > n:
            raise ValueError(f"no divisor of n = {n} brings the side to <= {max_side}")
    return factor


def w1_grid(pair: DensityPair, max_side: int = MAX_SUPPORT_SIDE) -> W1Result:
    """W1 of a grid pair by the exact method for its dimension.

    1-D uses the CDF formula.  2-D block-averages to at most ``max_side``
    cells per side and solves the transport program on the cell centres.
    """
    grid = pair.grid
    if grid.dim == 1:
        return W1Result(w1_cdf_1d(pair), "cdf_1d", grid.n, 1)
    factor = _coarsen_factor(grid.n, max_side)
    discrete = discretize_pair(pair, factor)
    value = w1_lp(discrete)
    return W1Result(value, "lp", int(discrete.a.size), factor)

