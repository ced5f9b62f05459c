"""Source/target densities and the interpolation density sigma.

Every density is a product of one-dimensional factors on [0, 1], one per
axis.  The factors know their pdf, cdf, inverse cdf and breakpoints, which is
all that is needed to build grid samples, exact samplers and the sigma
quadrature.

sigma is the law of ``(1 - t) x + t y`` with ``x ~ f``, ``y ~ g`` and
``t ~ U[0, 1]`` independent.  Grid values of sigma (and of ``f`` and ``g``)
are cell averages: the probability of the cell divided by its volume.  For a
product density the cell probability of ``(1 - t) X + t Y`` factorises over
axes, and per axis it is a one-dimensional integral against a cdf.  For
``t < 1/2`` the integral conditions on ``y``; for ``t >= 1/2`` the roles of
``f`` and ``g`` are exchanged, so no argument is ever scaled by more than 2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import ndtr, ndtri

from .grid import Grid, integrate

__all__ = [
    "Uniform1D",
    "PiecewiseConstant1D",
    "TruncatedGaussian1D",
    "ProductDensity",
    "DensityPair",
    "SigmaField",
    "density_from_descriptor",
    "make_pair",
    "sigma_quadrature",
    "t_rule",
    "sigma_montecarlo",
    "sigma_sup_bound",
    "boundary_distance",
    "comparability_ratio",
    "l1_distance",
    "histogram_standard_error",
]


class Uniform1D:
    polynomial = True

    def __init__(self, lo: float, hi: float):
        if not 0.0 <= lo < hi <= 1.0:
            raise ValueError(f"uniform support [{lo}, {hi}] must lie in [0, 1]")
        self.lo, self.hi = float(lo), float(hi)
        self.breakpoints = np.array([self.lo, self.hi])
        self.sup = 1.0 / (self.hi - self.lo)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where((x >= self.lo) & (x <= self.hi), self.sup, 0.0)

    def cdf(self, x):
        return np.clip((np.asarray(x, dtype=float) - self.lo) * self.sup, 0.0, 1.0)

    def ppf(self, q):
        return self.lo + np.asarray(q) * (self.hi - self.lo)


class PiecewiseConstant1D:
    """Density constant on each of ``len(weights)`` equal bins of [0, 1]."""

    polynomial = True

    def __init__(self, weights):
        w = np.asarray(weights, dtype=float)
        if w.ndim != 1 or w.size == 0 or np.any(w < 0) or w.sum() <= 0:
            raise ValueError("piecewise-constant weights must be a non-empty, non-negative list")
        self.weights = w / w.sum()
        self.m = w.size
        self.edges = np.linspace(0.0, 1.0, self.m + 1)
        self.cum = np.concatenate([[0.0], np.cumsum(self.weights)])
        self.breakpoints = self.edges
        self.sup = float(self.weights.max() * self.m)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        k = np.clip(np.floor(x * self.m).astype(int), 0, self.m - 1)
        return np.where((x >= 0.0) & (x <= 1.0), self.weights[k] * self.m, 0.0)

    def cdf(self, x):
        return np.interp(np.asarray(x, dtype=float), self.edges, self.cum)

    def ppf(self, q):
        q = np.asarray(q, dtype=float)
        k = np.clip(np.searchsorted(self.cum, q, side="right") - 1, 0, self.m - 1)
        within = (q - self.cum[k]) / np.where(self.weights[k] > 0, self.weights[k], 1.0)
        return (k + np.clip(within, 0.0, 1.0)) / self.m


class TruncatedGaussian1D:
    polynomial = False

    def __init__(self, mean: float, stddev: float):
        if stddev <= 0:
            raise ValueError("stddev must be positive")
        self.mean, self.std = float(mean), float(stddev)
        self._a = float(ndtr((0.0 - self.mean) / self.std))
        self._b = float(ndtr((1.0 - self.mean) / self.std))
        self._z = self._b - self._a
        if self._z <= 1e-300:
            raise ValueError("truncated gaussian has no mass on [0, 1]")
        self.breakpoints = np.array([0.0, 1.0])
        peak = min(max(self.mean, 0.0), 1.0)
        self.sup = float(self.pdf(peak))

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        z = (x - self.mean) / self.std
        val = np.exp(-0.5 * z * z) / (self.std * math.sqrt(2 * math.pi) * self._z)
        return np.where((x >= 0.0) & (x <= 1.0), val, 0.0)

    def cdf(self, x):
        x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
        return np.clip((ndtr((x - self.mean) / self.std) - self._a) / self._z, 0.0, 1.0)

    def ppf(self, q):
        p = self._a + np.asarray(q) * self._z
        return np.clip(self.mean + self.std * ndtri(p), 0.0, 1.0)


@dataclass(frozen=True)
class ProductDensity:
    """Product of one-dimensional factors, with its JSON descriptor."""

    factors: tuple
    descriptor: dict

    @property
    def dim(self) -> int:
        return len(self.factors)

    @property
    def sup(self) -> float:
        return float(np.prod([fac.sup for fac in self.factors]))

    def pdf(self, points: np.ndarray) -> np.ndarray:
        """Density at points of shape ``(dim, ...)``."""
        out = np.ones(points.shape[1:])
        for k, fac in enumerate(self.factors):
            out = out * fac.pdf(points[k])
        return out

    def cell_averages(self, grid: Grid) -> np.ndarray:
        faces = grid.faces()
        out = np.ones(grid.shape)
        for k, fac in enumerate(self.factors):
            p = np.diff(fac.cdf(faces)) / grid.h
            shape = [1] * grid.dim
            shape[k] = grid.n
            out = out * p.reshape(shape)
        return out

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Exact draws by inverse cdf, shape ``(dim, size)``."""
        return np.stack([fac.ppf(rng.random(size)) for fac in self.factors])


def _axis_values(value, dim, name):
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.size == 1:
        arr = np.repeat(arr, dim)
    if arr.size != dim:
        raise ValueError(f"'{name}' needs {dim} entries, got {arr.size}")
    return arr


def density_from_descriptor(desc: dict, dim: int) -> ProductDensity:
    """Build a density from its JSON descriptor.

    Supported families::

        {"family": "uniform_box", "lo": [..], "hi": [..]}
        {"family": "truncated_gaussian", "mean": [..], "stddev": s}
        {"family": "piecewise_constant", "weights": [..]}   # same bins on every axis
        {"family": "piecewise_constant", "weights": [[..], [..]]}  # per axis
    """
    family = desc.get("family")
    if family == "uniform_box":
        lo = _axis_values(desc["lo"], dim, "lo")
        hi = _axis_values(desc["hi"], dim, "hi")
        factors = tuple(Uniform1D(a, b) for a, b in zip(lo, hi))
    elif family == "truncated_gaussian":
        mean = _axis_values(desc["mean"], dim, "mean")
        std = _axis_values(desc["stddev"], dim, "stddev")
        factors = tuple(TruncatedGaussian1D(m, s) for m, s in zip(mean, std))
    elif family == "piecewise_constant":
        w = desc["weights"]
        per_axis = w if (len(w) > 0 and isinstance(w[0], (list, tuple))) else [w] * dim
        if len(per_axis) != dim:
            raise ValueError(f"piecewise_constant needs {dim} weight lists")
        factors = tuple(PiecewiseConstant1D(ws) for ws in per_axis)
    else:
        raise ValueError(f"unknown density family {family!r}")
    return ProductDensity(factors, dict(desc))


@dataclass(frozen=True)
class DensityPair:
    """Source density f (of mu) and target density g (of nu) on one grid."""

    grid: Grid
    source: ProductDensity
    target: ProductDensity
    f: np.ndarray = field(repr=False)
    g: np.ndarray = field(repr=False)

    @property
    def rhs(self) -> np.ndarray:
        """f - g, the prescribed divergence of admissible flows."""
        return self.f - self.g

    def swapped(self) -> "DensityPair":
        return DensityPair(self.grid, self.target, self.source, self.g, self.f)


def make_pair(grid: Grid, f_desc: dict, g_desc: dict) -> DensityPair:
    src = density_from_descriptor(f_desc, grid.dim)
    tgt = density_from_descriptor(g_desc, grid.dim)
    f = src.cell_averages(grid)
    g = tgt.cell_averages(grid)
    for name, v in (("f", f), ("g", g)):
        mass = integrate(grid, v)
        if abs(mass - 1.0) > 1e-9:
            raise ValueError(f"{name} has mass {mass} on the grid")
    # remove the last roundoff so that f - g has zero discrete mass
    f = f / integrate(grid, f)
    g = g / integrate(grid, g)
    return DensityPair(grid, src, tgt, f, g)


@dataclass(frozen=True)
class SigmaField:
    density: np.ndarray = field(repr=False)
    method: str
    raw_mass: float
    t_nodes: int | None = None
    sample_count: int | None = None
    seed: int | None = None

    @property
    def max(self) -> float:
        return float(self.density.max())


_GL_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _gauss_legendre(q: int):
    if q not in _GL_CACHE:
        x, w = leggauss(q)
        _GL_CACHE[q] = ((x + 1.0) / 2.0, w / 2.0)
    return _GL_CACHE[q]


def _smeared_cdf(outer, inner, z, a, b):
    """``int outer.pdf(y) * inner.cdf((z - b*y) / a) dy`` for every z.

    The integrand is smooth between the breakpoints of ``outer`` and the
    points where ``(z - b*y) / a`` crosses a breakpoint of ``inner``; each
    piece is integrated by (composite) Gauss-Legendre.
    """
    lo, hi = outer.breakpoints[0], outer.breakpoints[-1]
    moving = (z[:, None] - a * inner.breakpoints[None, :]) / b
    fixed = np.broadcast_to(outer.breakpoints, (z.size, outer.breakpoints.size))
    br = np.sort(np.clip(np.concatenate([fixed, moving], axis=1), lo, hi), axis=1)
    left, right = br[:, :-1], br[:, 1:]
    smooth = outer.polynomial and inner.polynomial
    q, m = (4, 1) if smooth else (16, 6)
    x, w = _gauss_legendre(q)
    sub = (np.arange(m)[:, None] + x[None, :]).ravel() / m
    ws = np.tile(w, m) / m
    width = right - left
    y = left[..., None] + width[..., None] * sub
    vals = outer.pdf(y) * inner.cdf((z[:, None, None] - b * y) / a)
    return np.sum(vals * ws * width[..., None], axis=(1, 2))


def t_rule(t_nodes: int) -> tuple[np.ndarray, np.ndarray]:
    """Graded midpoint nodes and weights for t in (0, 1).

    Midpoint nodes in ``s`` are mapped by ``t = s^2 / 2`` on (0, 1/2) and
    mirrored onto (1/2, 1).  Cells at distance ``r`` from the boundary only
    receive mass from ``t`` (or ``1 - t``) of order ``r``, so the nodes are
    packed towards both ends.  The rule is symmetric under ``t -> 1 - t``
    and its weights sum to 1.  An odd ``t_nodes`` is rounded up.
    """
    half = (t_nodes + 1) // 2
    s = (np.arange(half) + 0.5) / half
    t = 0.5 * s * s
    w = s / half
    return np.concatenate([t, (1.0 - t)[::-1]]), np.concatenate([w, w[::-1]])


def sigma_quadrature(pair: DensityPair, t_nodes: int = 128) -> SigmaField:
    """sigma on the grid as cell averages, by graded midpoint quadrature in t.

    Summed over cells, each t node contributes exactly its weight, so the
    unnormalised mass is 1 up to the accuracy of the inner integrals.
    """
    if t_nodes < 8:
        raise ValueError("t_nodes must be at least 8")
    grid = pair.grid
    faces = grid.faces()
    sigma = np.zeros(grid.shape)
    for t, wt in zip(*t_rule(t_nodes)):
        cell = np.full(grid.shape, wt)
        for k in range(grid.dim):
            f_k, g_k = pair.source.factors[k], pair.target.factors[k]
            if t < 0.5:
                # condition on y ~ g; x = (z - t y) / (1 - t)
                cum = _smeared_cdf(g_k, f_k, faces, 1.0 - t, t)
            else:
                # condition on x ~ f; y = (z - (1 - t) x) / t
                cum = _smeared_cdf(f_k, g_k, faces, t, 1.0 - t)
            p = np.diff(cum) / grid.h
            shape = [1] * grid.dim
            shape[k] = grid.n
            cell = cell * p.reshape(shape)
        sigma += cell
    sigma = np.maximum(sigma, 0.0)
    raw = integrate(grid, sigma)
    return SigmaField(sigma / raw, "quadrature", raw, t_nodes=t_nodes)


def sigma_montecarlo(pair: DensityPair, sample_count: int, seed: int = 0,
                     chunk: int = 1_000_000) -> SigmaField:
    """Histogram estimate of sigma from exact draws of (x, y, t).

    Draws come from a single Philox stream in fixed-size chunks, so the
    result depends only on ``seed`` and ``sample_count``.
    """
    if sample_count < 10_000:
        raise ValueError("sample_count must be at least 1e4")
    for dens in (pair.source, pair.target):
        if not all(hasattr(fac, "ppf") for fac in dens.factors):
            raise ValueError(f"no exact sampler for {dens.descriptor}")
    grid = pair.grid
    rng = np.random.Generator(np.random.Philox(seed))
    counts = np.zeros(grid.size, dtype=np.int64)
    done = 0
    while done < sample_count:
        m = min(chunk, sample_count - done)
        x = pair.source.sample(rng, m)
        y = pair.target.sample(rng, m)
        t = rng.random(m)
        z = (1.0 - t) * x + t * y
        idx = np.clip(np.floor(z * grid.n).astype(np.int64), 0, grid.n - 1)
        flat = np.ravel_multi_index(tuple(idx), grid.shape)
        counts += np.bincount(flat, minlength=grid.size)
        done += m
    density = counts.reshape(grid.shape) / (sample_count * grid.cell_volume)
    return SigmaField(density, "montecarlo", 1.0, sample_count=sample_count, seed=seed)


def sigma_sup_bound(pair: DensityPair) -> float:
    """Upper bound on sup sigma: C(d) (|f|_inf + |g|_inf).

    C(d) is the integral of (1 - t)^-d over (0, 1/2): ln 2 for d = 1 and 1
    for d = 2.
    """
    d = pair.grid.dim
    c = math.log(2.0) if d == 1 else (2.0 ** (d - 1) - 1.0) / (d - 1)
    return c * (pair.source.sup + pair.target.sup)


def boundary_distance(grid: Grid) -> np.ndarray:
    c = grid.centers()
    return np.min(np.minimum(c, 1.0 - c), axis=0)


def comparability_ratio(sigma: SigmaField, grid: Grid) -> tuple[float, float]:
    """(min, max) of sigma / dist(x, boundary) over cells.

    Raises ValueError when a ratio is zero or non-finite, which means the
    two-sided comparison fails on this grid.
    """
    ratio = sigma.density / boundary_distance(grid)
    lo, hi = float(ratio.min()), float(ratio.max())
    if not (np.isfinite(lo) and np.isfinite(hi) and lo > 0.0):
        raise ValueError(f"sigma is not comparable to the boundary distance: ratios ({lo}, {hi})")
    return lo, hi


def l1_distance(grid: Grid, a: np.ndarray, b: np.ndarray) -> float:
    return integrate(grid, np.abs(a - b))


def histogram_standard_error(grid: Grid, density: np.ndarray, sample_count: int) -> float:
    """Expected L1 error of an N-sample histogram of ``density``.

    Uses the normal approximation E|p_hat - p| = sqrt(2 p (1 - p) / (pi N))
    per cell.
    """
    p = np.clip(density * grid.cell_volume, 0.0, 1.0)
    return float(np.sum(np.sqrt(2.0 * p * (1.0 - p) / (math.pi * sample_count))))
