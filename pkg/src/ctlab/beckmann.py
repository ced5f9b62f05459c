"""Congestion cost, feasible flows and duality certificates.

For a flow ``w`` with ``div w = f - g`` the congestion cost is::

    int H(x, |w|) dx,   H(x, z) = z^2 / (2 lam sigma) + z   (sigma > 0)

and ``H(x, 0) = 0``, ``H(x, z) = inf`` for ``z > 0`` where ``sigma = 0``.
Its value bounds the gradient-penalty objective from above for every
feasible ``w`` and every potential ``u``; on the grid this holds cell by cell
because the divergence is the exact negative adjoint of the gradient.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from .gp import GPProblem, GPSolution, extremality_map, gp_objective, penalty_flux
from .grid import Grid, divergence, gradient, integrate, pointwise_norm
from .measures import DensityPair, SigmaField

__all__ = [
    "SIGMA_FLOOR",
    "W_FLOOR",
    "ProjectionError",
    "BeckmannCandidate",
    "DualityCertificate",
    "grid_of_vector",
    "congestion_cost",
    "feasibility_residual",
    "cdf_flow_1d",
    "conjugate_gradient",
    "project_divergence",
    "duality_certificate",
    "phi_lower_bound_check",
    "extremality_residual_bound",
    "lower_bound_rhs",
    "w1_lower_bound_check",
]

log = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-12
W_FLOOR = 1e-12


class ProjectionError(RuntimeError):
    pass


def grid_of_vector(w: np.ndarray) -> Grid:
    w = np.asarray(w)
    if w.ndim < 2 or w.shape[0] != w.ndim - 1 or len(set(w.shape[1:])) != 1:
        raise ValueError(f"not a vector field on a square grid: shape {w.shape}")
    return Grid(w.shape[0], w.shape[1])


def _sigma_array(sigma) -> np.ndarray:
    return sigma.density if isinstance(sigma, SigmaField) else np.asarray(sigma, dtype=float)


def _drop_boundary_flux(grid: Grid, w: np.ndarray) -> np.ndarray:
    # component k on the last slice along axis k sits on the domain boundary
    w = np.array(w, dtype=float, copy=True)
    for k in range(grid.dim):
        idx = [slice(None)] * grid.dim
        idx[k] = -1
        w[k][tuple(idx)] = 0.0
    return w


def _cell_cost(z: np.ndarray, sig: np.ndarray, lam: float) -> np.ndarray:
    """H(x, z) per cell with the floor-based case analysis."""
    sig_floor = SIGMA_FLOOR * float(np.max(sig)) if sig.size else 0.0
    z_floor = W_FLOOR * float(np.max(z)) if z.size else 0.0
    positive = sig > sig_floor
    out = np.zeros_like(z)
    out[positive] = z[positive] ** 2 / (2.0 * lam * sig[positive]) + z[positive]
    out[~positive & (z > z_floor)] = np.inf
    return out


def congestion_cost(w: np.ndarray, sigma, lam: float) -> float:
    """Integrated congestion cost of ``w``; ``inf`` (logged) if it moves mass where sigma vanishes."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    grid = grid_of_vector(w)
    sig = _sigma_array(sigma)
    if sig.shape != grid.shape:
        raise ValueError("flow and sigma live on different grids")
    cells = _cell_cost(pointwise_norm(np.asarray(w, dtype=float)), sig, lam)
    if not np.all(np.isfinite(cells)):
        log.warning("congestion cost is infinite in %d cells (flow where sigma vanishes)",
                    int(np.sum(~np.isfinite(cells))))
        return math.inf
    return integrate(grid, cells)


def feasibility_residual(w: np.ndarray, pair: DensityPair) -> float:
    """Discrete L2 norm of ``div w - (f - g)``."""
    grid = pair.grid
    r = divergence(grid, w) - pair.rhs
    return math.sqrt(integrate(grid, r * r))


def cdf_flow_1d(pair: DensityPair) -> np.ndarray:
    """The unique feasible 1-D flow: ``F - G`` at the upper face of every cell."""
    grid = pair.grid
    if grid.dim != 1:
        raise ValueError("cdf_flow_1d needs a 1-D pair")
    w = np.cumsum(pair.rhs) * grid.h
    w[-1] = 0.0
    return w[np.newaxis, :]


@dataclass
class BeckmannCandidate:
    w: np.ndarray
    feasibility_residual: float
    cost: float
    cg_iterations: int = 0


def conjugate_gradient(apply, rhs: np.ndarray, diag: np.ndarray, rtol: float = 1e-12,
                       atol: float = 0.0, max_iterations: int = 100000):
    """Jacobi-preconditioned CG for a symmetric operator whose kernel is the constants.

    ``rhs`` must have zero sum; iterates and residuals are kept in the
    zero-sum subspace.  Returns ``(x, iterations, residual_norm)``.
    """
    b = rhs - np.mean(rhs)
    bnorm = float(np.linalg.norm(b))
    x = np.zeros_like(b)
    if bnorm <= atol:
        return x, 0, bnorm
    target = max(rtol * bnorm, atol)
    r = b.copy()
    z = r / diag
    z -= np.mean(z)
    p = z.copy()
    rz = float(np.vdot(r, z))
    rnorm = bnorm
    for it in range(1, max_iterations + 1):
        ap = apply(p)
        alpha = rz / float(np.vdot(p, ap))
        x += alpha * p
        r -= alpha * ap
        r -= np.mean(r)
        rnorm = float(np.linalg.norm(r))
        if rnorm <= target:
            # recompute the true residual once to guard against drift
            r_true = b - apply(x)
            rnorm = float(np.linalg.norm(r_true - np.mean(r_true)))
            if rnorm <= target:
                return x - np.mean(x), it, rnorm
            r = r_true - np.mean(r_true)
        z = r / diag
        z -= np.mean(z)
        rz_new = float(np.vdot(r, z))
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise ProjectionError(
        f"conjugate gradient did not converge in {max_iterations} iterations "
        f"(residual {rnorm:.3e}, target {target:.3e})")


def _face_mobility(grid: Grid, kappa: np.ndarray) -> np.ndarray:
    mob = np.broadcast_to(kappa, grid.vector_shape).copy()
    return _drop_boundary_flux(grid, mob)


def _diagonal(grid: Grid, mob: np.ndarray) -> np.ndarray:
    # -div(mob grad .) applied to a unit spike: sum of the mobilities of its faces
    diag = np.zeros(grid.shape)
    for k in range(grid.dim):
        m = mob[k]
        diag += m
        diag += np.concatenate([np.zeros_like(np.take(m, [0], axis=k)),
                                np.take(m, np.arange(grid.n - 1), axis=k)], axis=k)
    diag /= grid.h**2
    return np.where(diag > 0, diag, 1.0)


def project_divergence(w: np.ndarray, pair: DensityPair, sigma=None, lam: float | None = None,
                       mobility: str | None = "sigma", rtol: float = 1e-12,
                       max_iterations: int = 20000) -> BeckmannCandidate:
    """Repair ``w`` into an exactly feasible flow ``w - kappa grad(phi)``.

    ``phi`` solves ``-div(kappa grad phi) = (f - g) - div w`` by conjugate
    gradients.  With ``mobility="sigma"`` (the default when ``sigma`` is
    given) ``kappa`` is sigma, which makes the correction the smallest one in
    the cost's own weighted norm and keeps it away from where sigma is tiny.
    ``mobility=None`` uses ``kappa = 1``, a plain Poisson repair.

    ``cost`` is filled in when both ``sigma`` and ``lam`` are given.  The
    sigma-weighted system inherits sigma's dynamic range, so for rough
    inputs CG may hit ``max_iterations``; that raises ``ProjectionError``.
    """
    grid = pair.grid
    w = _drop_boundary_flux(grid, grid.check_vector(w, "w"))
    if abs(integrate(grid, pair.rhs)) > 1e-9:
        raise ValueError("f and g must have equal mass")
    sig = None if sigma is None else _sigma_array(sigma)
    if mobility == "sigma" and sig is not None:
        smax = float(np.max(sig))
        kappa = np.maximum(sig, SIGMA_FLOOR * smax) / smax
    elif mobility is None or mobility == "sigma":
        kappa = np.ones(grid.shape)
    else:
        raise ValueError(f"unknown mobility {mobility!r}")
    mob = _face_mobility(grid, kappa)

    def apply(phi):
        return -divergence(grid, mob * gradient(grid, phi))

    rhs = pair.rhs - divergence(grid, w)
    # absolute floor: 1e-12 in the discrete L2 norm, below which roundoff dominates
    atol = 1e-12 / math.sqrt(grid.cell_volume)
    phi, iters, _ = conjugate_gradient(apply, rhs, _diagonal(grid, mob), rtol=rtol, atol=atol,
                                       max_iterations=max_iterations)
    w_new = w - mob * gradient(grid, phi)
    res = feasibility_residual(w_new, pair)
    cost = math.nan
    if sig is not None and lam is not None:
        cost = congestion_cost(w_new, sig, lam)
    return BeckmannCandidate(w_new, res, cost, iters)


@dataclass
class DualityCertificate:
    gp_value: float
    bp_value: float
    gap: float
    relative_gap: float
    feasibility_residual: float = 0.0
    residual: float | None = None
    residual_bound: float | None = None

    @property
    def finite(self) -> bool:
        return math.isfinite(self.bp_value)

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items()}

    def to_json(self) -> str:
        keys = ("gp_value", "bp_value", "gap", "relative_gap", "residual", "residual_bound")
        return json.dumps({k: getattr(self, k) for k in keys})


def duality_certificate(problem: GPProblem, sol: GPSolution, mobility: str | None = "sigma",
                        candidate: BeckmannCandidate | None = None) -> DualityCertificate:
    """Bracket the common optimum between ``gp_objective(u)`` and the cost of a feasible flow.

    The flow is the extremality map of ``sol.u`` repaired by
    :func:`project_divergence`, falling back to unit mobility if the
    sigma-weighted repair does not converge.  An infinite cost is kept, not
    clamped.
    """
    gp_value = gp_objective(problem, sol.u)
    if candidate is None:
        w = extremality_map(problem, sol.u)
        try:
            candidate = project_divergence(w, problem.pair, problem.sigma, problem.lam,
                                           mobility=mobility)
        except ProjectionError as exc:
            if mobility is None:
                raise
            log.warning("%s; repairing with unit mobility instead", exc)
            candidate = project_divergence(w, problem.pair, problem.sigma, problem.lam, mobility=None)
    bp_value = candidate.cost
    gap = bp_value - gp_value
    rel = gap / max(abs(gp_value), 1e-12)
    if not math.isfinite(bp_value):
        log.warning("duality certificate has a non-finite upper bound")
    elif gap < -1e-10:
        log.warning("negative duality gap %.3e: weak duality violated beyond roundoff", gap)
    return DualityCertificate(gp_value, bp_value, gap, rel, candidate.feasibility_residual)


def _phi_sides(xi, xs, lam, sig):
    """Both sides of the pointwise lower bound, vectorised over the leading axis."""
    nxi = np.linalg.norm(xi, axis=-1)
    nxs = np.linalg.norm(xs, axis=-1)
    excess = np.maximum(nxi - 1.0, 0.0)
    lhs = (np.sum(xs * xi, axis=-1) + 0.5 * lam * sig * excess**2
           + nxs**2 / (2.0 * lam * sig) + nxs)
    scale = np.where(nxi > 0, excess / np.where(nxi > 0, nxi, 1.0), 0.0)
    shifted = xs + (lam * sig * scale)[:, None] * xi
    rhs = np.sum(shifted**2, axis=-1) / (2.0 * lam * sig)
    mag = (np.abs(np.sum(xs * xi, axis=-1)) + 0.5 * lam * sig * excess**2
           + nxs**2 / (2.0 * lam * sig) + nxs + rhs)
    return lhs, rhs, mag


def phi_lower_bound_check(samples: int, seed: int = 42, dim: int = 2) -> int:
    """Count random tuples violating the pointwise lower bound on phi.

    For ``sigma, lam > 0`` and vectors ``xi, xi*``::

        xi*.xi + (lam sigma / 2)(|xi| - 1)_+^2 + H(|xi*|)
            >= |xi* + lam sigma (|xi| - 1)_+ xi / |xi||^2 / (2 lam sigma)

    Magnitudes are drawn log-uniformly over several decades and a quarter
    of the ``xi*`` are set to the exact minimiser, where equality nearly
    holds.  Tolerance is ``1e-12`` times the magnitude of the terms.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.Generator(np.random.Philox(seed))
    sig = 10.0 ** rng.uniform(-6, 2, samples)
    lam = 10.0 ** rng.uniform(-3, 3, samples)
    xi = rng.standard_normal((samples, dim)) * 10.0 ** rng.uniform(-2, 2, (samples, 1))
    xs = rng.standard_normal((samples, dim)) * 10.0 ** rng.uniform(-3, 3, (samples, 1))
    tight = rng.random(samples) < 0.25
    xs[tight] = -(lam * sig)[tight, None] * penalty_flux(xi[tight].T).T
    zero = rng.random(samples) < 0.05
    xi[zero] = 0.0
    lhs, rhs, mag = _phi_sides(xi, xs, lam, sig)
    return int(np.sum(lhs < rhs - 1e-12 * mag))


def extremality_residual_bound(problem: GPProblem, u: np.ndarray, w0: np.ndarray,
                               epsilon: float) -> tuple[float, float, bool]:
    """Distance of a feasible flow from the extremality map of ``u``.

    Returns ``(residual, bound, holds)`` with
    ``residual = ||w0 + lam sigma (|grad u| - 1)_+ grad u / |grad u| ||^2``
    and ``bound = 2 lam max(sigma) epsilon``.  When ``epsilon`` is the gap
    ``cost(w0) - gp_objective(u)`` the bound holds exactly on the grid, so
    ``holds`` allows only roundoff on top of it.
    """
    grid = problem.grid
    sig = problem.sigma.density
    diff = np.asarray(w0, dtype=float) + problem.lam * sig * penalty_flux(gradient(grid, u))
    diff = _drop_boundary_flux(grid, diff)
    residual = integrate(grid, np.sum(diff * diff, axis=0))
    smax = float(np.max(sig))
    bound = 2.0 * problem.lam * smax * epsilon
    gp_value = gp_objective(problem, u)
    cost = congestion_cost(w0, sig, problem.lam)
    roundoff = 2.0 * problem.lam * smax * 1e-12 * (abs(gp_value) + abs(cost) + 1.0)
    return residual, bound, bool(residual <= bound + roundoff)


def lower_bound_rhs(w1: float, lam: float, sigma_max: float) -> float:
    """w1 + w1^2 / (2 lam max(sigma)) on the unit box."""
    return w1 + w1 * w1 / (2.0 * lam * sigma_max)


def w1_lower_bound_check(gp_value: float, w1: float, lam: float, sigma_max: float,
                         slack_fraction: float = 0.01) -> bool:
    """The gradient-penalty value exceeds W1 by at least w1^2 / (2 lam max sigma), up to slack."""
    return bool(gp_value >= lower_bound_rhs(w1, lam, sigma_max) - slack_fraction * w1)
