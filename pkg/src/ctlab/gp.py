"""One-sided gradient-penalty problem on a grid.

Maximise over grid potentials ``u``::

    J(u) = <u, f - g> - (lam / 2) * int (|grad u| - 1)_+^2 sigma dx

The penalty is C^1 in ``grad u`` (its derivative vanishes continuously at
``|grad u| = 1``), so plain first-order machinery applies.  ``J`` is invariant
under adding constants; iterates are kept in the gauge ``int u sigma = 0``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .grid import Grid, divergence, gradient, integrate, pointwise_norm, weighted_inner
from .measures import DensityPair, SigmaField

__all__ = [
    "GPProblem",
    "SolverConfig",
    "GPSolution",
    "SolverError",
    "penalty_flux",
    "gp_objective",
    "gp_gradient",
    "solve_gp",
    "extremality_map",
    "value_upper_bound",
]

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class GPProblem:
    pair: DensityPair
    sigma: SigmaField
    lam: float

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")
        if self.sigma.density.shape != self.pair.grid.shape:
            raise ValueError("sigma and the density pair live on different grids")
        if abs(integrate(self.pair.grid, self.pair.rhs)) > 1e-9:
            raise ValueError("f and g must have equal mass")

    @property
    def grid(self) -> Grid:
        return self.pair.grid


@dataclass(frozen=True)
class SolverConfig:
    """Accelerated gradient ascent settings.

    ``tolerance`` bounds the discrete L2 norm of the gauge-projected gradient.
    The step size ``1/L`` is found by backtracking; ``L`` is relaxed by
    ``relax`` after each accepted step.  Momentum restarts whenever a step
    would decrease the objective.

    With ``preconditioner="diagonal"`` steps are scaled cellwise by the
    inverse of ``lam * sigma``-weighted face counts, the diagonal of the
    penalty Hessian when every face is active.  This matters when sigma
    spans many decades, as it does near the boundary in 2-D.
    """

    max_iterations: int = 20000
    tolerance: float = 1e-6
    initial_lipschitz: float = 1.0
    relax: float = 0.95
    backtrack_factor: float = 2.0
    preconditioner: str | None = "diagonal"

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.preconditioner not in (None, "diagonal"):
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")


@dataclass
class GPSolution:
    u: np.ndarray = field(repr=False)
    value: float
    grad_norm: float
    iterations: int
    converged: bool
    restarts: int = 0
    history: list = field(default_factory=list, repr=False)

    def summary(self) -> dict:
        return {
            "value": self.value,
            "grad_norm": self.grad_norm,
            "iterations": self.iterations,
            "converged": self.converged,
        }


def penalty_flux(p: np.ndarray) -> np.ndarray:
    """(|p| - 1)_+ p / |p|, extended by 0 where |p| <= 1."""
    norm = pointwise_norm(p)
    scale = np.where(norm > 1.0, (norm - 1.0) / np.where(norm > 1.0, norm, 1.0), 0.0)
    return p * scale


def _penalty(problem: GPProblem, grad_u: np.ndarray) -> float:
    excess = np.maximum(pointwise_norm(grad_u) - 1.0, 0.0)
    return 0.5 * problem.lam * integrate(problem.grid, excess**2 * problem.sigma.density)


def gp_objective(problem: GPProblem, u: np.ndarray) -> float:
    grid = problem.grid
    return weighted_inner(grid, u, problem.pair.rhs) - _penalty(problem, gradient(grid, u))


def _sigma_mean_zero(problem: GPProblem, v: np.ndarray) -> np.ndarray:
    return v - weighted_inner(problem.grid, v, 1.0, problem.sigma.density)


def _raw_gradient(problem: GPProblem, grad_u: np.ndarray) -> np.ndarray:
    flux = problem.sigma.density * penalty_flux(grad_u)
    return problem.pair.rhs + problem.lam * divergence(problem.grid, flux)


def gp_gradient(problem: GPProblem, u: np.ndarray) -> np.ndarray:
    """Ascent direction of ``gp_objective`` in the cell-volume inner product.

    The raw gradient has zero plain mean; the returned field is shifted by a
    constant to have zero sigma-mean.  Directional derivatives along ``v``
    are therefore ``weighted_inner(grid, gp_gradient(u), v - mean(v))``.
    """
    return _sigma_mean_zero(problem, _raw_gradient(problem, gradient(problem.grid, u)))


def extremality_map(problem: GPProblem, u: np.ndarray) -> np.ndarray:
    """Flow ``-lam sigma (|grad u| - 1)_+ grad u / |grad u|``."""
    return -problem.lam * problem.sigma.density * penalty_flux(gradient(problem.grid, u))


def value_upper_bound(problem: GPProblem) -> float:
    """diam^2 / (2 lam) + diam, the a-priori bound on the maximal value."""
    diam = problem.grid.diameter
    return diam**2 / (2.0 * problem.lam) + diam


@dataclass
class _Point:
    u: np.ndarray
    value: float
    grad: np.ndarray
    grad_u: np.ndarray
    norm: np.ndarray


def _evaluate(problem: GPProblem, u: np.ndarray) -> _Point:
    grid = problem.grid
    gu = gradient(grid, u)
    nrm = pointwise_norm(gu)
    excess = np.maximum(nrm - 1.0, 0.0)
    value = (weighted_inner(grid, u, problem.pair.rhs)
             - 0.5 * problem.lam * integrate(grid, excess**2 * problem.sigma.density))
    if not math.isfinite(value):
        raise SolverError(f"objective became non-finite ({value})")
    return _Point(u, value, _raw_gradient(problem, gu), gu, nrm)


def _increase(problem: GPProblem, old: _Point, new: _Point, du: np.ndarray) -> float:
    """J(new) - J(old) for ``new.u = old.u + du``, without cancellation.

    The norm change is formed as (2 p.q + |q|^2) / (|p + q| + |p|) from the
    displacement ``q = grad du``, so the result stays accurate when the step
    is many orders of magnitude below the objective value.
    """
    grid = problem.grid
    q = gradient(grid, du)
    den = new.norm + old.norm
    dn = np.where(den > 0, (2.0 * np.sum(old.grad_u * q, axis=0) + np.sum(q * q, axis=0))
                  / np.where(den > 0, den, 1.0), 0.0)
    e_old = np.maximum(old.norm - 1.0, 0.0)
    e_new = np.maximum(new.norm - 1.0, 0.0)
    both = (old.norm > 1.0) & (new.norm > 1.0)
    de = np.where(both, dn, e_new - e_old)
    return (weighted_inner(grid, du, problem.pair.rhs)
            - 0.5 * problem.lam * integrate(grid, de * (e_new + e_old) * problem.sigma.density))


def _sigma_mean(problem: GPProblem, v: np.ndarray) -> float:
    return weighted_inner(problem.grid, v, 1.0, problem.sigma.density)


_SCALE_FLOOR = 1e-12


def _diagonal_scaling(problem: GPProblem) -> np.ndarray:
    grid = problem.grid
    sig = problem.sigma.density
    diag = np.zeros(grid.shape)
    for k in range(grid.dim):
        own = np.array(sig, copy=True)
        idx = [slice(None)] * grid.dim
        idx[k] = -1
        own[tuple(idx)] = 0.0
        diag += own + np.roll(own, 1, axis=k)  # roll wraps the zeroed last slice to the front
    diag /= diag.max()
    return 1.0 / np.maximum(diag, _SCALE_FLOOR)


def solve_gp(problem: GPProblem, config: SolverConfig | None = None,
             u0: np.ndarray | None = None) -> GPSolution:
    """Maximise ``gp_objective`` by restarted accelerated gradient ascent.

    Accepted iterates never decrease the objective; increments are computed
    as cellwise differences so that this holds below the roundoff level of
    the objective value itself.
    Returns ``converged=False`` if ``max_iterations`` is reached first.
    """
    config = config or SolverConfig()
    grid = problem.grid
    dv = grid.cell_volume

    def norm(v):
        # stationarity is measured on the sigma-mean-zero gradient
        v = _sigma_mean_zero(problem, v)
        return math.sqrt(float(np.sum(v * v)) * dv)

    u = grid.zeros() if u0 is None else _sigma_mean_zero(problem, grid.check_scalar(u0, "u0"))
    scale = _diagonal_scaling(problem) if config.preconditioner == "diagonal" else 1.0
    x = _evaluate(problem, u)
    y = x
    momentum = 1.0
    lip = config.initial_lipschitz
    restarts = 0
    history = []
    it = 0
    while it < config.max_iterations:
        gnorm = norm(x.grad)
        if gnorm <= config.tolerance:
            break
        it += 1
        # step along the raw gradient: its sigma-mean shift is not a null direction once scaled
        step = scale * y.grad
        gy2 = float(np.sum(y.grad * step)) * dv
        lip_start = lip
        while True:
            du = step / lip
            du = du - _sigma_mean(problem, y.u + du)
            new = _evaluate(problem, y.u + du)
            # sufficient increase with constant 1/4 (1/2 is the exact smooth-case value)
            if _increase(problem, y, new, du) >= gy2 / (4.0 * lip):
                break
            lip *= config.backtrack_factor
            if lip > 2.0**40 * lip_start:
                new = None
                break
        if new is None:
            if y is x:
                # no step of any length registers an increase: roundoff floor
                log.info("solve_gp stalled at iteration %d (grad norm %.3e)", it, gnorm)
                break
            restarts += 1
            momentum = 1.0
            lip = lip_start
            y = x
            continue
        if y is not x and _increase(problem, x, new, new.u - x.u) < 0.0:
            # extrapolation overshot: drop momentum and retry from x
            restarts += 1
            momentum = 1.0
            y = x
            continue
        m_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * momentum * momentum))
        beta = (momentum - 1.0) / m_new
        x_prev, x = x, new
        y = _evaluate(problem, _sigma_mean_zero(problem, x.u + beta * (x.u - x_prev.u))) if beta > 0 else x
        momentum = m_new
        lip *= config.relax
        if it % 100 == 0:
            history.append((it, x.value, gnorm))
    gnorm = norm(x.grad)
    converged = gnorm <= config.tolerance
    if not converged:
        log.warning("solve_gp stopped after %d iterations with grad norm %.3e", it, gnorm)
    if x.value > value_upper_bound(problem):
        raise SolverError(f"value {x.value} exceeds the a-priori bound {value_upper_bound(problem)}")
    return GPSolution(x.u, x.value, gnorm, it, converged, restarts, history)
