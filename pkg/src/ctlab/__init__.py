"""Gradient-penalty potentials, congested transport flows and their duality on grids."""

from .beckmann import (
    BeckmannCandidate,
    DualityCertificate,
    congestion_cost,
    duality_certificate,
    extremality_residual_bound,
    phi_lower_bound_check,
    project_divergence,
    w1_lower_bound_check,
)
from .experiments import ScenarioConfig, ScenarioReport, lambda_sweep_summary, run_scenario
from .gp import GPProblem, GPSolution, SolverConfig, extremality_map, gp_gradient, gp_objective, solve_gp
from .grid import Grid, divergence, gradient, integrate, weighted_inner
from .measures import (
    DensityPair,
    SigmaField,
    boundary_distance,
    comparability_ratio,
    make_pair,
    sigma_montecarlo,
    sigma_quadrature,
    sigma_sup_bound,
)
from .traffic import (
    EdgeFlow,
    TrafficPlanDiscrete,
    cancel_cycles,
    decompose_paths,
    field_to_edgeflow,
    intensity_and_flow,
)
from .w1 import DiscreteMeasurePair, w1_cdf_1d, w1_grid, w1_lp

__version__ = "0.1.0"
