"""``ctlab`` command-line entry point."""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from .beckmann import congestion_cost, duality_certificate, phi_lower_bound_check, project_divergence
from .experiments import _clean, _sigma_stats, build_sigma, load_config, run_scenario, with_seed
from .gp import GPProblem, SolverConfig, extremality_map, solve_gp
from .grid import Grid, write_field_csv
from .measures import (
    histogram_standard_error,
    l1_distance,
    make_pair,
    sigma_montecarlo,
    sigma_quadrature,
    sigma_sup_bound,
)
from .traffic import cancel_cycles, decompose_paths, field_to_edgeflow, intensity_and_flow, lattice_norm
from .w1 import w1_grid

log = logging.getLogger("ctlab")

ORACLE_F = {"family": "uniform_box", "lo": [0.0], "hi": [1.0]}
ORACLE_G = {"family": "uniform_box", "lo": [0.25], "hi": [0.75]}
GAUSS_F = {"family": "truncated_gaussian", "mean": [0.35, 0.4], "stddev": 0.12}
GAUSS_G = {"family": "truncated_gaussian", "mean": [0.65, 0.6], "stddev": 0.12}


def _print(doc) -> None:
    print(json.dumps(_clean(doc), indent=2, sort_keys=True))


def cmd_run(args) -> int:
    config = with_seed(load_config(args.config), args.seed)
    report = run_scenario(config, out_dir=args.out, workers=args.workers)
    for rec in report.records:
        flags = " ".join(f"{k}={rec[k]}" for k in sorted(rec) if k.startswith("ok_"))
        err = f" error={rec['error']}" if rec.get("error") else ""
        print(f"lambda={rec['lambda']:g} gp={rec['gp_value']} gap={rec['gap']} {flags}{err}")
    print(f"all_ok={report.all_ok} -> {args.out}")
    return 0 if report.all_ok else 1


def cmd_sigma(args) -> int:
    config = with_seed(load_config(args.config), args.seed)
    pair = make_pair(Grid(config.dim, config.n), config.f, config.g)
    sigma = build_sigma(config, pair)
    stats = _sigma_stats(config, pair, sigma)
    if args.out:
        write_field_csv(args.out, pair.grid, sigma.density)
    _print(stats)
    return 0 if all(v for k, v in stats.items() if k.startswith("ok_")) else 1


def cmd_w1(args) -> int:
    config = load_config(args.config)
    pair = make_pair(Grid(config.dim, config.n), config.f, config.g)
    _print(w1_grid(pair).to_dict())
    return 0


def _suite_duality() -> dict:
    out = {}
    pair = make_pair(Grid(1, 128), ORACLE_F, ORACLE_G)
    sigma = sigma_quadrature(pair, 128)
    problem = GPProblem(pair, sigma, 1.0)
    cert = duality_certificate(problem, solve_gp(problem, SolverConfig(tolerance=1e-6)))
    out["oracle_relative_gap"] = cert.relative_gap
    out["ok_oracle"] = bool(0 <= cert.gap + 1e-10 and cert.relative_gap <= 1e-2)
    same = make_pair(Grid(1, 64), ORACLE_F, ORACLE_F)
    problem = GPProblem(same, sigma_quadrature(same, 32), 1.0)
    sol = solve_gp(problem)
    cert = duality_certificate(problem, sol)
    out["equal_pair_gap"] = cert.gap
    out["ok_equal_pair"] = bool(abs(cert.gp_value) <= 1e-8 and abs(cert.gap) <= 1e-8)
    return out


def _suite_phi() -> dict:
    violations = phi_lower_bound_check(100_000, 42)
    return {"violations": violations, "ok_phi": violations == 0}


def _suite_traffic() -> dict:
    pair = make_pair(Grid(2, 16), GAUSS_F, GAUSS_G)
    sigma = sigma_quadrature(pair, 64)
    problem = GPProblem(pair, sigma, 1.0)
    sol = solve_gp(problem)
    cand = project_divergence(extremality_map(problem, sol.u), pair, sigma, 1.0)
    plan = decompose_paths(cancel_cycles(field_to_edgeflow(cand.w, pair)), pair)
    i, wq = intensity_and_flow(plan)
    mismatch = float(np.max(np.abs(i - lattice_norm(wq))))
    rel = abs(congestion_cost(wq, sigma, 1.0) / cand.cost - 1.0)
    return {"paths": len(plan.paths), "unrouted_residual": plan.unrouted_residual,
            "intensity_mismatch": mismatch, "cost_relative_error": rel,
            "ok_traffic": bool(plan.unrouted_residual <= 1e-8 and mismatch <= 1e-10 and rel <= 1e-6)}


def _suite_sigma() -> dict:
    grid = Grid(1, 64)
    pair = make_pair(grid, ORACLE_F, ORACLE_G)
    quad = sigma_quadrature(pair, 128)
    mc = sigma_montecarlo(pair, 1_000_000, seed=0)
    dist = l1_distance(grid, quad.density, mc.density)
    swap = float(np.max(np.abs(sigma_quadrature(pair.swapped(), 128).density - quad.density)))
    bound = sigma_sup_bound(pair)
    return {"l1_quadrature_montecarlo": dist,
            "expected_standard_error": histogram_standard_error(grid, quad.density, 1_000_000),
            "max": quad.max, "sup_bound": bound, "swap_difference": swap,
            "ok_agreement": dist <= 0.02, "ok_bound": quad.max <= bound, "ok_symmetry": swap <= 1e-9}


SUITES = {"duality": _suite_duality, "phi": _suite_phi, "traffic": _suite_traffic,
          "sigma": _suite_sigma}


def cmd_check(args) -> int:
    result = SUITES[args.suite]()
    _print(result)
    return 0 if all(v for k, v in result.items() if k.startswith("ok_")) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ctlab", description="Gradient-penalty / congested transport lab")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a scenario sweep and write a report")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sigma", help="compute sigma only and print its statistics")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="optional CSV dump of sigma")
    p.set_defaults(func=cmd_sigma)

    p = sub.add_parser("w1", help="Wasserstein-1 distance of the configured pair")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_w1)

    p = sub.add_parser("check", help="run a built-in verification suite")
    p.add_argument("--suite", required=True, choices=sorted(SUITES))
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"ctlab: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
