"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import json
import shutil
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import GAUSS_F, GAUSS_G, ORACLE_F, ORACLE_G
from oracles import W1_ORACLE_PAIR, beckmann_value_1d
from ctlab.beckmann import (
    congestion_cost,
    duality_certificate,
    extremality_residual_bound,
    lower_bound_rhs,
    phi_lower_bound_check,
    project_divergence,
    w1_lower_bound_check,
)
from ctlab.experiments import build_sigma, lambda_sweep_summary, load_config
from ctlab.gp import GPProblem, SolverConfig, extremality_map, gp_gradient, gp_objective, solve_gp
from ctlab.grid import Grid, weighted_inner
from ctlab.measures import (
    comparability_ratio,
    l1_distance,
    make_pair,
    sigma_montecarlo,
    sigma_quadrature,
    sigma_sup_bound,
)
from ctlab.traffic import (
    cancel_cycles,
    decompose_paths,
    field_to_edgeflow,
    intensity_and_flow,
    lattice_norm,
)
from ctlab.w1 import w1_grid

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
ORACLE_LAMBDAS = (0.5, 1.0, 2.0, 5.0)
SWEEP_LAMBDAS = (0.5, 1.0, 2.0, 5.0, 10.0)


def verdict(capsys, number, title, ok, detail):
    with capsys.disabled():
        print(f"\n{'PASS' if ok else 'FAIL'} criterion {number:2d} {title}: {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def oracle_sweep(oracle_pair, oracle_sigma):
    """Solve the 1-D oracle instance at every sweep lambda, timing each solve."""
    config = SolverConfig(tolerance=1e-6, max_iterations=40000)
    out = {}
    for lam in SWEEP_LAMBDAS:
        t0 = time.perf_counter()
        problem = GPProblem(oracle_pair, oracle_sigma, lam)
        sol = solve_gp(problem, config)
        cert = duality_certificate(problem, sol)
        out[lam] = (problem, sol, cert, time.perf_counter() - t0)
    return out


def test_oracle_value_1d(oracle_sweep, capsys):
    worst, slowest, lines = 0.0, 0.0, []
    for lam in ORACLE_LAMBDAS:
        _, sol, _, seconds = oracle_sweep[lam]
        exact = beckmann_value_1d(lam)
        rel = abs(sol.value - exact) / exact
        worst, slowest = max(worst, rel), max(slowest, seconds)
        lines.append(f"lam={lam:g} gp={sol.value:.6f} oracle={exact:.6f}")
    ok = worst <= 1e-2 and slowest <= 60.0
    verdict(capsys, 1, "1-D value vs quadrature oracle", ok,
            f"max rel err {worst:.2e} (<= 1e-2), slowest {slowest:.1f}s (<= 60s); " + "; ".join(lines))


def test_duality_gap(oracle_sweep, capsys):
    gaps_1d = [oracle_sweep[lam][2].relative_gap for lam in ORACLE_LAMBDAS]
    t0 = time.perf_counter()
    pair = make_pair(Grid(2, 64), GAUSS_F, GAUSS_G)
    problem = GPProblem(pair, sigma_quadrature(pair, 128), 1.0)
    sol = solve_gp(problem, SolverConfig(tolerance=1e-6))
    cert = duality_certificate(problem, sol)
    seconds = time.perf_counter() - t0
    ok = (all(0.0 <= g + 1e-10 and g <= 1e-2 for g in gaps_1d)
          and cert.finite and -1e-10 <= cert.gap and cert.relative_gap <= 5e-2 and seconds <= 300.0)
    verdict(capsys, 2, "duality gap", ok,
            f"1-D max rel gap {max(gaps_1d):.2e} (<= 1e-2); 2-D n=64 rel gap {cert.relative_gap:.2e} "
            f"(<= 5e-2) in {seconds:.1f}s (<= 300s)")


def _bound_rows(config_path):
    config = load_config(config_path)
    pair = make_pair(Grid(config.dim, config.n), config.f, config.g)
    sigma = build_sigma(config, pair)
    w1 = w1_grid(pair).w1
    rows = []
    for lam in SWEEP_LAMBDAS:
        sol = solve_gp(GPProblem(pair, sigma, lam), config.solver)
        rows.append((lam, sol.value, w1, sigma.max))
    return rows


def test_w1_lower_bound(oracle_pair, oracle_sweep, capsys):
    failures, checked = [], 0
    # the 1-D oracle pair is bounded with the exact CDF-formula value
    w1_pkg = w1_grid(oracle_pair).w1
    for lam in SWEEP_LAMBDAS:
        problem, sol, _, _ = oracle_sweep[lam]
        checked += 1
        if not w1_lower_bound_check(sol.value, W1_ORACLE_PAIR, lam, problem.sigma.max):
            failures.append(f"oracle lam={lam:g}")
    for path in sorted(CONFIGS.glob("*.json")):
        if path.name == "oracle_1d.json":
            continue
        for lam, value, w1, smax in _bound_rows(path):
            checked += 1
            if not w1_lower_bound_check(value, w1, lam, smax):
                failures.append(f"{path.stem} lam={lam:g}: {value:.6g} < {lower_bound_rhs(w1, lam, smax):.6g}")
    ok = not failures and abs(w1_pkg - W1_ORACLE_PAIR) <= 1e-12
    verdict(capsys, 3, "W1 lower bound on shipped instances", ok,
            f"{checked} (instance, lambda) pairs, failures {failures or 'none'}; "
            f"package W1 of oracle pair {w1_pkg!r} vs 0.125")


def test_degenerate_equal_pair(capsys):
    config = load_config(CONFIGS / "equal_pair.json")
    pair = make_pair(Grid(config.dim, config.n), config.f, config.g)
    problem = GPProblem(pair, build_sigma(config, pair), config.lambdas[0])
    sol = solve_gp(problem, config.solver)
    cert = duality_certificate(problem, sol)
    ok = abs(sol.value) <= 1e-8 and abs(cert.gap) <= 1e-8 and sol.iterations <= 10
    verdict(capsys, 4, "degenerate f = g", ok,
            f"gp {sol.value:.2e}, gap {cert.gap:.2e}, iterations {sol.iterations} (<= 10)")


def test_gradient_finite_differences(capsys):
    pair = make_pair(Grid(2, 16), GAUSS_F, GAUSS_G)
    problem = GPProblem(pair, sigma_quadrature(pair, 64), 1.0)
    grid = pair.grid
    rng = np.random.default_rng(2024)
    eps, worst = 1e-6, 0.0
    for _ in range(20):
        u = rng.standard_normal(grid.shape) * 0.2
        v = rng.standard_normal(grid.shape)
        # J ignores constants, so the gauge-fixed gradient pairs with mean-zero directions
        v -= v.mean()
        fd = (gp_objective(problem, u + eps * v) - gp_objective(problem, u - eps * v)) / (2 * eps)
        an = weighted_inner(grid, gp_gradient(problem, u), v)
        worst = max(worst, abs(fd - an) / max(abs(an), 1e-12))
    verdict(capsys, 5, "gradient vs central differences", worst <= 1e-5,
            f"20 potentials at n=16, max rel err {worst:.2e} (<= 1e-5)")


def test_sigma_cross_validation(capsys):
    grid = Grid(1, 64)
    pair = make_pair(grid, ORACLE_F, ORACLE_G)
    quad = sigma_quadrature(pair, 128)
    mc = sigma_montecarlo(pair, 1_000_000, seed=0)
    dist = l1_distance(grid, quad.density, mc.density)
    bound = sigma_sup_bound(pair)
    ok = dist <= 0.02 and quad.max <= bound and mc.max <= bound
    verdict(capsys, 6, "sigma quadrature vs Monte Carlo", ok,
            f"L1 {dist:.2e} (<= 0.02); max sigma {quad.max:.4f} quad, {mc.max:.4f} MC (<= {bound:.4f})")


def test_sigma_comparability(oracle_pair, oracle_sigma, capsys):
    lo, hi = comparability_ratio(oracle_sigma, oracle_pair.grid)
    ratio = hi / lo
    ok = np.isfinite(lo) and np.isfinite(hi) and 0 < lo <= hi and ratio <= 50.0
    verdict(capsys, 7, "sigma comparable to boundary distance", ok,
            f"bounds ({lo:.4f}, {hi:.4f}), ratio {ratio:.3f} (<= 50)")


def test_pointwise_phi_bound(capsys):
    t0 = time.perf_counter()
    violations = phi_lower_bound_check(100_000, seed=42)
    seconds = time.perf_counter() - t0
    verdict(capsys, 8, "pointwise phi inequality", violations == 0 and seconds <= 5.0,
            f"{violations} violations in 1e5 tuples, {seconds:.2f}s (<= 5s)")


def test_extremality_bound(oracle_pair, oracle_sigma, capsys):
    problem = GPProblem(oracle_pair, oracle_sigma, 1.0)
    rows = []
    for tol in (1e-2, 1e-4, 1e-6):
        sol = solve_gp(problem, SolverConfig(tolerance=tol, max_iterations=40000))
        cand = project_divergence(extremality_map(problem, sol.u), oracle_pair, oracle_sigma, 1.0)
        cert = duality_certificate(problem, sol, candidate=cand)
        residual, bound, holds = extremality_residual_bound(problem, sol.u, cand.w, max(cert.gap, 0.0))
        rows.append((tol, residual, bound, holds))
    residuals = [r for _, r, _, _ in rows]
    monotone = all(b <= a for a, b in zip(residuals, residuals[1:]))
    ok = all(h for *_, h in rows) and monotone
    verdict(capsys, 9, "extremality residual bound", ok,
            "; ".join(f"tol={t:g} residual={r:.3e} bound={b:.3e}" for t, r, b, _ in rows)
            + f"; monotone={monotone}")


def test_traffic_decomposition(gauss_pair_32, gauss_sigma_32, capsys):
    problem = GPProblem(gauss_pair_32, gauss_sigma_32, 1.0)
    sol = solve_gp(problem)
    cand = project_divergence(extremality_map(problem, sol.u), gauss_pair_32, gauss_sigma_32, 1.0)
    plan = decompose_paths(cancel_cycles(field_to_edgeflow(cand.w, gauss_pair_32)), gauss_pair_32)
    i, wq = intensity_and_flow(plan)
    mismatch = float(np.max(np.abs(i - lattice_norm(wq))))
    rel = abs(congestion_cost(wq, gauss_sigma_32, 1.0) - cand.cost) / cand.cost
    ok = plan.unrouted_residual <= 1e-8 and mismatch <= 1e-10 and rel <= 1e-6
    verdict(capsys, 10, "traffic decomposition at n=32", ok,
            f"{len(plan.paths)} paths, unrouted {plan.unrouted_residual:.2e} (<= 1e-8), "
            f"|i - |w_Q|| {mismatch:.2e} (<= 1e-10), cost rel err {rel:.2e} (<= 1e-6)")


def test_lambda_decay(oracle_sweep, capsys):
    records = [{"lambda": lam, "gp_value": oracle_sweep[lam][1].value, "w1": W1_ORACLE_PAIR}
               for lam in SWEEP_LAMBDAS]
    summary = lambda_sweep_summary(records)
    excess = summary["excess_over_w1"]
    ok = all(e > 0 for e in excess) and summary["nonincreasing"] and -1.3 <= summary["slope"] <= -0.7
    verdict(capsys, 11, "lambda decay of gp - W1", ok,
            f"slope {summary['slope']:.4f} in [-1.3, -0.7], excess {[f'{e:.3e}' for e in excess]}")


def test_cli_determinism(tmp_path, capsys):
    exe = shutil.which("ctlab")
    cmd = [exe] if exe else [sys.executable, "-m", "ctlab.cli"]
    config = CONFIGS / "gaussian_2d.json"
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        proc = subprocess.run(cmd + ["run", "--config", str(config), "--out", str(out), "--seed", "0"],
                              capture_output=True, text=True, timeout=1200)
        assert proc.returncode in (0, 1), proc.stderr
        outs.append((out / "report.json").read_bytes())
    same = outs[0] == outs[1]
    json.loads(outs[0])
    verdict(capsys, 12, "byte-identical report.json", same,
            f"two `ctlab run` invocations on {config.name}: {len(outs[0])} bytes, identical={same}")
