"""Scenario runner: sigma once, then a certified solve per lambda.

A scenario is one JSON document::

    {
      "grid":   {"dim": 1, "n": 512},
      "pair":   {"f": {...descriptor...}, "g": {...descriptor...}},
      "sigma":  {"method": "quadrature", "t_nodes": 128},
      "solver": {"lambda": [0.5, 1, 2, 5], "max_iterations": 20000, "tolerance": 1e-6},
      "checks": ["duality", "lower_bound", "extremality", "sigma_bounds"],
      "seed": 0,
      "workers": 1
    }

Results go to ``report.json`` (deterministic for a fixed config and seed),
``sweep.csv``, ``timings.json`` and per-lambda field dumps.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .beckmann import (
    congestion_cost,
    duality_certificate,
    extremality_residual_bound,
    lower_bound_rhs,
    project_divergence,
    w1_lower_bound_check,
)
from .gp import GPProblem, SolverConfig, extremality_map, solve_gp
from .grid import Grid, write_field_csv
from .measures import (
    SigmaField,
    comparability_ratio,
    make_pair,
    sigma_montecarlo,
    sigma_quadrature,
    sigma_sup_bound,
)
from .traffic import (
    cancel_cycles,
    decompose_paths,
    field_to_edgeflow,
    intensity_and_flow,
    lattice_norm,
    write_plan_jsonl,
)
from .w1 import w1_grid

__all__ = [
    "SCHEMA_VERSION",
    "SWEEP_COLUMNS",
    "CHECKS",
    "ScenarioConfig",
    "ScenarioReport",
    "load_config",
    "build_sigma",
    "run_scenario",
    "lambda_sweep_summary",
]

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
SWEEP_COLUMNS = ["lambda", "gp_value", "bp_value", "gap", "w1", "lb_rhs", "residual",
                 "residual_bound", "ok_duality", "ok_lowerbound", "ok_extremality"]
CHECKS = ("duality", "lower_bound", "extremality", "traffic", "sigma_bounds")
DEFAULT_CHECKS = ("duality", "lower_bound", "extremality", "sigma_bounds")


@dataclass(frozen=True)
class ScenarioConfig:
    dim: int
    n: int
    f: dict
    g: dict
    lambdas: tuple
    sigma_method: str = "quadrature"
    t_nodes: int = 128
    sample_count: int = 1_000_000
    solver: SolverConfig = field(default_factory=SolverConfig)
    checks: tuple = DEFAULT_CHECKS
    max_relative_gap: float = 1e-2
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if not 8 <= self.n <= 1024:
            raise ValueError(f"grid n must lie in [8, 1024], got {self.n}")
        if not self.lambdas:
            raise ValueError("at least one lambda is required")
        if any(not lam > 0 for lam in self.lambdas):
            raise ValueError(f"lambda values must be positive, got {list(self.lambdas)}")
        if len(set(self.lambdas)) != len(self.lambdas):
            raise ValueError("lambda values must be distinct")
        if self.sigma_method not in ("quadrature", "montecarlo"):
            raise ValueError(f"unknown sigma method {self.sigma_method!r}")
        unknown = set(self.checks) - set(CHECKS)
        if unknown:
            raise ValueError(f"unknown checks {sorted(unknown)}; choose from {list(CHECKS)}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    @classmethod
    def from_dict(cls, doc: dict) -> "ScenarioConfig":
        try:
            grid = doc["grid"]
            pair = doc["pair"]
            solver = dict(doc.get("solver", {}))
        except KeyError as exc:
            raise ValueError(f"config is missing section {exc}") from None
        lam = solver.pop("lambda", 1.0)
        lambdas = tuple(float(x) for x in (lam if isinstance(lam, (list, tuple)) else [lam]))
        max_gap = float(solver.pop("max_relative_gap", 1e-2))
        known = {"max_iterations", "tolerance", "initial_lipschitz", "relax",
                 "backtrack_factor", "preconditioner"}
        extra = set(solver) - known
        if extra:
            raise ValueError(f"unknown solver keys {sorted(extra)}")
        sigma = doc.get("sigma", {})
        return cls(
            dim=int(grid["dim"]),
            n=int(grid["n"]),
            f=pair["f"],
            g=pair["g"],
            lambdas=lambdas,
            sigma_method=sigma.get("method", "quadrature"),
            t_nodes=int(sigma.get("t_nodes", 128)),
            sample_count=int(sigma.get("sample_count", 1_000_000)),
            solver=SolverConfig(**solver),
            checks=tuple(doc.get("checks", DEFAULT_CHECKS)),
            max_relative_gap=max_gap,
            seed=int(doc.get("seed", 0)),
            workers=int(doc.get("workers", 1)),
        )

    def to_dict(self) -> dict:
        return {
            "grid": {"dim": self.dim, "n": self.n},
            "pair": {"f": self.f, "g": self.g},
            "sigma": {"method": self.sigma_method, "t_nodes": self.t_nodes,
                      "sample_count": self.sample_count},
            "solver": {"lambda": list(self.lambdas),
                       "max_iterations": self.solver.max_iterations,
                       "tolerance": self.solver.tolerance,
                       "preconditioner": self.solver.preconditioner,
                       "max_relative_gap": self.max_relative_gap},
            "checks": list(self.checks),
            "seed": self.seed,
        }


def load_config(path) -> ScenarioConfig:
    return ScenarioConfig.from_dict(json.loads(Path(path).read_text()))


@dataclass
class ScenarioReport:
    config: ScenarioConfig
    sigma_stats: dict
    w1: dict
    records: list
    summary: dict | None = None
    timings: dict = field(default_factory=dict)

    @property
    def all_ok(self) -> bool:
        flags = [v for r in self.records for k, v in r.items() if k.startswith("ok_")]
        flags += [v for k, v in self.sigma_stats.items() if k.startswith("ok_")]
        if self.summary is not None and "ok_slope" in self.summary:
            flags.append(self.summary["ok_slope"])
        return all(bool(f) for f in flags)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "config": self.config.to_dict(),
            "sigma": self.sigma_stats,
            "w1": self.w1,
            "records": self.records,
            "lambda_summary": self.summary,
            "all_ok": self.all_ok,
        }


def _clean(obj):
    """Make a structure strict-JSON safe: non-finite floats become strings."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def build_sigma(config: ScenarioConfig, pair) -> SigmaField:
    if config.sigma_method == "montecarlo":
        return sigma_montecarlo(pair, config.sample_count, seed=config.seed)
    return sigma_quadrature(pair, config.t_nodes)


def _sigma_stats(config: ScenarioConfig, pair, sigma: SigmaField) -> dict:
    stats = {
        "method": sigma.method,
        "max": sigma.max,
        "min": float(np.min(sigma.density)),
        "raw_mass": sigma.raw_mass,
    }
    if "sigma_bounds" in config.checks:
        bound = sigma_sup_bound(pair)
        stats["sup_bound"] = bound
        stats["ok_sup_bound"] = bool(sigma.max <= bound)
        try:
            lo, hi = comparability_ratio(sigma, pair.grid)
            stats["comparability"] = [lo, hi]
        except ValueError as exc:
            # reported, not asserted: the pair may not satisfy the hypotheses
            stats["comparability"] = None
            stats["comparability_note"] = str(exc)
    return stats


def _empty_record(lam: float, w1: float) -> dict:
    rec = {c: None for c in SWEEP_COLUMNS}
    rec.update({"lambda": lam, "w1": w1, "ok_duality": False, "ok_lowerbound": False,
                "ok_extremality": False, "error": None})
    return rec


def _solve_one(config: ScenarioConfig, pair, sigma: SigmaField, lam: float, w1: float):
    """Everything for one lambda.  Returns (record, fields, timing); never raises."""
    rec = _empty_record(lam, w1)
    fields = {}
    t0 = time.perf_counter()
    try:
        problem = GPProblem(pair, sigma, lam)
        sol = solve_gp(problem, config.solver)
        fields["u"] = sol.u
        rec.update({"iterations": sol.iterations, "converged": sol.converged,
                    "grad_norm": sol.grad_norm})
        cand = project_divergence(extremality_map(problem, sol.u), pair, sigma, lam)
        fields["w"] = cand.w
        cert = duality_certificate(problem, sol, candidate=cand)
        residual, bound, holds = extremality_residual_bound(problem, sol.u, cand.w,
                                                              max(cert.gap, 0.0))
        rhs = lower_bound_rhs(w1, lam, sigma.max)
        rec.update({
            "gp_value": cert.gp_value,
            "bp_value": cert.bp_value,
            "gap": cert.gap,
            "relative_gap": cert.relative_gap,
            "feasibility_residual": cert.feasibility_residual,
            "lb_rhs": rhs,
            "residual": residual,
            "residual_bound": bound,
        })
        if "duality" in config.checks:
            # absolute floor for the f = g case, where the value itself is 0
            rec["ok_duality"] = bool(cert.finite and cert.gap >= -1e-10
                                     and (cert.relative_gap <= config.max_relative_gap
                                          or cert.gap <= 1e-8))
        else:
            rec["ok_duality"] = None
        rec["ok_lowerbound"] = (w1_lower_bound_check(cert.gp_value, w1, lam, sigma.max)
                                if "lower_bound" in config.checks else None)
        rec["ok_extremality"] = holds if "extremality" in config.checks else None
        if "traffic" in config.checks:
            edges = cancel_cycles(field_to_edgeflow(cand.w, pair))
            plan = decompose_paths(edges, pair)
            i, wq = intensity_and_flow(plan)
            fields["plan"] = plan
            fields["intensity"] = i
            cost_q = congestion_cost(wq, sigma, lam)
            rec["traffic"] = {
                "paths": len(plan.paths),
                "unrouted_residual": plan.unrouted_residual,
                "intensity_mismatch": float(np.max(np.abs(i - lattice_norm(wq)))),
                "cost_relative_error": abs(cost_q - cert.bp_value) / max(abs(cert.bp_value), 1e-300),
            }
            tr = rec["traffic"]
            rec["ok_traffic"] = bool(tr["unrouted_residual"] <= 1e-8
                                     and tr["intensity_mismatch"] <= 1e-10
                                     and tr["cost_relative_error"] <= 1e-6)
    except Exception as exc:  # recorded per lambda; the sweep carries on
        log.exception("lambda = %g failed", lam)
        rec["error"] = f"{type(exc).__name__}: {exc}"
        if "traffic" in config.checks:
            rec["ok_traffic"] = False
    return rec, fields, time.perf_counter() - t0


def lambda_sweep_summary(report) -> dict:
    """Least-squares decay rate of ``gp_value - w1`` against lambda (log-log).

    Needs at least four lambda values spanning a decade.  Raises
    ``ValueError`` if any ``gp_value - w1`` is not positive.  A slope outside
    [-1.3, -0.7] is flagged as suspicious.
    """
    records = report.records if isinstance(report, ScenarioReport) else list(report)
    rows = sorted((r for r in records if r.get("gp_value") is not None), key=lambda r: r["lambda"])
    if len(rows) < 4:
        raise ValueError(f"need at least 4 solved lambda values, got {len(rows)}")
    lam = np.array([r["lambda"] for r in rows], dtype=float)
    if lam.max() < 10.0 * lam.min():
        raise ValueError("lambda values must span at least a decade")
    excess = np.array([r["gp_value"] - r["w1"] for r in rows], dtype=float)
    if np.any(excess <= 0):
        bad = [float(x) for x in lam[excess <= 0]]
        raise ValueError(f"gp_value - w1 is not positive at lambda = {bad}")
    slope, intercept = np.polyfit(np.log(lam), np.log(excess), 1)
    over_bound = [None if r.get("lb_rhs") is None else r["gp_value"] - r["lb_rhs"] for r in rows]
    ok = bool(-1.3 <= slope <= -0.7)
    return {
        "slope": float(slope),
        "intercept": float(intercept),
        "lambdas": lam.tolist(),
        "excess_over_w1": excess.tolist(),
        "excess_over_bound": over_bound,
        "nonincreasing": bool(np.all(np.diff(excess) <= 0)),
        "ok_slope": ok,
        "suspicious": not ok,
    }


def _tag(index: int) -> str:
    return f"lam{index:02d}"


def _write_outputs(out: Path, report: ScenarioReport, grid: Grid, pair, sigma, all_fields) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(
        json.dumps(_clean(report.to_dict()), indent=2, sort_keys=True, allow_nan=False) + "\n")
    (out / "timings.json").write_text(json.dumps(_clean(report.timings), indent=2, sort_keys=True) + "\n")
    with open(out / "sweep.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SWEEP_COLUMNS)
        for rec in report.records:
            writer.writerow(["" if rec.get(c) is None else repr(rec[c]) if isinstance(rec[c], float)
                             else rec[c] for c in SWEEP_COLUMNS])
    fdir = out / "fields"
    fdir.mkdir(exist_ok=True)
    write_field_csv(fdir / "f.csv", grid, pair.f)
    write_field_csv(fdir / "g.csv", grid, pair.g)
    write_field_csv(fdir / "sigma.csv", grid, sigma.density)
    for idx, (rec, fields) in enumerate(zip(report.records, all_fields)):
        tag = _tag(idx)
        if "u" in fields:
            write_field_csv(fdir / f"{tag}_u.csv", grid, fields["u"])
            sidecar = {k: rec.get(k) for k in ("iterations", "converged", "grad_norm")}
            sidecar["value"] = rec.get("gp_value")
            sidecar["lambda"] = rec["lambda"]
            (fdir / f"{tag}_u.json").write_text(json.dumps(_clean(sidecar), sort_keys=True) + "\n")
        if "w" in fields:
            write_field_csv(fdir / f"{tag}_w.csv", grid, fields["w"])
        if "intensity" in fields:
            write_field_csv(fdir / f"{tag}_intensity.csv", grid, fields["intensity"])
            write_plan_jsonl(fdir / f"{tag}_plan.jsonl", fields["plan"])
        cert = {k: rec.get(k) for k in ("gp_value", "bp_value", "gap", "relative_gap",
                                         "residual", "residual_bound")}
        (fdir / f"{tag}_certificate.json").write_text(json.dumps(_clean(cert), sort_keys=True) + "\n")


def run_scenario(config: ScenarioConfig, out_dir=None, workers: int | None = None) -> ScenarioReport:
    """Run a full sweep; write outputs to ``out_dir`` if given.

    Per-lambda failures are recorded in the record's ``error`` field and the
    sweep continues.  Records are ordered by increasing lambda regardless of
    the worker count.
    """
    workers = config.workers if workers is None else workers
    timings = {}
    t0 = time.perf_counter()
    grid = Grid(config.dim, config.n)
    pair = make_pair(grid, config.f, config.g)
    sigma = build_sigma(config, pair)
    timings["sigma"] = time.perf_counter() - t0
    stats = _sigma_stats(config, pair, sigma)

    t0 = time.perf_counter()
    w1_info = w1_grid(pair).to_dict()
    timings["w1"] = time.perf_counter() - t0
    w1 = w1_info["w1"]

    lambdas = sorted(config.lambdas)
    if workers > 1 and len(lambdas) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(lambdas))) as pool:
            futures = [pool.submit(_solve_one, config, pair, sigma, lam, w1) for lam in lambdas]
            results = [fut.result() for fut in futures]
    else:
        results = [_solve_one(config, pair, sigma, lam, w1) for lam in lambdas]
    records = [r for r, _, _ in results]
    all_fields = [f for _, f, _ in results]
    timings["per_lambda"] = {repr(lam): t for lam, (_, _, t) in zip(lambdas, results)}

    summary = None
    if len(lambdas) >= 4 and max(lambdas) >= 10.0 * min(lambdas):
        try:
            summary = lambda_sweep_summary(records)
        except ValueError as exc:
            summary = {"error": str(exc), "ok_slope": False}
        if w1 == 0.0:
            # f = g: there is no decay to fit
            summary = None
    report = ScenarioReport(config, stats, w1_info, records, summary, timings)
    if out_dir is not None:
        _write_outputs(Path(out_dir), report, grid, pair, sigma, all_fields)
    return report


def with_seed(config: ScenarioConfig, seed: int | None) -> ScenarioConfig:
    return config if seed is None else replace(config, seed=seed)
