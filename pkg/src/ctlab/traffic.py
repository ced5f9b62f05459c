"""Lattice traffic plans from feasible flows.

A cell-centred flow is re-read as signed fluxes on the edges of the cell
adjacency graph, cleaned of directed cycles and stripped into weighted
source-to-sink paths.  Rasterising the paths back onto cells gives a traffic
intensity ``i`` and a traffic flow ``w_Q``.

Edge ``(k, c)`` joins cell ``c`` to its upper neighbour along axis ``k``; it
is the face on which the gradient stencil puts component ``k`` of cell
``c``, and ``c`` is called its owner.  Path length and momentum on an edge
are credited to its owner, so ``w_Q`` lands on exactly the components the
input flow used.  With this convention ``|w_Q|`` is measured as the sum of
absolute components (the total variation of the lattice flow), and
``i = |w_Q|`` holds cellwise whenever no edge is used in both directions,
which is the case after cycle cancellation.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grid import Grid, divergence
from .measures import DensityPair

__all__ = [
    "EdgeFlow",
    "TrafficPlanDiscrete",
    "DecompositionError",
    "field_to_edgeflow",
    "edgeflow_to_field",
    "cancel_cycles",
    "decompose_paths",
    "intensity_and_flow",
    "lattice_norm",
    "write_plan_jsonl",
    "read_plan_jsonl",
]

log = logging.getLogger(__name__)


class DecompositionError(RuntimeError):
    pass


@dataclass
class EdgeFlow:
    """Signed flux through every interior face, indexed by owner cell.

    ``flux[k][c]`` is positive when mass moves from ``c`` to its upper
    neighbour along axis ``k``.  The last slice along axis ``k`` is always 0.
    """

    grid: Grid
    flux: np.ndarray

    def imbalance(self) -> np.ndarray:
        """Outflow minus inflow per cell."""
        return divergence(self.grid, self.flux) * self.grid.h

    def total(self) -> float:
        return float(np.sum(np.abs(self.flux)))

    def edges(self):
        """Yield ``(tail, head, amount)`` for every edge with nonzero flux, oriented by sign."""
        grid = self.grid
        strides = np.array([grid.n ** (grid.dim - 1 - k) for k in range(grid.dim)])
        for k in range(grid.dim):
            for idx in zip(*np.nonzero(self.flux[k])):
                c = int(np.dot(idx, strides))
                q = float(self.flux[k][idx])
                up = c + int(strides[k])
                yield (c, up, q) if q > 0 else (up, c, -q)


@dataclass
class TrafficPlanDiscrete:
    grid: Grid
    paths: list = field(default_factory=list)
    unrouted_residual: float = 0.0

    @property
    def total_mass(self) -> float:
        return float(sum(m for _, m in self.paths))


def _drop_boundary(grid: Grid, q: np.ndarray) -> np.ndarray:
    q = np.array(q, dtype=float, copy=True)
    for k in range(grid.dim):
        idx = [slice(None)] * grid.dim
        idx[k] = -1
        q[k][tuple(idx)] = 0.0
    return q


def field_to_edgeflow(w: np.ndarray, pair: DensityPair, tolerance: float = 1e-8) -> EdgeFlow:
    """Edge fluxes ``w_k * h^(d-1)`` of a feasible flow.

    Node imbalances then equal ``(f - g) * cell_volume``.  Flows whose
    divergence misses ``f - g`` by more than ``tolerance`` (discrete L2) are
    rejected.
    """
    grid = pair.grid
    w = _drop_boundary(grid, grid.check_vector(w, "w"))
    r = divergence(grid, w) - pair.rhs
    res = float(np.sqrt(np.sum(r * r) * grid.cell_volume))
    if res > tolerance:
        raise ValueError(f"flow is not feasible: divergence residual {res:.3e} > {tolerance:.1e}")
    return EdgeFlow(grid, w * grid.h ** (grid.dim - 1))


def edgeflow_to_field(e: EdgeFlow) -> np.ndarray:
    return e.flux / e.grid.h ** (e.grid.dim - 1)


def _to_edge_index(grid: Grid, tail: int, head: int) -> tuple:
    # edge between two face-adjacent flat indices, as (axis, owner multi-index, sign)
    lo, hi = min(tail, head), max(tail, head)
    step = hi - lo
    for k in range(grid.dim):
        if step == grid.n ** (grid.dim - 1 - k):
            return k, np.unravel_index(lo, grid.shape), (1.0 if tail == lo else -1.0)
    raise ValueError(f"cells {tail} and {head} are not face-adjacent")


def _adjacency(e: EdgeFlow) -> dict:
    adj: dict = {}
    for t, h, q in e.edges():
        adj.setdefault(t, {})[h] = q
    return adj


def _find_cycle(adj: dict, order: list):
    """Return one directed cycle as a node list, or None (iterative DFS)."""
    colour = {}
    for root in order:
        if root in colour:
            continue
        colour[root] = 1
        stack = [(root, iter(sorted(adj.get(root, {}))))]
        path = [root]
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                colour[node] = 2
                stack.pop()
                path.pop()
                continue
            state = colour.get(nxt, 0)
            if state == 1:
                return path[path.index(nxt):] + [nxt]
            if state == 0:
                colour[nxt] = 1
                stack.append((nxt, iter(sorted(adj.get(nxt, {})))))
                path.append(nxt)
    return None


def cancel_cycles(e: EdgeFlow) -> EdgeFlow:
    """Remove every directed cycle by saturating its bottleneck edge.

    Node imbalances are unchanged and the total absolute flux never grows.
    """
    adj = _adjacency(e)
    nodes = sorted(adj)
    cancelled = 0
    while True:
        cycle = _find_cycle(adj, nodes)
        if cycle is None:
            break
        hops = list(zip(cycle[:-1], cycle[1:]))
        bottleneck = min(adj[a][b] for a, b in hops)
        for a, b in hops:
            left = adj[a][b] - bottleneck
            if left > 0:
                adj[a][b] = left
            else:
                del adj[a][b]
        cancelled += 1
    flux = np.zeros(e.grid.vector_shape)
    for a, out in adj.items():
        for b, q in out.items():
            k, idx, sign = _to_edge_index(e.grid, a, b)
            flux[(k,) + tuple(idx)] += sign * q
    if cancelled:
        log.debug("cancelled %d cycles", cancelled)
    return EdgeFlow(e.grid, flux)


def _topological_order(adj: dict, nodes: list) -> list:
    indeg = {v: 0 for v in nodes}
    for out in adj.values():
        for b in out:
            indeg[b] += 1
    ready = sorted(v for v in nodes if indeg[v] == 0)
    order = []
    while ready:
        v = ready.pop()
        order.append(v)
        for b in sorted(adj.get(v, {}), reverse=True):
            indeg[b] -= 1
            if indeg[b] == 0:
                ready.append(b)
    if len(order) != len(nodes):
        raise DecompositionError("edge flow has a directed cycle; run cancel_cycles first")
    return order


def decompose_paths(e: EdgeFlow, pair: DensityPair, tolerance: float = 1e-8) -> TrafficPlanDiscrete:
    """Strip an acyclic edge flow into source-to-sink paths, widest first.

    Each round picks the path of largest routable mass, limited by the
    remaining supply at its first cell, the edge fluxes along it and the
    remaining demand at its last cell, found by dynamic programming in
    reverse topological order.  Ties go to the lowest flat cell index.
    """
    grid = e.grid
    supply = (pair.rhs * grid.cell_volume).ravel()
    demand = np.maximum(-supply, 0.0)
    supply = np.maximum(supply, 0.0)
    adj = _adjacency(e)
    nodes = list(range(grid.size))
    order = _topological_order(adj, nodes)
    total = float(supply.sum())
    floor = 1e-14 * max(total, 1e-300)
    paths = []
    max_rounds = sum(len(v) for v in adj.values()) + int(np.sum(supply > 0)) + int(np.sum(demand > 0)) + 1
    for _ in range(max_rounds):
        width = np.zeros(grid.size)
        choice = np.full(grid.size, -1)
        for v in reversed(order):
            best, arg = demand[v], -1
            out = adj.get(v, {})
            for b in sorted(out):
                cand = min(out[b], width[b])
                if cand > best:
                    best, arg = cand, b
            width[v] = best
            choice[v] = arg
        routable = np.minimum(supply, width)
        s = int(np.argmax(routable))
        mass = float(routable[s])
        if mass <= floor:
            break
        cells = [s]
        while choice[cells[-1]] != -1:
            cells.append(int(choice[cells[-1]]))
        supply[s] -= mass
        demand[cells[-1]] -= mass
        for a, b in zip(cells[:-1], cells[1:]):
            left = adj[a][b] - mass
            if left > floor:
                adj[a][b] = left
            else:
                del adj[a][b]
        paths.append(([tuple(int(i) for i in np.unravel_index(c, grid.shape)) for c in cells], mass))
    unrouted = float(np.sum(supply))
    if unrouted > tolerance:
        raise DecompositionError(
            f"{unrouted:.3e} of {total:.3e} supply could not be routed; edge flow and densities disagree")
    return TrafficPlanDiscrete(grid, paths, unrouted)


def intensity_and_flow(plan: TrafficPlanDiscrete) -> tuple[np.ndarray, np.ndarray]:
    """Traffic intensity and traffic flow of a lattice plan.

    Each traversed edge adds ``mass * h`` of path length, credited to the
    edge's owner cell and divided by the cell volume, so
    ``integrate(i) = sum(mass * length)``.  ``w_Q`` gets the same amount with
    the direction of travel.
    """
    grid = plan.grid
    i = grid.zeros()
    wq = grid.zeros_vector()
    unit = 1.0 / grid.h ** (grid.dim - 1)
    for cells, mass in plan.paths:
        for a, b in zip(cells[:-1], cells[1:]):
            diff = [y - x for x, y in zip(a, b)]
            k = next(j for j, v in enumerate(diff) if v != 0)
            owner = a if diff[k] > 0 else b
            i[owner] += mass * unit
            wq[(k,) + tuple(owner)] += (1.0 if diff[k] > 0 else -1.0) * mass * unit
    return i, wq


def lattice_norm(w: np.ndarray) -> np.ndarray:
    """Per-cell sum of absolute components: the lattice total-variation density."""
    return np.sum(np.abs(w), axis=0)


def write_plan_jsonl(path, plan: TrafficPlanDiscrete) -> None:
    with open(path, "w") as fh:
        for cells, mass in plan.paths:
            fh.write(json.dumps({"mass": mass, "cells": [list(c) for c in cells]}) + "\n")


def read_plan_jsonl(path, grid: Grid) -> TrafficPlanDiscrete:
    paths = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            rec = json.loads(line)
            paths.append(([tuple(c) for c in rec["cells"]], float(rec["mass"])))
    return TrafficPlanDiscrete(grid, paths, 0.0)
