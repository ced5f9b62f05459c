"""Uniform cell-centred grids on the unit box (0, 1)^d.

Scalar fields are numpy arrays of shape ``grid.shape``; vector fields have
shape ``(d,) + grid.shape`` with component ``k`` along axis ``k``.

The gradient is a forward difference.  Component ``k`` at cell ``c`` is the
difference across the face shared by ``c`` and its upper neighbour along
axis ``k``, so it is naturally a flux through that face.  On the last slice
along each axis that face is the domain boundary and the component is zero
(no-flux closure).  The divergence is built as the exact negative transpose
of the gradient, so that ``<grad u, w> = -<u, div w>`` holds to roundoff.
"""

from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "Grid",
    "gradient",
    "divergence",
    "integrate",
    "weighted_inner",
    "vector_inner",
    "pointwise_norm",
    "write_field_csv",
    "read_field_csv",
]


@dataclass(frozen=True)
class Grid:
    """Uniform grid of ``n`` cells per axis on (0, 1)^dim."""

    dim: int
    n: int

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if int(self.n) != self.n or self.n < 2:
            raise ValueError(f"n must be an integer >= 2, got {self.n}")

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def cell_volume(self) -> float:
        return self.h**self.dim

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def vector_shape(self) -> tuple[int, ...]:
        return (self.dim,) + self.shape

    @property
    def size(self) -> int:
        return self.n**self.dim

    @property
    def diameter(self) -> float:
        return float(np.sqrt(self.dim))

    def faces(self) -> np.ndarray:
        """The n + 1 face coordinates along one axis."""
        return np.arange(self.n + 1) / self.n

    def centers_1d(self) -> np.ndarray:
        return (np.arange(self.n) + 0.5) / self.n

    def centers(self) -> np.ndarray:
        """Cell-centre coordinates, shape ``(dim,) + shape``."""
        c = self.centers_1d()
        return np.stack(np.meshgrid(*([c] * self.dim), indexing="ij"))

    def zeros(self) -> np.ndarray:
        return np.zeros(self.shape)

    def zeros_vector(self) -> np.ndarray:
        return np.zeros(self.vector_shape)

    def check_scalar(self, s, name="field") -> np.ndarray:
        s = np.asarray(s, dtype=float)
        if s.shape != self.shape:
            raise ValueError(f"{name} has shape {s.shape}, expected {self.shape}")
        if not np.all(np.isfinite(s)):
            raise ValueError(f"{name} has non-finite values")
        return s

    def check_vector(self, w, name="vector field") -> np.ndarray:
        w = np.asarray(w, dtype=float)
        if w.shape != self.vector_shape:
            raise ValueError(f"{name} has shape {w.shape}, expected {self.vector_shape}")
        if not np.all(np.isfinite(w)):
            raise ValueError(f"{name} has non-finite values")
        return w


def _last(axis: int, dim: int) -> tuple:
    idx = [slice(None)] * dim
    idx[axis] = -1
    return tuple(idx)


def gradient(grid: Grid, u: np.ndarray) -> np.ndarray:
    """Forward-difference gradient with zero flux through the upper faces."""
    out = np.zeros(grid.vector_shape)
    for k in range(grid.dim):
        d = np.diff(u, axis=k) / grid.h
        idx = [slice(None)] * grid.dim
        idx[k] = slice(0, grid.n - 1)
        out[k][tuple(idx)] = d
    return out


def divergence(grid: Grid, w: np.ndarray) -> np.ndarray:
    """Negative adjoint of :func:`gradient` under the cell-volume inner product.

    Only the face fluxes that :func:`gradient` can produce are seen; values of
    component ``k`` on the last slice along axis ``k`` are ignored.
    """
    out = np.zeros(grid.shape)
    for k in range(grid.dim):
        q = np.array(w[k], dtype=float, copy=True)
        q[_last(k, grid.dim)] = 0.0
        out += np.diff(q, axis=k, prepend=0.0) / grid.h
    return out


def integrate(grid: Grid, s: np.ndarray) -> float:
    """Midpoint quadrature over the unit box."""
    return float(np.sum(s) * grid.cell_volume)


def weighted_inner(grid: Grid, u, v, weight=1.0) -> float:
    return float(np.sum(np.asarray(u) * np.asarray(v) * weight) * grid.cell_volume)


def vector_inner(grid: Grid, p: np.ndarray, q: np.ndarray) -> float:
    return float(np.sum(p * q) * grid.cell_volume)


def pointwise_norm(w: np.ndarray) -> np.ndarray:
    """Per-cell Euclidean norm of a vector field."""
    return np.sqrt(np.sum(w * w, axis=0))


_HEADER = re.compile(r"#\s*grid\s+d=(\d+)\s+n=(\d+)")


def write_field_csv(path, grid: Grid, field: np.ndarray) -> None:
    """Dump a scalar or vector field, one row per cell in row-major order."""
    field = np.asarray(field, dtype=float)
    vector = field.shape == grid.vector_shape and field.shape != grid.shape
    buf = io.StringIO()
    buf.write(f"# grid d={grid.dim} n={grid.n}\n")
    writer = csv.writer(buf, lineterminator="\n")
    for idx in np.ndindex(*grid.shape):
        if vector:
            values = [repr(float(field[(k,) + idx])) for k in range(grid.dim)]
        else:
            values = [repr(float(field[idx]))]
        writer.writerow(list(idx) + values)
    Path(path).write_text(buf.getvalue())


def read_field_csv(path, vector: bool | None = None) -> tuple[Grid, np.ndarray]:
    """Inverse of :func:`write_field_csv`.

    A 1-D vector field has a single value column, like a scalar field; pass
    ``vector=True`` to get it back with shape ``(1, n)``.
    """
    lines = Path(path).read_text().splitlines()
    m = _HEADER.match(lines[0])
    if m is None:
        raise ValueError(f"{path}: missing '# grid d=<d> n=<n>' header")
    grid = Grid(int(m.group(1)), int(m.group(2)))
    rows = [list(map(float, r)) for r in csv.reader(lines[1:]) if r]
    if len(rows) != grid.size:
        raise ValueError(f"{path}: expected {grid.size} rows, got {len(rows)}")
    data = np.array(rows)
    values = data[:, grid.dim:]
    if vector is None:
        vector = values.shape[1] > 1
    if not vector:
        if values.shape[1] != 1:
            raise ValueError(f"{path}: expected one value column, got {values.shape[1]}")
        return grid, values[:, 0].reshape(grid.shape)
    return grid, np.stack([values[:, k].reshape(grid.shape) for k in range(values.shape[1])])
