"""Structured grids on axis-aligned boxes, plus the fields living on them.

Conventions used throughout the package:

* ``dim = N + 1``; axes ``0..N-1`` are horizontal, the last axis is the
  vertical coordinate ``t`` (distance to the bottom boundary);
* nodal values are ndarrays of shape ``node_shape``; on a periodic axis the
  last node is identified with the first and not stored;
* cell quantities (coefficient matrices, gradients, quadrature densities)
  live at cell centers and have shape ``cells``;
* all fields are immutable after construction, so they can be shared freely
  between threads.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GridSpec:
    """Geometry of a tensor-product grid on a box.

    ``extent[a]`` is the side length along axis ``a``, ``cells[a]`` the number
    of equal cells; the spacing ``h[a] = extent[a] / cells[a]`` is always
    derived, never stored.
    """

    dim: int
    extent: tuple
    cells: tuple
    origin: tuple | None = None
    periodic: tuple | None = None

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")
        extent = tuple(float(e) for e in self.extent)
        cells = tuple(int(c) for c in self.cells)
        origin = tuple(float(o) for o in self.origin) if self.origin is not None else (0.0,) * self.dim
        periodic = tuple(bool(p) for p in self.periodic) if self.periodic is not None else (False,) * self.dim
        for name, value in (("extent", extent), ("cells", cells), ("origin", origin), ("periodic", periodic)):
            if len(value) != self.dim:
                raise ValueError(f"{name} must have length dim={self.dim}, got {value}")
        if any(e <= 0.0 for e in extent):
            raise ValueError(f"degenerate box: extent={extent}")
        if any(c < 2 for c in cells):
            raise ValueError(f"need at least 2 cells per axis, got cells={cells}")
        object.__setattr__(self, "extent", extent)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "periodic", periodic)


class Grid:
    """A realized grid: spacings plus node/cell enumeration."""

    def __init__(self, spec: GridSpec):
        self.spec = spec
        self.dim = spec.dim
        self.h = np.array([e / c for e, c in zip(spec.extent, spec.cells)])
        self.cell_shape = spec.cells
        self.node_shape = tuple(c if p else c + 1 for c, p in zip(spec.cells, spec.periodic))
        self.lo = np.array(spec.origin)
        self.hi = self.lo + np.array(spec.extent)

    @property
    def cell_count(self) -> int:
        return int(np.prod(self.cell_shape))

    @property
    def node_count(self) -> int:
        return int(np.prod(self.node_shape))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.h))

    def node_coordinates(self, axis: int) -> np.ndarray:
        return self.lo[axis] + self.h[axis] * np.arange(self.node_shape[axis])

    def cell_centers(self, axis: int) -> np.ndarray:
        return self.lo[axis] + self.h[axis] * (np.arange(self.cell_shape[axis]) + 0.5)

    def cell_edges(self, axis: int) -> np.ndarray:
        return self.lo[axis] + self.h[axis] * np.arange(self.cell_shape[axis] + 1)

    def __eq__(self, other):
        return isinstance(other, Grid) and self.spec == other.spec

    def __repr__(self):
        return f"Grid(cells={self.cell_shape}, extent={self.spec.extent}, periodic={self.spec.periodic})"


def make_grid(spec: GridSpec) -> Grid:
    """Build a grid from a validated spec."""
    return Grid(spec)


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.flags.writeable = False
    return a


class ScalarField:
    """Scalar values attached to grid nodes or cell centers."""

    def __init__(self, grid: Grid, values: np.ndarray, location: str = "node"):
        if location not in ("node", "cell"):
            raise ValueError(f"location must be 'node' or 'cell', got {location!r}")
        expected = grid.node_shape if location == "node" else grid.cell_shape
        values = np.asarray(values, dtype=float)
        if values.shape != expected:
            raise ValueError(f"{location} field shape {values.shape} != expected {expected}")
        self.grid = grid
        self.location = location
        self.values = _freeze(values)


class VectorField:
    """Cell-centered vectors, shape ``cells + (dim,)``."""

    def __init__(self, grid: Grid, values: np.ndarray):
        values = np.asarray(values, dtype=float)
        if values.shape != grid.cell_shape + (grid.dim,):
            raise ValueError(f"vector field shape {values.shape} != {grid.cell_shape + (grid.dim,)}")
        self.grid = grid
        self.values = _freeze(values)


class MatrixField:
    """Cell-centered symmetric matrices, shape ``cells + (dim, dim)``.

    Symmetry is enforced at construction.  Eigenvalue bounds are available via
    :meth:`ellipticity_range`; the lower bound must stay positive for the
    operators built on top of this field to make sense.
    """

    def __init__(self, grid: Grid, values: np.ndarray):
        values = np.asarray(values, dtype=float)
        if values.shape != grid.cell_shape + (grid.dim, grid.dim):
            raise ValueError(f"matrix field shape {values.shape} != {grid.cell_shape + (grid.dim, grid.dim)}")
        asym = np.max(np.abs(values - np.swapaxes(values, -1, -2)))
        scale = max(np.max(np.abs(values)), 1.0)
        if asym > 1e-12 * scale:
            raise ValueError(f"matrix field is not symmetric: max |M - M^T| = {asym:.3e}")
        values = 0.5 * (values + np.swapaxes(values, -1, -2))
        self.grid = grid
        self.values = _freeze(values)

    def ellipticity_range(self) -> tuple:
        """(min, max) eigenvalue over all cells."""
        v = self.values
        if self.grid.dim == 2:
            mean = 0.5 * (v[..., 0, 0] + v[..., 1, 1])
            rad = np.sqrt((0.5 * (v[..., 0, 0] - v[..., 1, 1])) ** 2 + v[..., 0, 1] ** 2)
            return float(np.min(mean - rad)), float(np.max(mean + rad))
        eigs = np.linalg.eigvalsh(v.reshape(-1, self.grid.dim, self.grid.dim))
        return float(eigs.min()), float(eigs.max())

    def require_elliptic(self, lam: float):
        lo, _ = self.ellipticity_range()
        if lo < lam - 1e-12:
            raise ValueError(f"ellipticity violated: min eigenvalue {lo:.6e} < lambda={lam}")


def constant_matrix_field(grid: Grid, matrix) -> MatrixField:
    m = np.asarray(matrix, dtype=float)
    values = np.broadcast_to(m, grid.cell_shape + (grid.dim, grid.dim)).copy()
    return MatrixField(grid, values)


def nodal_extended(grid: Grid, values: np.ndarray) -> np.ndarray:
    """Nodal array extended to shape ``cells + 1`` along every axis.

    On periodic axes the first slice is appended at the end, so plain slicing
    can address all 2^dim corners of every cell.
    """
    out = values
    for a in range(grid.dim):
        if grid.spec.periodic[a]:
            first = np.take(out, [0], axis=a)
            out = np.concatenate([out, first], axis=a)
    return out


def gradient(u: ScalarField) -> VectorField:
    """Cell-centered gradient of a nodal field.

    The Q1 interpolant of ``u`` is differentiated and evaluated at the cell
    center, which for each axis amounts to differencing along that axis and
    averaging along all others.  Exact for fields whose interpolant is affine.
    """
    if u.location != "node":
        raise ValueError("gradient expects a nodal field")
    grid = u.grid
    ext = nodal_extended(grid, u.values)
    comps = []
    for a in range(grid.dim):
        g = np.diff(ext, axis=a) / grid.h[a]
        for b in range(grid.dim):
            if b != a:
                lo = [slice(None)] * grid.dim
                hi = [slice(None)] * grid.dim
                lo[b] = slice(0, -1)
                hi[b] = slice(1, None)
                g = 0.5 * (g[tuple(lo)] + g[tuple(hi)])
        comps.append(g)
    return VectorField(grid, np.stack(comps, axis=-1))


def cell_to_node_average(v: np.ndarray, grid: Grid) -> np.ndarray:
    """Average a cell array onto nodes (wrap on periodic axes, clamp otherwise)."""
    num = np.zeros(grid.node_shape)
    den = np.zeros(grid.node_shape)
    ones = np.ones(grid.cell_shape)
    for corner in itertools.product((0, 1), repeat=grid.dim):
        idx = []
        for a, c in enumerate(corner):
            n = grid.cell_shape[a]
            if grid.spec.periodic[a]:
                idx.append((np.arange(n) + c) % n)
            else:
                idx.append(np.arange(n) + c)
        mesh = np.ix_(*idx)
        np.add.at(num, mesh, v)
        np.add.at(den, mesh, ones)
    return num / den


def _overlap_weights(edges: np.ndarray, lo: float, hi: float) -> np.ndarray:
    left = np.maximum(edges[:-1], lo)
    right = np.minimum(edges[1:], hi)
    return np.clip(right - left, 0.0, None)


def integrate(g, region=None, *, grid: Grid | None = None) -> float:
    """Midpoint-rule integral of a cell-valued field over an axis-aligned box.

    Cells partially covered by ``region`` are weighted by the overlap volume.
    ``region`` is a pair ``(lo, hi)`` of per-axis bounds and must lie inside
    the grid box; ``None`` means the whole box.
    """
    if isinstance(g, ScalarField):
        if g.location != "cell":
            raise ValueError("integrate expects a cell-valued field")
        grid = g.grid
        values = g.values
    else:
        if grid is None:
            raise ValueError("grid required when integrating a raw array")
        values = np.asarray(g, dtype=float)
        if values.shape != grid.cell_shape:
            raise ValueError(f"array shape {values.shape} != cell shape {grid.cell_shape}")
    if region is None:
        return float(values.sum() * grid.cell_volume)
    lo = np.asarray(region[0], dtype=float)
    hi = np.asarray(region[1], dtype=float)
    tol = 1e-12 * float(np.max(grid.hi - grid.lo))
    if np.any(lo < grid.lo - tol) or np.any(hi > grid.hi + tol):
        raise ValueError(f"region ({lo}, {hi}) outside grid box ({grid.lo}, {grid.hi})")
    if np.any(hi <= lo):
        return 0.0
    axis_weights = [_overlap_weights(grid.cell_edges(a), lo[a], hi[a]) for a in range(grid.dim)]
    w = axis_weights[0]
    for a in range(1, grid.dim):
        w = np.multiply.outer(w, axis_weights[a])
    return float(np.sum(values * w))


def interp_nodal(grid: Grid, values: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of a nodal array at arbitrary points.

    Periodic axes wrap; on non-periodic axes the points are clamped to the
    box.  ``points`` has shape ``(..., dim)``.
    """
    points = np.asarray(points, dtype=float)
    frac = []
    base = []
    for a in range(grid.dim):
        s = (points[..., a] - grid.lo[a]) / grid.h[a]
        n = grid.cell_shape[a]
        if grid.spec.periodic[a]:
            s = np.mod(s, n)
        else:
            s = np.clip(s, 0.0, n)
        i0 = np.minimum(np.floor(s).astype(np.intp), n - 1)
        base.append(i0)
        frac.append(s - i0)
    out = np.zeros(points.shape[:-1])
    for corner in itertools.product((0, 1), repeat=grid.dim):
        w = np.ones(points.shape[:-1])
        idx = []
        for a, c in enumerate(corner):
            w = w * (frac[a] if c else 1.0 - frac[a])
            ia = base[a] + c
            if grid.spec.periodic[a]:
                ia = ia % grid.cell_shape[a]
            idx.append(ia)
        out += w * values[tuple(idx)]
    return out
