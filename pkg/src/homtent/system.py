"""Q1 Galerkin assembly on structured grids and the Jacobi-preconditioned CG
solver shared by the cell problems and the strip solves.

The stiffness operator is stored stencil-wise: one weight per node and per
offset in {-1,0,1}^dim, which keeps matrix application a pure streaming
operation (see ``_kernels``).  The coefficient matrix is constant per cell
(sampled at the cell center); the shape-function integrals themselves are
exact, so affine fields are reproduced exactly and no hourglass modes appear.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import SolverError
from .grid import Grid, MatrixField

# 1-D ingredients on [0,1]: values V_0 = 1-s, V_1 = s and derivatives D_c.
_M1 = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0  # int V_a V_b
_K1 = np.array([[1.0, -1.0], [-1.0, 1.0]])      # int D_a D_b
_G1 = np.array([[-0.5, 0.5], [-0.5, 0.5]])      # int V_a D_b


def element_tensors(dim: int):
    """Reference integrals E[a, b, i, j] = int_[0,1]^dim d_a N_i d_b N_j.

    The physical integral over a cell with spacings h is
    ``vol / (h[a] h[b]) * E[a, b]``.
    """
    corners = list(itertools.product((0, 1), repeat=dim))
    n = len(corners)
    E = np.zeros((dim, dim, n, n))
    for a in range(dim):
        for b in range(dim):
            for i, ci in enumerate(corners):
                for j, cj in enumerate(corners):
                    v = 1.0
                    for ax in range(dim):
                        bi, bj = ci[ax], cj[ax]
                        if ax == a and ax == b:
                            v *= _K1[bi, bj]
                        elif ax == a:
                            v *= _G1[bj, bi]
                        elif ax == b:
                            v *= _G1[bi, bj]
                        else:
                            v *= _M1[bi, bj]
                    E[a, b, i, j] = v
    return corners, E


_OFFSETS_CACHE = {}


def _offset_index(offset, dim):
    idx = 0
    for o in offset:
        idx = idx * 3 + (o + 1)
    return idx


class StencilOperator:
    """Symmetric operator y[n] = sum_o w[o, n] x[n + o] on grid nodes."""

    def __init__(self, grid: Grid, weights: np.ndarray):
        self.grid = grid
        self.wrap = grid.spec.periodic
        self.weights = weights  # shape (3^dim,) + node_shape

    def apply(self, x: np.ndarray, out=None) -> np.ndarray:
        return _kernels.stencil_apply(self.weights, x, self.wrap, out)

    def apply_dot(self, x: np.ndarray, out: np.ndarray) -> float:
        """out = K x and return x . out."""
        return _kernels.stencil_apply_dot(self.weights, x, self.wrap, out)

    def diagonal(self) -> np.ndarray:
        return self.weights[_offset_index((0,) * self.grid.dim, self.grid.dim)]

    def energy(self, u: np.ndarray) -> float:
        """Galerkin energy u^T K u = int A grad(u).grad(u) for nodal u."""
        return float(_kernels.dot(u, self.apply(u)))


def assemble_stiffness(A: MatrixField) -> StencilOperator:
    """Stencil weights of the Q1 stiffness operator for cell-constant A."""
    grid = A.grid
    dim = grid.dim
    key = dim
    if key not in _OFFSETS_CACHE:
        _OFFSETS_CACHE[key] = element_tensors(dim)
    corners, E = _OFFSETS_CACHE[key]
    h = grid.h
    vol = grid.cell_volume
    cells = grid.cell_shape

    ext_shape = tuple(c + 1 for c in cells)
    W = np.zeros((3**dim,) + ext_shape)

    # Per corner pair, the coefficient combination is a fixed linear form in
    # the (symmetric) matrix entries; accumulate it cell-block-wise.
    for i, ci in enumerate(corners):
        for j, cj in enumerate(corners):
            val = np.zeros(cells)
            for a in range(dim):
                for b in range(a, dim):
                    coef = E[a, b, i, j] + (E[b, a, i, j] if b > a else 0.0)
                    coef *= vol / (h[a] * h[b])
                    if coef != 0.0:
                        val += coef * A.values[..., a, b]
            offset = tuple(cj[ax] - ci[ax] for ax in range(dim))
            sl = tuple(slice(ci[ax], ci[ax] + cells[ax]) for ax in range(dim))
            W[_offset_index(offset, dim)][sl] += val

    # Fold the duplicated seam node back onto node 0 for periodic axes.
    for ax in range(dim):
        if grid.spec.periodic[ax]:
            first = [slice(None)] * (dim + 1)
            last = [slice(None)] * (dim + 1)
            first[1 + ax] = slice(0, 1)
            last[1 + ax] = slice(ext_shape[ax] - 1, ext_shape[ax])
            W[tuple(first)] += W[tuple(last)]
        keep = [slice(None)] * (dim + 1)
        keep[1 + ax] = slice(0, grid.node_shape[ax])
        W = W[tuple(keep)]
    return StencilOperator(grid, np.ascontiguousarray(W))


def divergence_rhs(grid: Grid, flux: np.ndarray) -> np.ndarray:
    """Nodal load b_a = -int flux . grad(N_a) for a cell-constant vector flux.

    This is the weak form of a right-hand side div(flux).
    """
    dim = grid.dim
    if flux.shape != grid.cell_shape + (dim,):
        raise ValueError(f"flux shape {flux.shape} != {grid.cell_shape + (dim,)}")
    vol = grid.cell_volume
    ext_shape = tuple(c + 1 for c in grid.cell_shape)
    b = np.zeros(ext_shape)
    # int_cell d_a N_c = vol/h_a * sign(corner bit a) * 2^(1-dim)
    for corner in itertools.product((0, 1), repeat=dim):
        contrib = np.zeros(grid.cell_shape)
        for a in range(dim):
            sign = 1.0 if corner[a] else -1.0
            contrib += flux[..., a] * (sign * vol / grid.h[a] * 0.5 ** (dim - 1))
        sl = tuple(slice(corner[ax], corner[ax] + grid.cell_shape[ax]) for ax in range(dim))
        b[sl] -= contrib
    for ax in range(dim):
        if grid.spec.periodic[ax]:
            first = [slice(None)] * dim
            last = [slice(None)] * dim
            first[ax] = slice(0, 1)
            last[ax] = slice(ext_shape[ax] - 1, ext_shape[ax])
            b[tuple(first)] += b[tuple(last)]
        keep = [slice(None)] * dim
        keep[ax] = slice(0, grid.node_shape[ax])
        b = b[tuple(keep)]
    return np.ascontiguousarray(b)


@dataclass
class PCGResult:
    x: np.ndarray
    relres: float
    iterations: int
    converged: bool


def pcg(
    apply_op,
    b: np.ndarray,
    x0: np.ndarray,
    inv_diag: np.ndarray,
    tol: float = 1e-10,
    maxiter: int = 10000,
    project_mean: bool = False,
    mean_weights: np.ndarray | None = None,
) -> PCGResult:
    """Jacobi-preconditioned conjugate gradients.

    ``apply_op(x, out)`` must write K x into ``out`` and return x . Kx.
    Convergence is declared at ||r|| <= tol * ||b||.  For singular systems on
    the torus (``project_mean=True``) the preconditioned residual is projected
    to zero weighted mean each iteration, which pins the constant null space.
    """
    x = np.array(x0, dtype=float)
    bnorm = np.sqrt(_kernels.dot(b, b))
    if bnorm == 0.0:
        return PCGResult(x * 0.0, 0.0, 0, True)

    def project(v):
        if mean_weights is None:
            v -= v.mean()
        else:
            v -= _kernels.dot(v, mean_weights) / mean_weights.sum()

    q = np.empty_like(b)
    if np.any(x != 0.0):
        apply_op(x, q)
        r = b - q
    else:
        r = b.copy()
    target = tol * bnorm
    it = 0

    if not project_mean:
        # fused lane: z is never materialized
        p = np.zeros_like(b)
        _kernels.xpby_precond(p, r, inv_diag, 0.0)
        rho = _kernels.dot(r, p)
        rr = _kernels.dot(r, r)
        while np.sqrt(rr) > target and it < maxiter:
            pq = apply_op(p, q)
            if pq <= 0.0 or not np.isfinite(pq):
                raise SolverError(f"CG breakdown at iteration {it}: p.Kp = {pq}", iterations=it, residual=np.sqrt(rr) / bnorm)
            alpha = rho / pq
            rr, rho_new = _kernels.axpy_pair_rr_rho(x, p, r, q, inv_diag, alpha)
            if not np.isfinite(rr):
                raise SolverError(f"NaN residual at iteration {it}", iterations=it, residual=float("nan"))
            _kernels.xpby_precond(p, r, inv_diag, rho_new / rho)
            rho = rho_new
            it += 1
        return PCGResult(x, float(np.sqrt(rr) / bnorm), it, float(np.sqrt(rr) / bnorm) <= tol)

    z = np.empty_like(b)
    rho = _kernels.jacobi_dot(z, r, inv_diag)
    project(z)
    rho = _kernels.dot(r, z)
    p = z.copy()
    rr = _kernels.dot(r, r)
    while np.sqrt(rr) > target and it < maxiter:
        pq = apply_op(p, q)
        if pq <= 0.0 or not np.isfinite(pq):
            raise SolverError(f"CG breakdown at iteration {it}: p.Kp = {pq}", iterations=it, residual=np.sqrt(rr) / bnorm)
        alpha = rho / pq
        rr = _kernels.axpy_pair_rr(x, p, r, q, alpha)
        if not np.isfinite(rr):
            raise SolverError(f"NaN residual at iteration {it}", iterations=it, residual=float("nan"))
        rho_new = _kernels.jacobi_dot(z, r, inv_diag)
        project(z)
        rho_new = _kernels.dot(r, z)
        _kernels.xpby(p, z, rho_new / rho)
        rho = rho_new
        it += 1
    relres = float(np.sqrt(rr) / bnorm)
    project(x)
    return PCGResult(x, relres, it, relres <= tol)
