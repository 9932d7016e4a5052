"""Periodic cell problems on the unit cell Q = [0,1)^dim.

For a periodic coefficient field A this module computes, per direction i:

* the corrector ``phi^i``, the zero-mean periodic solution of
  ``-div(A (grad phi^i + e_i)) = 0``;
* the homogenized matrix column ``Abar e_i = mean_Q A (grad phi^i + e_i)``;
* the mean-free flux ``q^i = A (grad phi^i + e_i) - Abar e_i``;
* the flux corrector ``sigma^i``, the skew matrix potential with
  ``div sigma^i = q^i`` (divergence over the last index), whose independent
  entries ``sigma^{ijk}``, j < k, solve ``-lap sigma^{ijk} = d_j q^{ik} - d_k q^{ij}``.

Index convention, fixed once: entries are stored for j < k, 0-based axes, and
``(div sigma^i)^j = sum_k d_k sigma^{ijk}`` with ``sigma^{ikj} = -sigma^{ijk}``.
The convention is pinned numerically by the ``div sigma = q`` residual test.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import SolverError
from .grid import Grid, GridSpec, MatrixField, ScalarField, VectorField, gradient, make_grid
from .system import assemble_stiffness, divergence_rhs, pcg


class PeriodicTemplate:
    """A periodic coefficient pattern: per-cell symmetric matrices on Q."""

    def __init__(self, label: str, values: np.ndarray, lam: float | None = None):
        values = np.asarray(values, dtype=float)
        if values.ndim < 3 or values.shape[-1] != values.shape[-2]:
            raise ValueError("template values must have shape cells + (dim, dim)")
        dim = values.shape[-1]
        if values.ndim - 2 != dim:
            raise ValueError(f"template dimension mismatch: {values.ndim - 2} axes for {dim}x{dim} matrices")
        self.label = label
        self.dim = dim
        self.shape = values.shape[:-2]
        spec = GridSpec(dim, extent=(1.0,) * dim, cells=self.shape, periodic=(True,) * dim)
        self.field = MatrixField(make_grid(spec), values)
        if lam is not None:
            self.field.require_elliptic(lam)

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Piecewise-constant evaluation at unit-cell points (..., dim)."""
        points = np.asarray(points, dtype=float)
        idx = []
        for a in range(self.dim):
            m = self.shape[a]
            ia = np.floor(np.mod(points[..., a], 1.0) * m).astype(np.intp)
            idx.append(np.clip(ia, 0, m - 1))
        return self.field.values[tuple(idx)]

    def sample(self, cells: int) -> MatrixField:
        """Resample onto a uniform periodic grid with ``cells`` per axis."""
        spec = GridSpec(self.dim, extent=(1.0,) * self.dim, cells=(cells,) * self.dim, periodic=(True,) * self.dim)
        grid = make_grid(spec)
        axes = np.meshgrid(*[grid.cell_centers(a) for a in range(self.dim)], indexing="ij")
        pts = np.stack(axes, axis=-1)
        return MatrixField(grid, self.evaluate(pts))

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(f"dim={self.dim};shape={self.shape};".encode())
        h.update(np.ascontiguousarray(self.field.values).tobytes())
        return h.hexdigest()[:16]

    def is_constant(self) -> bool:
        v = self.field.values.reshape(-1, self.dim, self.dim)
        return bool(np.all(v == v[0]))


def identity_template(dim: int = 2, label: str = "identity") -> PeriodicTemplate:
    values = np.broadcast_to(np.eye(dim), (2,) * dim + (dim, dim)).copy()
    return PeriodicTemplate(label, values)


def laminate_template(values, axis: int = 0, dim: int = 2, label: str = "laminate") -> PeriodicTemplate:
    """Scalar coefficient a(y_axis), piecewise constant on equal slabs."""
    a = np.asarray(values, dtype=float)
    m = max(len(a), 2)
    prof = np.resize(a, m) if len(a) >= 2 else np.full(m, a[0])
    shape = tuple(m if ax == axis else 2 for ax in range(dim))
    vals = np.zeros(shape + (dim, dim))
    idx = [None] * dim
    sl = [np.newaxis] * dim
    sl[axis] = slice(None)
    scal = prof[tuple(sl)]
    for d in range(dim):
        vals[..., d, d] = scal
    return PeriodicTemplate(label, vals)


def checkerboard_template(values, blocks: int = 2, dim: int = 2, label: str = "checkerboard") -> PeriodicTemplate:
    """Scalar coefficient alternating by parity of the block index sum."""
    lo, hi = float(values[0]), float(values[1])
    shape = (blocks,) * dim
    idxsum = sum(np.meshgrid(*[np.arange(blocks)] * dim, indexing="ij"))
    scal = np.where(idxsum % 2 == 0, lo, hi)
    vals = np.zeros(shape + (dim, dim))
    for d in range(dim):
        vals[..., d, d] = scal
    return PeriodicTemplate(label, vals)


def random_checkerboard_template(blocks: int, lam: float, seed: int, dim: int = 2, label: str | None = None) -> PeriodicTemplate:
    """Seeded random scalar blocks drawn uniformly from [lam, 1]."""
    rng = np.random.default_rng(seed)
    scal = rng.uniform(lam, 1.0, size=(blocks,) * dim)
    vals = np.zeros((blocks,) * dim + (dim, dim))
    for d in range(dim):
        vals[..., d, d] = scal
    return PeriodicTemplate(label or f"rand{seed}", vals)


def explicit_template(values, label: str = "explicit") -> PeriodicTemplate:
    return PeriodicTemplate(label, np.asarray(values, dtype=float))


def smooth_trig_template(cells: int = 128, contrast: float = 0.6, dim: int = 2, label: str = "trig") -> PeriodicTemplate:
    """a(y) = 1 - contrast * prod_a sin^2(pi y_a), sampled at cell centers.

    Smooth in Q, so the discrete flux-corrector identity converges at the
    full second-order rate (unlike piecewise-constant patterns with corner
    singularities).
    """
    axes = [np.pi * (np.arange(cells) + 0.5) / cells for _ in range(dim)]
    scal = np.ones((cells,) * dim)
    for a, ax in enumerate(axes):
        sl = [np.newaxis] * dim
        sl[a] = slice(None)
        scal = scal * np.sin(ax)[tuple(sl)] ** 2
    scal = 1.0 - contrast * scal
    vals = np.zeros((cells,) * dim + (dim, dim))
    for d in range(dim):
        vals[..., d, d] = scal
    return PeriodicTemplate(label, vals)


@dataclass
class CorrectorSet:
    """Correctors, fluxes and homogenized matrix of one periodic template."""

    label: str
    resolution: int
    grid: Grid
    phi: list
    sigma: list          # per direction i: dict {(j, k): ScalarField}, j < k
    q: list
    Abar: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.grid.dim

    def sigma_entry(self, i: int, j: int, k: int) -> np.ndarray:
        """sigma^{ijk} nodal values with the skew sign convention."""
        if j == k:
            return np.zeros(self.grid.node_shape)
        if j < k:
            return self.sigma[i][(j, k)].values
        return -self.sigma[i][(k, j)].values

    def sup_phi_sigma(self, i: int) -> float:
        """sup_Q (|phi^i| + |sigma^i|_F), the constant of the corrector bound."""
        s2 = np.zeros(self.grid.node_shape)
        for (j, k), f in self.sigma[i].items():
            s2 += 2.0 * f.values**2
        return float(np.max(np.abs(self.phi[i].values) + np.sqrt(s2)))


def _mean_zero(values: np.ndarray) -> np.ndarray:
    return values - values.mean()


def solve_corrector(template: PeriodicTemplate, i: int, cells: int = 128, tol: float = 1e-10, _ctx=None) -> ScalarField:
    """Solve the cell problem for direction i on a ``cells``^dim grid."""
    if _ctx is None:
        A = template.sample(cells)
        K = assemble_stiffness(A)
    else:
        A, K = _ctx
    grid = A.grid
    b = divergence_rhs(grid, A.values[..., :, i])
    inv_diag = 1.0 / K.diagonal()
    res = pcg(K.apply_dot, b, np.zeros(grid.node_shape), inv_diag, tol=tol, maxiter=20 * cells, project_mean=True)
    if not res.converged:
        raise SolverError(
            f"corrector CG for direction {i} did not converge: relres {res.relres:.3e} after {res.iterations} iterations",
            iterations=res.iterations,
            residual=res.relres,
        )
    return ScalarField(grid, _mean_zero(res.x))


def homogenized_matrix(A: MatrixField, phis: list) -> tuple:
    """Assemble Abar column-by-column; returns (symmetrized Abar, asymmetry)."""
    dim = A.grid.dim
    Abar = np.zeros((dim, dim))
    for i in range(dim):
        g = gradient(phis[i]).values.copy()
        g[..., i] += 1.0
        flux_i = np.einsum("...ab,...b->...a", A.values, g)
        Abar[:, i] = flux_i.reshape(-1, dim).mean(axis=0)
    asym = float(np.max(np.abs(Abar - Abar.T)))
    return 0.5 * (Abar + Abar.T), asym


def flux(A: MatrixField, phis: list, Abar: np.ndarray, i: int) -> VectorField:
    """q^i = A (grad phi^i + e_i) - Abar e_i, cell-centered."""
    g = gradient(phis[i]).values.copy()
    g[..., i] += 1.0
    qv = np.einsum("...ab,...b->...a", A.values, g) - Abar[:, i]
    return VectorField(A.grid, qv)


def solve_flux_corrector(q_i: VectorField, tol: float = 1e-10, _laplace=None) -> dict:
    """Entries sigma^{ijk}, j < k, of the flux corrector for one direction.

    The mean of q is removed first (solvability on the torus).
    """
    grid = q_i.grid
    dim = grid.dim
    qv = q_i.values - q_i.values.reshape(-1, dim).mean(axis=0)
    if _laplace is None:
        from .grid import constant_matrix_field

        _laplace = assemble_stiffness(constant_matrix_field(grid, np.eye(dim)))
    inv_diag = 1.0 / _laplace.diagonal()
    out = {}
    for j in range(dim):
        for k in range(j + 1, dim):
            f = np.zeros(grid.cell_shape + (dim,))
            f[..., j] = qv[..., k]
            f[..., k] = -qv[..., j]
            b = divergence_rhs(grid, f)
            res = pcg(
                _laplace.apply_dot, b, np.zeros(grid.node_shape), inv_diag,
                tol=tol, maxiter=20 * max(grid.cell_shape), project_mean=True,
            )
            if not res.converged:
                raise SolverError(
                    f"flux corrector CG for entry ({j},{k}) did not converge: relres {res.relres:.3e}",
                    iterations=res.iterations,
                    residual=res.relres,
                )
            out[(j, k)] = ScalarField(grid, _mean_zero(res.x))
    return out


def divergence_of_sigma(cs: CorrectorSet, i: int) -> np.ndarray:
    """(div sigma^i)^j = sum_k d_k sigma^{ijk}, cell-centered."""
    grid = cs.grid
    dim = grid.dim
    out = np.zeros(grid.cell_shape + (dim,))
    grads = {jk: gradient(f).values for jk, f in cs.sigma[i].items()}
    for j in range(dim):
        for k in range(dim):
            if k == j:
                continue
            if j < k:
                out[..., j] += grads[(j, k)][..., k]
            else:
                out[..., j] -= grads[(k, j)][..., k]
    return out


def corrector_bounds(cs: CorrectorSet) -> dict:
    """Discrete sup and energy norms entering the two-scale error budget."""
    dim = cs.dim
    out = {
        "phi_sup": [], "sigma_sup": [], "phi_sigma_sup": [],
        "grad_phi_sup": [], "grad_phi_energy": [], "grad_sigma_energy": [],
    }
    for i in range(dim):
        phi = cs.phi[i].values
        g = gradient(cs.phi[i]).values
        s2 = np.zeros(cs.grid.node_shape)
        gs_energy = 0.0
        for (j, k), f in cs.sigma[i].items():
            s2 += 2.0 * f.values**2
            gs_energy += 2.0 * float(np.mean(np.sum(gradient(f).values ** 2, axis=-1)))
        out["phi_sup"].append(float(np.max(np.abs(phi))))
        out["sigma_sup"].append(float(np.max(np.sqrt(s2))))
        out["phi_sigma_sup"].append(cs.sup_phi_sigma(i))
        out["grad_phi_sup"].append(float(np.max(np.abs(g))))
        out["grad_phi_energy"].append(float(np.mean(np.sum(g**2, axis=-1))))
        out["grad_sigma_energy"].append(gs_energy)
    return out


def solve_cell_problems(template: PeriodicTemplate, cells: int = 128, tol: float = 1e-10) -> CorrectorSet:
    """Run the full cell pipeline for one template at one resolution."""
    A = template.sample(cells)
    K = assemble_stiffness(A)
    grid = A.grid
    dim = grid.dim
    ctx = (A, K)

    phis = [solve_corrector(template, i, cells, tol, _ctx=ctx) for i in range(dim)]
    Abar, asym = homogenized_matrix(A, phis)
    qs = [flux(A, phis, Abar, i) for i in range(dim)]

    from .grid import constant_matrix_field

    laplace = assemble_stiffness(constant_matrix_field(grid, np.eye(dim)))
    sigmas = [solve_flux_corrector(qs[i], tol, _laplace=laplace) for i in range(dim)]

    cs = CorrectorSet(template.label, cells, grid, phis, sigmas, qs, Abar)
    diag = corrector_bounds(cs)
    diag["abar_asymmetry"] = asym
    diag["phi_mean"] = [float(p.values.mean()) for p in phis]
    diag["q_mean"] = [qs[i].values.reshape(-1, dim).mean(axis=0).tolist() for i in range(dim)]
    div_relres = []
    for i in range(dim):
        dv = divergence_of_sigma(cs, i)
        qm = qs[i].values - qs[i].values.reshape(-1, dim).mean(axis=0)
        num = np.sqrt(np.mean(np.sum((dv - qm) ** 2, axis=-1)))
        den = np.sqrt(np.mean(np.sum(qm**2, axis=-1)))
        # absolute residual when the flux itself vanishes (e.g. i with phi = 0)
        div_relres.append(float(num / den) if den > 1e-8 else float(num))
    diag["div_sigma_q_relres"] = div_relres
    cs.diagnostics = diag
    return cs


def solve_periodic(A: MatrixField, rhs_flux: VectorField, tol: float = 1e-10) -> ScalarField:
    """Zero-mean periodic solution of -div(A grad u) = div(rhs_flux) on Q."""
    K = assemble_stiffness(A)
    b = divergence_rhs(A.grid, rhs_flux.values)
    res = pcg(
        K.apply_dot, b, np.zeros(A.grid.node_shape), 1.0 / K.diagonal(),
        tol=tol, maxiter=40 * max(A.grid.cell_shape), project_mean=True,
    )
    if not res.converged:
        raise SolverError(f"periodic solve did not converge: relres {res.relres:.3e}", res.iterations, res.relres)
    return ScalarField(A.grid, _mean_zero(res.x))


def save_corrector_set(cs: CorrectorSet, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    meta = {
        "label": cs.label,
        "resolution": cs.resolution,
        "dim": cs.dim,
        "Abar": cs.Abar.tolist(),
        "diagnostics": cs.diagnostics,
    }
    (path / "Abar.json").write_text(json.dumps(meta, indent=2))
    for i in range(cs.dim):
        np.save(path / f"phi_{i}.npy", cs.phi[i].values)
        np.save(path / f"q_{i}.npy", cs.q[i].values)
        for (j, k), f in cs.sigma[i].items():
            np.save(path / f"sigma_{i}{j}{k}.npy", f.values)


def load_corrector_set(path) -> CorrectorSet:
    path = Path(path)
    meta = json.loads((path / "Abar.json").read_text())
    dim = meta["dim"]
    cells = meta["resolution"]
    spec = GridSpec(dim, extent=(1.0,) * dim, cells=(cells,) * dim, periodic=(True,) * dim)
    grid = make_grid(spec)
    phi = [ScalarField(grid, np.load(path / f"phi_{i}.npy")) for i in range(dim)]
    q = [VectorField(grid, np.load(path / f"q_{i}.npy")) for i in range(dim)]
    sigma = []
    for i in range(dim):
        entries = {}
        for j in range(dim):
            for k in range(j + 1, dim):
                entries[(j, k)] = ScalarField(grid, np.load(path / f"sigma_{i}{j}{k}.npy"))
        sigma.append(entries)
    return CorrectorSet(meta["label"], cells, grid, phi, sigma, q, np.array(meta["Abar"]), meta["diagnostics"])
