import numpy as np
import pytest

from homtent.errors import SolverError
from homtent.grid import GridSpec, MatrixField, ScalarField, constant_matrix_field, gradient, make_grid
from homtent.oracle1d import Profile1D, exact_u_eps
from homtent.solve import (BoundaryData, assemble_system, dirichlet_solve,
                           max_principle_violation, solve_error_equation)


def _strip(n, t_top=2.0, periodic=True):
    return make_grid(GridSpec(2, extent=(1.0, t_top), cells=(n, 2 * n),
                              periodic=(periodic, False)))


def test_constant_data_reproduced_exactly():
    g = _strip(16)
    A = constant_matrix_field(g, np.eye(2))
    rep = dirichlet_solve(A, BoundaryData(f=lambda x: 3.0 + 0.0 * x))
    assert np.max(np.abs(rep.u.values - 3.0)) < 1e-9


def test_affine_solution_with_dirichlet_sides():
    g = make_grid(GridSpec(2, extent=(1.0, 2.0), cells=(12, 24)))
    A = constant_matrix_field(g, np.eye(2))
    bc = BoundaryData(
        f=lambda x: x,
        lateral=("dirichlet", lambda t: 0.0 * t, lambda t: 1.0 + 0.0 * t),
        top=("dirichlet_exact", lambda x: x),
    )
    rep = dirichlet_solve(A, bc)
    xs = g.node_coordinates(0)[:, None]
    assert np.max(np.abs(rep.u.values - xs)) < 1e-9


def test_manufactured_solution_rate():
    errs = []
    for n in (32, 64, 128):
        g = _strip(n)
        A = constant_matrix_field(g, np.eye(2))
        rep = dirichlet_solve(A, BoundaryData(f=lambda x: np.cos(2 * np.pi * x)))
        xs = g.node_coordinates(0)[:, None]
        ts = g.node_coordinates(1)[None, :]
        exact = np.cos(2 * np.pi * xs) * np.exp(-2 * np.pi * ts)
        errs.append(np.sqrt(np.mean((rep.u.values - exact) ** 2)))
    rates = [np.log2(errs[i] / errs[i + 1]) for i in range(2)]
    assert min(rates) > 1.8


def test_max_principle_relaxed():
    g = _strip(64)
    xc = g.cell_centers(0)[:, None]
    tc = g.cell_centers(1)[None, :]
    a = np.where(np.mod(xc * 8, 1.0) < 0.5, 1.0, 3.0) * np.ones_like(tc)
    M = np.zeros(g.cell_shape + (2, 2))
    M[..., 0, 0] = a
    M[..., 1, 1] = a
    rep = dirichlet_solve(MatrixField(g, M), BoundaryData(f=lambda x: np.cos(2 * np.pi * x)))
    f = np.cos(2 * np.pi * g.node_coordinates(0))
    kappa = max_principle_violation(rep.u, f)
    assert kappa <= 1e-2 * (f.max() - f.min())


def test_energy_minimality():
    g = _strip(24)
    A = constant_matrix_field(g, [[1.0, 0.3], [0.3, 2.0]])
    bc = BoundaryData(f=lambda x: np.cos(2 * np.pi * x))
    rep = dirichlet_solve(A, bc, tol=1e-12)
    sys = assemble_system(A, g, bc)
    rng = np.random.default_rng(17)
    for _ in range(10):
        v = np.zeros(g.node_shape)
        v[sys.free] = rng.standard_normal(sys.free.sum()) * 0.1
        assert sys.K.energy(rep.u.values) <= sys.K.energy(rep.u.values + v) + 1e-9


def test_galerkin_orthogonality():
    g = _strip(24)
    A = constant_matrix_field(g, np.eye(2))
    bc = BoundaryData(f=lambda x: np.cos(2 * np.pi * x))
    rep = dirichlet_solve(A, bc, tol=1e-12)
    sys = assemble_system(A, g, bc)
    r = sys.K.apply(rep.u.values)
    rng = np.random.default_rng(23)
    scale = np.sqrt(sys.K.energy(rep.u.values))
    for _ in range(10):
        v = np.zeros(g.node_shape)
        v[sys.free] = rng.standard_normal(sys.free.sum())
        resid = abs(np.sum(r * v)) / (np.linalg.norm(v) * scale)
        assert resid < 1e-9


def test_nested_matches_direct():
    g = _strip(64)
    xc = g.cell_centers(0)[:, None]
    tc = g.cell_centers(1)[None, :]
    a = 1.0 + 2.0 * (np.mod(xc * 4 + tc, 1.0) < 0.5)
    M = np.zeros(g.cell_shape + (2, 2))
    M[..., 0, 0] = a
    M[..., 1, 1] = a
    A = MatrixField(g, M)
    bc = BoundaryData(f=lambda x: np.cos(2 * np.pi * x))
    direct = dirichlet_solve(A, bc, tol=1e-11, nested=False)
    nested = dirichlet_solve(A, bc, tol=1e-11, nested=True, min_coarse=16)
    assert np.max(np.abs(direct.u.values - nested.u.values)) < 1e-8
    assert len(nested.extra["levels"]) > 1


def test_error_equation_zero_rhs():
    g = _strip(16)
    A = constant_matrix_field(g, np.eye(2))
    F = np.zeros(g.cell_shape + (2,))
    rep = solve_error_equation(A, F)
    assert np.max(np.abs(rep.u.values)) == 0.0


def test_error_equation_gradient_rhs():
    # rhs = grad w with w vanishing on the boundary: z = -w up to O(h^2)
    errs = []
    for n in (32, 64):
        g = _strip(n)
        A = constant_matrix_field(g, np.eye(2))
        xs = g.node_coordinates(0)[:, None]
        ts = g.node_coordinates(1)[None, :]
        w = np.sin(2 * np.pi * xs) * np.sin(np.pi * ts / 2.0)
        F = gradient(ScalarField(g, w))
        rep = solve_error_equation(A, F, tol=1e-11)
        errs.append(np.sqrt(np.mean((rep.u.values + w) ** 2)))
    assert errs[1] < 0.35 * errs[0]


def test_error_equation_nodal_route_is_exact():
    g = _strip(24)
    A = constant_matrix_field(g, [[1.5, 0.2], [0.2, 0.8]])
    rng = np.random.default_rng(4)
    w = np.zeros(g.node_shape)
    w[:, 1:-1] = rng.standard_normal((g.node_shape[0], g.node_shape[1] - 2))
    rep = solve_error_equation(A, rhs_nodal=w, tol=1e-13)
    assert np.max(np.abs(rep.u.values + w)) < 1e-9


@pytest.mark.parametrize("a_vals", [(1.0,), (1.0, 3.0), (0.4, 1.0, 0.7, 0.9)])
def test_one_dimensional_reduction_matches_oracle(a_vals):
    # x-independent data on the strip reduces to the 1-D two-point problem
    eps = 1.0 / 8.0
    n_t = 256
    g = make_grid(GridSpec(2, extent=(0.25, 1.0), cells=(8, n_t), periodic=(True, False)))
    profile = Profile1D(a=a_vals, f_nodes=(0.0, 1.0), f_values=(0.0, 1.0))
    tc = g.cell_centers(1)
    m = len(a_vals)
    idx = np.clip(np.floor(np.mod(tc / eps, 1.0) * m).astype(int), 0, m - 1)
    a = np.asarray(a_vals)[idx]
    M = np.zeros(g.cell_shape + (2, 2))
    M[..., 0, 0] = 1.0
    M[..., 1, 1] = a[None, :]
    F = np.zeros(g.cell_shape + (2,))
    F[..., 1] = -profile.f_at(tc)[None, :]
    rep = solve_error_equation(MatrixField(g, M), F, tol=1e-12)
    ts = g.node_coordinates(1)
    exact = exact_u_eps(profile, eps, ts)
    err = np.max(np.abs(rep.u.values - exact[None, :]))
    h = 1.0 / n_t
    assert err < 1e-10 + 60.0 * h**2
    # the solution stays x-independent
    assert np.max(np.abs(rep.u.values - rep.u.values[0][None, :])) < 1e-9


def test_three_dimensional_strip_toy():
    g = make_grid(GridSpec(3, extent=(1.0, 1.0, 2.0), cells=(4, 4, 8),
                           periodic=(True, True, False)))
    A = constant_matrix_field(g, np.eye(3))
    rep = dirichlet_solve(A, BoundaryData(f=lambda pts: 2.0 + 0.0 * pts[..., 0]))
    assert np.max(np.abs(rep.u.values - 2.0)) < 1e-9


def test_nan_and_nonconvergence_raise():
    g = _strip(16)
    A = constant_matrix_field(g, np.eye(2))
    with pytest.raises(SolverError):
        dirichlet_solve(A, BoundaryData(f=lambda x: np.cos(2 * np.pi * x)), tol=1e-14, maxiter=3)
