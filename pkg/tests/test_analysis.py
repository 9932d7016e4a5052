import numpy as np
import pytest

from homtent.analysis import (Tent, carleson_functional, carleson_sup, dkp_alpha,
                              dkp_carleson_integral)
from homtent.cell import laminate_template, solve_cell_problems, solve_periodic
from homtent.field import cutoff_values
from homtent.grid import (GridSpec, MatrixField, ScalarField, VectorField, cell_to_node_average,
                          constant_matrix_field, gradient, interp_nodal, make_grid)
from homtent.runner import ExperimentConfig, run_pipeline
from homtent.solve import BoundaryData, dirichlet_solve


def _strip(n, periodic=True):
    return make_grid(GridSpec(2, extent=(1.0, 2.0), cells=(n, 2 * n), periodic=(periodic, False)))


def test_tent_functional_constant_field():
    g = _strip(32)
    u = ScalarField(g, np.full(g.node_shape, 1.7))
    raw, norm = carleson_functional(u, Tent((0.3,), 0.5))
    assert raw == 0.0 and norm == 0.0


def test_tent_functional_linear_field_exact():
    # |grad u|^2 = 1 and the midpoint rule integrates t exactly: raw = R * R^2/2
    g = make_grid(GridSpec(2, extent=(1.0, 2.0), cells=(32, 64)))
    xs = g.node_coordinates(0)[:, None]
    u = ScalarField(g, xs + 0.0 * g.node_coordinates(1)[None, :])
    for R in (0.25, 0.5, 1.0):
        raw, norm = carleson_functional(u, Tent((0.5,), R))
        assert raw == pytest.approx(R**3 / 2.0, abs=1e-14)
        assert norm == pytest.approx(R**2 / 2.0, abs=1e-14)


def test_tent_wraps_laterally():
    g = _strip(32)
    rng = np.random.default_rng(0)
    u = ScalarField(g, rng.standard_normal(g.node_shape))
    d = None
    a = carleson_functional(u, Tent((0.0,), 0.5))[0]
    b = carleson_functional(u, Tent((1.0,), 0.5))[0]  # same tent modulo the period
    assert a == pytest.approx(b, rel=1e-12)


def test_tent_monotone_in_radius():
    g = _strip(32)
    rng = np.random.default_rng(1)
    u = ScalarField(g, rng.standard_normal(g.node_shape))
    raws = [carleson_functional(u, Tent((0.25,), R))[0] for R in (0.125, 0.25, 0.5, 1.0)]
    assert all(r1 >= r0 - 1e-15 for r0, r1 in zip(raws, raws[1:]))


def test_harmonic_extension_matches_quadrature_oracle():
    # u = cos(2 pi x) e^{-2 pi t}: t|grad u|^2 = 4 pi^2 t e^{-4 pi t} is
    # x-independent; compare the solved field against dense 1-D quadrature
    g = _strip(256)
    A = constant_matrix_field(g, np.eye(2))
    rep = dirichlet_solve(A, BoundaryData(f=lambda x: np.cos(2 * np.pi * x)))
    R = 1.0
    raw, norm = carleson_functional(rep.u, Tent((0.5,), R))
    ts = np.linspace(0.0, R, 20001)
    integrand = 4.0 * np.pi**2 * ts * np.exp(-4.0 * np.pi * ts)
    oracle = R * np.trapezoid(integrand, ts)
    assert norm == pytest.approx(oracle / R, rel=1e-2)


def test_carleson_sup_single_tent_degenerates():
    g = _strip(32)
    rng = np.random.default_rng(2)
    u = ScalarField(g, rng.standard_normal(g.node_shape))
    rep = carleson_sup(u, [0.5], centers=[(0.25,)])
    raw, norm = carleson_functional(u, Tent((0.25,), 0.5))
    assert rep.sup == pytest.approx(norm, rel=1e-14)
    assert rep.ratio == pytest.approx(1.0)


def test_dkp_alpha_cases():
    g = _strip(64)
    A = constant_matrix_field(g, np.eye(2))
    assert dkp_alpha(A, (0.5, 1.0)) == 0.0
    vals = np.zeros(g.cell_shape + (2, 2))
    two = np.where(g.cell_centers(0)[:, None] < 0.5, 1.0, 0.5) * np.ones((1, g.cell_shape[1]))
    vals[..., 0, 0] = two
    vals[..., 1, 1] = two
    A2 = MatrixField(g, vals)
    assert dkp_alpha(A2, (0.5, 1.0)) == pytest.approx(0.5)
    lo, hi = A2.ellipticity_range()
    for x in (0.1, 0.5, 0.9):
        for t in (0.05, 0.3, 1.0):
            assert dkp_alpha(A2, (x, t)) <= hi - lo + 1e-12
    with pytest.raises(ValueError):
        dkp_alpha(A2, (0.5, 5.0))


def test_dkp_slab_additivity_and_constant_zero():
    g = _strip(64)
    A = constant_matrix_field(g, [[1.0, 0.2], [0.2, 2.0]])
    total, breakdown = dkp_carleson_integral(A, Tent((0.0,), 0.5), K=3)
    assert total == 0.0
    xc = g.cell_centers(0)[:, None]
    tc = g.cell_centers(1)[None, :]
    a = 1.0 + 2.0 * (np.mod(xc * 16 + tc * 16, 1.0) < 0.5)
    M = np.zeros(g.cell_shape + (2, 2))
    M[..., 0, 0] = a
    M[..., 1, 1] = a
    total, breakdown = dkp_carleson_integral(MatrixField(g, M), Tent((0.0,), 0.5), K=3)
    assert total == pytest.approx(sum(breakdown.values()), rel=1e-14)
    assert total > 0


def _mini_pipeline(tmp_path, K=1, c=0.5, cells=(256, 512), name="mini"):
    cfg = ExperimentConfig.from_json({
        "name": name,
        "templates": {"lam": {"type": "laminate", "values": [1.0, 3.0]}},
        "assignment": {"rule": "single", "template": "lam"},
        "A_inf": "abar:lam",
        "schedule": {"mode": "constant", "c": c},
        "K": K,
        "lambda": 0.2,
        "grid": {"cells": list(cells)},
        "cell_resolution": 64,
        "boundary": {"family": "random_trig", "max_level": 3, "seed": 7},
        "solver": {"tol": 1e-9},
        "dump_format": "none",
    })
    return run_pipeline(cfg, tmp_path / name)


def test_two_scale_trivial_for_constant_templates(tmp_path):
    cfg = ExperimentConfig.from_json({
        "name": "const",
        "templates": {"id": {"type": "identity"}},
        "assignment": {"rule": "single", "template": "id"},
        "A_inf": "abar:id",
        "schedule": {"mode": "constant", "c": 0.5},
        "K": 1, "lambda": 0.2,
        "grid": {"cells": [128, 256]},
        "cell_resolution": 32,
        "boundary": {"family": "cosine"},
        "solver": {"tol": 1e-10},
        "dump_format": "none",
    })
    res = run_pipeline(cfg, tmp_path / "const")
    # correctors vanish: u2s = ubar, z at solver tolerance, no DKP mass
    assert np.array_equal(res.u2s.values, res.ubar.values)
    assert res.summary["dkp_total"] == 0.0
    assert res.summary["z_energy"] < 1e-12
    assert res.summary["budget_bulk"] == 0.0


def test_two_scale_expansion_structure(tmp_path):
    res = _mini_pipeline(tmp_path)
    g = res.u.grid
    ts = g.node_coordinates(1)
    # trace: every cutoff vanishes on the bottom boundary
    assert np.array_equal(res.u2s.values[:, 0], res.ubar.values[:, 0])
    # above t = 1 nothing is corrected
    top = np.searchsorted(ts, 1.0)
    assert np.array_equal(res.u2s.values[:, top:], res.ubar.values[:, top:])
    # pointwise formula at sampled nodes deep inside a box (chi = 1 there)
    layout = res.layout
    box = layout.generation(-1)[1]
    cs = res.correctors[box.label]
    du = [cell_to_node_average(gradient(res.ubar).values[..., a], g) for a in range(2)]
    xs = g.node_coordinates(0)
    # sample nodes on the cutoff plateau of the box, where chi = 1 exactly
    plateau_x = np.flatnonzero(np.abs(xs - box.x_center(0)) < 0.5 * (1.0 - box.eta) * box.side - 1e-9)
    plateau_t = np.flatnonzero(np.abs(ts - 1.5 * box.side) < 0.5 * (1.0 - box.eta) * box.side - 1e-9)
    rng = np.random.default_rng(3)
    for _ in range(5):
        ix = int(rng.choice(plateau_x))
        it = int(rng.choice(plateau_t))
        x, t = xs[ix], ts[it]
        assert cutoff_values(box, [np.array([x]), np.array([t])], 1.0)[0, 0] == 1.0
        P = box.period
        pt = np.array([np.mod(x / P, 1.0), np.mod(t / P, 1.0)])
        expect = res.ubar.values[ix, it] + P * sum(
            interp_nodal(cs.grid, cs.phi[i].values, pt) * du[i][ix, it] for i in range(2))
        assert res.u2s.values[ix, it] == pytest.approx(expect, rel=1e-12, abs=1e-13)


def test_two_scale_energy_improves_with_smaller_eps():
    # global expansion on the torus: ||grad(u_eps - u2s)|| drops when eps halves
    tpl = laminate_template([1.0, 3.0])
    cs = solve_cell_problems(tpl, cells=128)
    n = 256
    g = make_grid(GridSpec(2, extent=(1.0, 1.0), cells=(n, n), periodic=(True, True)))
    xc = np.stack(np.meshgrid(g.cell_centers(0), g.cell_centers(1), indexing="ij"), axis=-1)
    F = np.zeros(g.cell_shape + (2,))
    F[..., 0] = np.sin(2 * np.pi * xc[..., 0]) * np.cos(2 * np.pi * xc[..., 1])
    F[..., 1] = np.cos(4 * np.pi * xc[..., 1])
    Fv = VectorField(g, F)
    ubar = solve_periodic(constant_matrix_field(g, cs.Abar), Fv)
    du = [cell_to_node_average(gradient(ubar).values[..., a], g) for a in range(2)]
    xn = np.stack(np.meshgrid(g.node_coordinates(0), g.node_coordinates(1), indexing="ij"), axis=-1)
    errs = []
    for eps in (1.0 / 8.0, 1.0 / 16.0):
        A_eps = MatrixField(g, tpl.evaluate(np.mod(xc / eps, 1.0)))
        u_eps = solve_periodic(A_eps, Fv)
        u2s = ubar.values + eps * sum(
            interp_nodal(cs.grid, cs.phi[i].values, np.mod(xn / eps, 1.0)) * du[i] for i in range(2))
        gz = gradient(ScalarField(g, u_eps.values - u2s)).values
        errs.append(np.sqrt(np.mean(np.sum(gz**2, axis=-1))))
    assert errs[1] <= 0.75 * errs[0]


def test_budget_terms_and_schedule_sweep(tmp_path):
    # prefactor sweep c, c/2, c/4: the z-energy column is monotone and the
    # budget shrinks when every eps is halved (eta re-derived each time)
    runs = [_mini_pipeline(tmp_path, K=1, c=c, name=f"c{i}")
            for i, c in enumerate((0.5, 0.25, 0.125))]
    z = [r.summary["z_energy_weighted"] for r in runs]
    assert z[0] > z[1] > z[2]
    b = [r.summary["budget_bulk"] + r.summary["budget_layer"] for r in runs]
    assert b[0] > b[1] > b[2]
    assert runs[0].summary["budget_bulk"] > 0 and runs[0].summary["budget_layer"] > 0


def test_budget_bulk_against_double_resolution(tmp_path):
    res1 = _mini_pipeline(tmp_path, K=1, c=0.5, cells=(256, 512), name="lo")
    res2 = _mini_pipeline(tmp_path, K=1, c=0.5, cells=(512, 1024), name="hi")
    assert res1.summary["budget_bulk"] == pytest.approx(res2.summary["budget_bulk"], rel=0.1)
    assert res1.summary["budget_layer"] == pytest.approx(res2.summary["budget_layer"], rel=0.1)
