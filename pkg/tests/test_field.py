from fractions import Fraction

import numpy as np
import pytest

from homtent.cell import laminate_template
from homtent.errors import ConfigError, ResolutionError
from homtent.field import (CoefficientSpec, EpsilonSchedule, WhitneyBox, assemble_A,
                           assemble_Abar, chi_gradient_bound, cutoff_chi, cutoff_values,
                           epsilon_for, eta_for, round_epsilon, whitney_decompose)
from homtent.grid import GridSpec, make_grid


def _spec(K=2, c=1.0, mode="constant", rule=None, templates=None, A_inf=None):
    templates = templates or {"lam": laminate_template([1.0, 3.0], label="lam")}
    rule = rule or {"rule": "single", "template": next(iter(templates))}
    A_inf = np.diag([1.5, 2.0]) if A_inf is None else A_inf
    return CoefficientSpec(templates=templates, assignment=rule, A_inf=A_inf,
                           schedule=EpsilonSchedule(mode, p=3.0, c=c), K=K, lam=0.2)


def test_whitney_counts():
    assert len(whitney_decompose(1, 1)) == 2
    assert len(whitney_decompose(1, 3)) == 14
    assert len(whitney_decompose(2, 2)) == 4 + 8


def test_whitney_box_geometry():
    lay = whitney_decompose(1, 3)
    b = next(bb for bb in lay.boxes if bb.k == -2 and bb.j == (1,))
    assert (b.t_lo, b.t_hi) == (0.25, 0.5)
    assert b.side == 0.25
    assert (b.x_lo(0), b.x_hi(0)) == (0.125, 0.375)


def test_generation_tiles_slab_exactly():
    # dyadic volumes summed in exact rational arithmetic
    for K in (1, 2, 3, 4):
        lay = whitney_decompose(2, K)
        for k in range(-1, -K - 1, -1):
            side = Fraction(1, 2 ** (-k))
            vol = sum(side * side for b in lay.boxes if b.k == k)
            assert vol == Fraction(2) * side  # x_extent * band height


def test_epsilon_schedule_values():
    assert epsilon_for(-2, EpsilonSchedule("theorem", p=3.0)) == pytest.approx(0.0625)
    assert epsilon_for(-2, EpsilonSchedule("laminate")) == pytest.approx(0.125)
    assert epsilon_for(-2, EpsilonSchedule("constant")) == pytest.approx(0.25)
    with pytest.raises(ConfigError):
        EpsilonSchedule("theorem", p=1.0)
    with pytest.raises(ConfigError):
        EpsilonSchedule("nonsense")


def test_eta_values():
    assert eta_for(0.0625, 3.0) == pytest.approx(0.0625**0.75)
    assert eta_for(0.0625, 3.0) == pytest.approx(0.125)
    assert eta_for(1.0, 3.0) == 0.5
    assert eta_for(0.125, float("inf")) == pytest.approx(0.125 ** (2.0 / 3.0))


def test_schedules_monotone_and_layer_dominates():
    rng = np.random.default_rng(2)
    for _ in range(10):
        c = float(rng.uniform(0.05, 1.0))
        p = float(rng.uniform(1.5, 20.0))
        mode = ["theorem", "laminate", "constant"][rng.integers(3)]
        sched = EpsilonSchedule(mode, p=p, c=c)
        lay = whitney_decompose(1, 5, sched, p)
        eps = [lay.generation(k)[0].eps for k in range(-1, -6, -1)]
        eta = [lay.generation(k)[0].eta for k in range(-1, -6, -1)]
        assert all(e1 >= e2 for e1, e2 in zip(eps, eps[1:]))
        assert all(h1 >= h2 for h1, h2 in zip(eta, eta[1:]))
        assert all(h >= e for h, e in zip(eta, eps))


def test_round_epsilon():
    assert round_epsilon(1.0) == 1.0
    assert round_epsilon(0.3) == 0.25
    assert round_epsilon(0.25) == 0.25


def test_custom_schedule_exponent():
    s = EpsilonSchedule("custom", custom_exponent=2.5, c=0.5)
    assert epsilon_for(-2, s) == pytest.approx(0.5 * 2.0**-5)
    with pytest.raises(ConfigError):
        EpsilonSchedule("custom")


def test_assemble_identity_template():
    from homtent.cell import identity_template

    spec = _spec(templates={"id": identity_template(label="id")}, A_inf=np.eye(2))
    g = make_grid(GridSpec(2, extent=(1.0, 2.0), cells=(128, 256), periodic=(True, False)))
    A = assemble_A(spec, g, {"id": np.eye(2)})
    assert np.allclose(A.values, np.eye(2), atol=0.0)


def test_assemble_laminate_band_and_top():
    spec = _spec(K=2)
    g = make_grid(GridSpec(2, extent=(1.0, 2.0), cells=(256, 512), periodic=(True, False)))
    abars = {"lam": np.diag([1.5, 2.0])}
    A = assemble_A(spec, g, abars)
    # top layer: A = A_inf
    it = np.searchsorted(g.cell_centers(1), 1.2)
    assert np.allclose(A.values[:, it], np.diag([1.5, 2.0]))
    # t = 0.6 sits in generation -1 with eps = 1/2, so the period is 1/4 and
    # A_11 at (x, 0.6) equals a(x / (1/4) mod 1) for the {1,3} laminate
    it = np.searchsorted(g.cell_centers(1), 0.6)
    t = g.cell_centers(1)[it]
    xc = g.cell_centers(0)
    expect = np.where(np.mod(xc / 0.25, 1.0) < 0.5, 1.0, 3.0)
    # the template also oscillates in t through the same rescaling
    expect_t = np.mod(t / 0.25, 1.0)
    assert np.allclose(A.values[:, it, 0, 0], expect)
    # below the resolved strip: homogenized extension
    itb = np.searchsorted(g.cell_centers(1), 2.0**-3)
    assert np.allclose(A.values[:, itb], np.diag([1.5, 2.0]))
    # ellipticity cell by cell
    lo, hi = A.ellipticity_range()
    assert lo >= 1.0 - 1e-12
    assert hi <= 3.0 + 1e-12


def test_assemble_abar_piecewise_values():
    from homtent.cell import identity_template

    templates = {
        "lam": laminate_template([1.0, 3.0], label="lam"),
        "id": identity_template(label="id"),
    }
    spec = _spec(K=2, templates=templates,
                 rule={"rule": "alternate", "templates": ["lam", "id"]}, A_inf=np.eye(2))
    g = make_grid(GridSpec(2, extent=(1.0, 2.0), cells=(256, 512), periodic=(True, False)))
    abars = {"lam": np.diag([1.5, 2.0]), "id": np.eye(2)}
    Ab = assemble_Abar(spec, g, abars)
    # within a resolved generation the two homogenized values alternate by box
    it = np.searchsorted(g.cell_centers(1), 0.6)
    vals = Ab.values[:, it]
    seen = {tuple(np.round(v.ravel(), 12)) for v in vals}
    assert seen == {(1.0, 0.0, 0.0, 1.0), (1.5, 0.0, 0.0, 2.0)}


def test_assembly_deterministic():
    spec = _spec(K=2)
    g = make_grid(GridSpec(2, extent=(1.0, 2.0), cells=(256, 512), periodic=(True, False)))
    abars = {"lam": np.diag([1.5, 2.0])}
    A1 = assemble_A(spec, g, abars)
    A2 = assemble_A(spec, g, abars)
    assert np.array_equal(A1.values, A2.values)


def test_under_resolution_rejected():
    spec = _spec(K=3)  # finest period 2^-3 * 1/8 = 1/64 -> needs >= 512 cells/unit
    g = make_grid(GridSpec(2, extent=(1.0, 2.0), cells=(128, 256), periodic=(True, False)))
    with pytest.raises(ResolutionError) as ei:
        assemble_A(spec, g, {"lam": np.diag([1.5, 2.0])})
    assert "cells >=" in str(ei.value)


def test_cutoff_profile():
    box = WhitneyBox(k=-1, j=(1,), eps=0.5, eta=0.5)
    g = make_grid(GridSpec(2, extent=(1.0, 2.0), cells=(128, 256), periodic=(True, False)))
    chi = cutoff_chi(box, g)
    # 1 at the center, 0 on the box boundary
    ix = np.argmin(np.abs(g.node_coordinates(0) - 0.5))
    it = np.argmin(np.abs(g.node_coordinates(1) - 0.75))
    assert chi.values[ix, it] == pytest.approx(1.0)
    it_edge = np.argmin(np.abs(g.node_coordinates(1) - 0.5))
    assert chi.values[ix, it_edge] == 0.0
    # monotone along the vertical through the transition shell
    col = chi.values[ix, :]
    mid = col[(g.node_coordinates(1) > 0.5) & (g.node_coordinates(1) < 0.75)]
    assert np.all(np.diff(mid) >= -1e-14)
    assert np.any((mid > 0) & (mid < 1))
    assert chi_gradient_bound(box) <= 60.0 / (box.side * box.eta)


def test_cutoff_wraps_laterally():
    box = WhitneyBox(k=-1, j=(0,), eps=0.5, eta=0.5)  # centered at x = 0
    vals = cutoff_values(box, [np.array([0.0, 0.99, 0.01]), np.array([0.75])], 1.0)
    assert vals[0, 0] == pytest.approx(1.0)
    assert vals[1, 0] > 0.9
    assert vals[2, 0] > 0.9


def test_unknown_assignment_rejected():
    with pytest.raises(ConfigError):
        _spec(rule={"rule": "single", "template": "nope"})
    with pytest.raises(ConfigError):
        _spec(rule={"rule": "alternate", "templates": ["lam"]})
