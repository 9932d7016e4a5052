import numpy as np
import pytest

from homtent.oracle1d import (Profile1D, exact_u_eps, exact_ubar, fit_loglog_slope,
                              l2_distance_to_ubar, l2_error_curve)


def test_constant_coefficient_linear_forcing():
    # a = 1, f = y: the explicit formula collapses to x^2/2 - x/2
    p = Profile1D(a=(1.0,), f_nodes=(0.0, 1.0), f_values=(0.0, 1.0))
    xs = np.linspace(0.0, 1.0, 33)
    assert np.max(np.abs(exact_u_eps(p, 0.25, xs) - (xs**2 / 2 - xs / 2))) < 1e-14


def test_zero_forcing_and_boundary_values():
    p = Profile1D(a=(1.0, 3.0), f_nodes=(0.0, 1.0), f_values=(0.0, 0.0))
    assert exact_u_eps(p, 1.0 / 8.0, 0.37) == 0.0
    p2 = Profile1D(a=(1.0, 3.0), f_nodes=(0.0, 0.5, 1.0), f_values=(0.2, -1.0, 0.7))
    for eps in (1.0, 0.125, 1.0 / 64.0):
        assert exact_u_eps(p2, eps, 0.0) == pytest.approx(0.0, abs=1e-15)
        assert exact_u_eps(p2, eps, 1.0) == pytest.approx(0.0, abs=1e-13)


def test_harmonic_mean():
    assert Profile1D(a=(1.0, 0.5), f_nodes=(0.0, 1.0), f_values=(0.0, 1.0)).abar() == pytest.approx(2.0 / 3.0)
    assert Profile1D(a=(0.7,), f_nodes=(0.0, 1.0), f_values=(0.0, 1.0)).abar() == pytest.approx(0.7)


def test_ubar_zero_forcing():
    p = Profile1D(a=(1.0, 0.25), f_nodes=(0.0, 1.0), f_values=(0.0, 0.0))
    xs = np.linspace(0.0, 1.0, 17)
    assert np.max(np.abs(exact_ubar(p, xs))) == 0.0


def test_voigt_reuss_1d():
    rng = np.random.default_rng(9)
    for _ in range(10):
        vals = tuple(rng.uniform(0.2, 1.0, 4))
        p = Profile1D(a=vals, f_nodes=(0.0, 1.0), f_values=(0.0, 1.0))
        assert p.abar() <= np.mean(vals) + 1e-14
        assert p.abar() >= 1.0 / np.mean([1.0 / v for v in vals]) - 1e-14


def test_rate_is_first_order():
    p = Profile1D(a=(1.0, 3.0), f_nodes=(0.0, 1.0), f_values=(0.0, 1.0))
    rows = l2_error_curve(p, [2.0**-k for k in range(3, 8)])
    slope = fit_loglog_slope(rows)
    assert 0.9 <= slope <= 1.1
    # halving eps halves the error within 15%
    errs = [r[1] for r in rows]
    for e0, e1 in zip(errs, errs[1:]):
        assert abs(e1 / e0 - 0.5) < 0.15 * 0.5 + 0.075


def test_constant_coefficient_has_zero_error():
    p = Profile1D(a=(0.8,), f_nodes=(0.0, 0.5, 1.0), f_values=(0.0, 1.0, 0.0))
    assert l2_distance_to_ubar(p, 0.125) < 1e-14


def test_eps_must_be_reciprocal_integer():
    p = Profile1D(a=(1.0, 3.0), f_nodes=(0.0, 1.0), f_values=(0.0, 1.0))
    with pytest.raises(ValueError):
        exact_u_eps(p, 0.3, 0.5)
