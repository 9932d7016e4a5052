"""Closed-form one-dimensional homogenization oracle.

For the two-point boundary value problem

    (a(x/eps) u_eps')' = f',   u_eps(0) = u_eps(1) = 0,

with 1-periodic piecewise-constant a and piecewise-linear f, the solution is

    u_eps(x) = int_0^x f/a_eps
               - int_0^x 1/a_eps * (int_0^1 1/a_eps)^-1 * int_0^1 f/a_eps,

and the pointwise limit as eps -> 0 is

    ubar(x) = (1/abar) (F(x) - x F(1)),   abar = (int_0^1 1/a)^-1,

the harmonic mean.  Everything here is integrated exactly on the common
refinement of the breakpoints of a(./eps) and f, so the oracle carries no
discretization error of its own and can validate the PDE stack independently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Gauss-Legendre 3-point rule on [0,1]: exact for quartics, which is what
# (u_eps - ubar)^2 is between breakpoints.
_GL3_X = np.array([0.5 - np.sqrt(15.0) / 10.0, 0.5, 0.5 + np.sqrt(15.0) / 10.0])
_GL3_W = np.array([5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0])


@dataclass(frozen=True)
class Profile1D:
    """Periodic coefficient (m equal subintervals of [0,1)) and forcing."""

    a: tuple            # coefficient values on the m subintervals
    f_nodes: tuple      # breakpoints of the piecewise-linear forcing, 0..1
    f_values: tuple

    def __post_init__(self):
        a = tuple(float(v) for v in self.a)
        if any(v <= 0 for v in a):
            raise ValueError("coefficient values must be positive")
        xs = tuple(float(x) for x in self.f_nodes)
        fs = tuple(float(v) for v in self.f_values)
        if len(xs) != len(fs) or len(xs) < 2 or xs[0] != 0.0 or xs[-1] != 1.0 or any(np.diff(xs) <= 0):
            raise ValueError("f must be given on increasing nodes spanning [0, 1]")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "f_nodes", xs)
        object.__setattr__(self, "f_values", fs)

    def f_at(self, x):
        return np.interp(x, self.f_nodes, self.f_values)

    def abar(self) -> float:
        inv = np.mean([1.0 / v for v in self.a])
        return float(1.0 / inv)


def _check_eps(eps: float) -> int:
    n = round(1.0 / eps)
    if n < 1 or abs(n * eps - 1.0) > 1e-12:
        raise ValueError(f"eps must be the reciprocal of an integer, got {eps}")
    return n


def _breakpoints(profile: Profile1D, eps: float) -> np.ndarray:
    n = _check_eps(eps)
    m = len(profile.a)
    b = np.arange(n * m + 1) / (n * m)
    return np.unique(np.concatenate([b, np.asarray(profile.f_nodes)]))


def _inv_a_eps(profile: Profile1D, eps: float, xmid: np.ndarray) -> np.ndarray:
    m = len(profile.a)
    idx = np.floor(np.mod(xmid / eps, 1.0) * m).astype(int)
    idx = np.clip(idx, 0, m - 1)
    return 1.0 / np.asarray(profile.a)[idx]


class _ExactSolution:
    """Cumulative exact integrals of 1/a_eps and f/a_eps on breakpoints."""

    def __init__(self, profile: Profile1D, eps: float):
        self.profile = profile
        b = _breakpoints(profile, eps)
        self.b = b
        dx = np.diff(b)
        inv = _inv_a_eps(profile, eps, 0.5 * (b[:-1] + b[1:]))
        fl = profile.f_at(b[:-1])
        fr = profile.f_at(b[1:])
        self.inv = inv
        self.cum_inv = np.concatenate([[0.0], np.cumsum(inv * dx)])
        self.cum_f = np.concatenate([[0.0], np.cumsum(inv * 0.5 * (fl + fr) * dx)])
        self.c = -self.cum_f[-1] / self.cum_inv[-1]

    def _partials(self, x):
        x = np.asarray(x, dtype=float)
        k = np.clip(np.searchsorted(self.b, x, side="right") - 1, 0, len(self.b) - 2)
        x0 = self.b[k]
        dx = x - x0
        f0 = self.profile.f_at(x0)
        fx = self.profile.f_at(x)
        I1 = self.cum_inv[k] + self.inv[k] * dx
        If = self.cum_f[k] + self.inv[k] * 0.5 * (f0 + fx) * dx
        return I1, If

    def __call__(self, x):
        I1, If = self._partials(x)
        return If + self.c * I1


def exact_u_eps(profile: Profile1D, eps: float, x):
    """Evaluate the explicit solution u_eps at x (scalar or array)."""
    sol = _ExactSolution(profile, eps)
    out = sol(x)
    return float(out) if np.isscalar(x) else out


def exact_ubar(profile: Profile1D, x):
    """Evaluate the homogenized limit ubar at x (scalar or array)."""
    xs = np.asarray(profile.f_nodes)
    fs = np.asarray(profile.f_values)
    cumF = np.concatenate([[0.0], np.cumsum(0.5 * (fs[:-1] + fs[1:]) * np.diff(xs))])

    def F(t):
        t = np.asarray(t, dtype=float)
        k = np.clip(np.searchsorted(xs, t, side="right") - 1, 0, len(xs) - 2)
        t0 = xs[k]
        return cumF[k] + 0.5 * (np.interp(t0, xs, fs) + np.interp(t, xs, fs)) * (t - t0)

    abar = profile.abar()
    out = (F(x) - np.asarray(x, dtype=float) * cumF[-1]) / abar
    return float(out) if np.isscalar(x) else out


def l2_distance_to_ubar(profile: Profile1D, eps: float) -> float:
    """||u_eps - ubar||_{L^2(0,1)} by exact piecewise Gauss quadrature."""
    sol = _ExactSolution(profile, eps)
    b = _breakpoints(profile, eps)
    x0 = b[:-1][:, None]
    dx = np.diff(b)[:, None]
    xq = x0 + _GL3_X[None, :] * dx
    d = sol(xq) - exact_ubar(profile, xq)
    return float(np.sqrt(np.sum((d**2 * _GL3_W[None, :]).sum(axis=1) * dx[:, 0])))


def l2_error_curve(profile: Profile1D, eps_list) -> list:
    """Rows (eps, error, local log-log slope); slope is NaN on the first row."""
    rows = []
    prev = None
    for eps in eps_list:
        err = l2_distance_to_ubar(profile, eps)
        slope = float("nan")
        if prev is not None and err > 0 and prev[1] > 0:
            slope = float(np.log(err / prev[1]) / np.log(eps / prev[0]))
        rows.append((float(eps), err, slope))
        prev = (eps, err)
    return rows


def fit_loglog_slope(rows) -> float:
    """Least-squares slope of log(error) vs log(eps) over the whole table."""
    eps = np.array([r[0] for r in rows])
    err = np.array([r[1] for r in rows])
    if np.any(err <= 0):
        return float("nan")
    return float(np.polyfit(np.log(eps), np.log(err), 1)[0])
