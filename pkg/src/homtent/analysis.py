"""Carleson tent functionals, DKP oscillation functionals, the localized
two-scale expansion, and the error budget that mirrors its proof structure.

Tent geometry: ``T_R(x) = (x + (-R/2, R/2)^N) x (0, R)``; tents are nested in
R at fixed center.  All quadrature is the midpoint rule of the grid module;
tents that straddle the lateral seam are split into wrapped segments, tents
taller than the grid are clipped with a warning.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .cell import CorrectorSet
from .field import WhitneyBox, WhitneyLayout, cutoff_values
from .grid import (Grid, MatrixField, ScalarField, VectorField, cell_to_node_average,
                   gradient, integrate, interp_nodal)

_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class Tent:
    """Carleson tent of side R centered at boundary point x."""

    x: tuple
    R: float

    def __post_init__(self):
        x = (float(self.x),) if np.isscalar(self.x) else tuple(float(v) for v in self.x)
        if self.R <= 0:
            raise ValueError(f"tent side must be positive, got {self.R}")
        object.__setattr__(self, "x", x)

def tent_segments(tent: Tent, grid: Grid) -> list:
    """Axis-aligned boxes covering the tent inside the grid (lateral wrap)."""
    N = grid.dim - 1
    t_hi = min(tent.R, grid.hi[-1])
    if tent.R > grid.hi[-1] + 1e-12:
        warnings.warn(f"tent R={tent.R} taller than grid; clipped to {grid.hi[-1]}")
    per_axis = []
    for a in range(N):
        L = grid.hi[a] - grid.lo[a]
        lo = tent.x[a] - 0.5 * tent.R
        hi = tent.x[a] + 0.5 * tent.R
        if hi - lo >= L - 1e-15:
            per_axis.append([(grid.lo[a], grid.hi[a])])
            continue
        lo_m = grid.lo[a] + math.fmod(lo - grid.lo[a], L)
        if lo_m < grid.lo[a]:
            lo_m += L
        hi_m = lo_m + (hi - lo)
        if grid.spec.periodic[a]:
            if hi_m <= grid.hi[a] + 1e-15:
                per_axis.append([(lo_m, min(hi_m, grid.hi[a]))])
            else:
                per_axis.append([(lo_m, grid.hi[a]), (grid.lo[a], hi_m - L)])
        else:
            clo, chi = max(lo, grid.lo[a]), min(hi, grid.hi[a])
            if clo < lo - 1e-12 or chi > hi + 1e-12 or clo > lo + 1e-12 or chi < hi - 1e-12:
                warnings.warn("tent clipped laterally on a non-periodic grid")
            per_axis.append([(clo, chi)])
    segments = [((), ())]
    for axis_list in per_axis:
        segments = [(lo + (alo,), hi + (ahi,)) for lo, hi in segments for alo, ahi in axis_list]
    return [(np.array(lo + (0.0,)), np.array(hi + (t_hi,))) for lo, hi in segments]


def carleson_density(u: ScalarField) -> np.ndarray:
    """Cell values of t |grad u|^2."""
    g = gradient(u).values
    tc = u.grid.cell_centers(u.grid.dim - 1)
    shape = [1] * (u.grid.dim - 1) + [-1]
    return np.sum(g * g, axis=-1) * tc.reshape(shape)


def carleson_functional(u: ScalarField, tent: Tent, density: np.ndarray | None = None) -> tuple:
    """(raw, normalized) tent integral of t |grad u|^2."""
    grid = u.grid
    if density is None:
        density = carleson_density(u)
    raw = sum(integrate(density, (lo, hi), grid=grid) for lo, hi in tent_segments(tent, grid))
    N = grid.dim - 1
    return float(raw), float(raw / tent.R**N)


@dataclass
class CarlesonReport:
    rows: list
    sup: float
    ratio: float
    per_radius_max: dict

    def to_csv_rows(self):
        yield ("x", "R", "raw", "normalized", "subres")
        for r in self.rows:
            yield (r["x"][0] if len(r["x"]) == 1 else r["x"], r["R"], r["raw"], r["normalized"], r["subres"])


def dyadic_centers(grid: Grid, R: float) -> list:
    """Grid-aligned tent centers with spacing R/2 along each horizontal axis."""
    out = []
    for a in range(grid.dim - 1):
        L = grid.hi[a] - grid.lo[a]
        n = max(1, int(round(2.0 * L / R)))
        out.append(grid.lo[a] + (np.arange(n) * 0.5 * R) % L)
    if len(out) == 1:
        return [(float(v),) for v in out[0]]
    mesh = np.meshgrid(*out, indexing="ij")
    return [tuple(float(m[idx]) for m in mesh) for idx in np.ndindex(mesh[0].shape)]


def carleson_sup(u: ScalarField, radii, centers=None, sub_resolution_t: float = 0.0) -> CarlesonReport:
    """Evaluate the normalized tent functional over dyadic radii and
    grid-aligned centers; the per-tent sub-resolution band (t below the
    resolved Whitney generations) is reported separately."""
    grid = u.grid
    density = carleson_density(u)
    rows = []
    per_radius = {}
    for R in radii:
        cs = centers if centers is not None else dyadic_centers(grid, R)
        best = 0.0
        for c in cs:
            tent = Tent(c, R)
            raw, normalized = carleson_functional(u, tent, density)
            sub = 0.0
            if sub_resolution_t > 0.0:
                sub_tent_segments = tent_segments(tent, grid)
                for lo, hi in sub_tent_segments:
                    hi2 = hi.copy()
                    hi2[-1] = min(hi[-1], sub_resolution_t)
                    if hi2[-1] > lo[-1]:
                        sub += integrate(density, (lo, hi2), grid=grid)
            rows.append({"x": tent.x, "R": R, "raw": raw, "normalized": normalized, "subres": float(sub)})
            best = max(best, normalized)
        per_radius[float(R)] = best
    sup = max(per_radius.values()) if per_radius else 0.0
    lo = min(v for v in per_radius.values()) if per_radius else 0.0
    ratio = float(sup / lo) if lo > 0 else float("inf")
    return CarlesonReport(rows, float(sup), ratio, per_radius)


def _packed_sym(A: MatrixField) -> np.ndarray:
    v = A.values
    return np.stack([v[..., 0, 0], v[..., 1, 1], v[..., 0, 1]], axis=-1)


def _ball_offsets(grid: Grid, t_center: float, cap: int = 64):
    """Integer cell offsets sampling the ball B_{t/2} around a cell center.

    When the ball holds at most ``cap`` cell centers they are all used (the
    oscillation sup is then exact over cell pairs).  Otherwise the ball is
    sampled at ``cap`` deterministic points on a golden-angle disk spiral
    (radii r sqrt((s+1/2)/cap), angles 2 pi s phi with phi the golden ratio
    conjugate), whose projections are aperiodic and therefore cannot alias a
    periodic coefficient pattern.
    """
    hx, ht = grid.h[0], grid.h[-1]
    r = 0.5 * t_center
    mx = int(math.floor(r / hx))
    mt = int(math.floor(r / ht))
    dxs, dts = np.meshgrid(np.arange(-mx, mx + 1), np.arange(-mt, mt + 1), indexing="ij")
    inside = (dxs * hx) ** 2 + (dts * ht) ** 2 <= r * r + 1e-15
    if inside.sum() <= cap:
        return dxs[inside].ravel(), dts[inside].ravel()
    s = np.arange(cap)
    rho = r * np.sqrt((s + 0.5) / cap)
    theta = 2.0 * np.pi * np.mod(s * _GOLDEN, 1.0)
    dx = rho * np.cos(theta)
    dt = rho * np.sin(theta)
    return np.floor(0.5 + dx / hx).astype(np.intp), np.floor(0.5 + dt / ht).astype(np.intp)


def dkp_alpha(A: MatrixField, Z) -> float:
    """Local oscillation: sup over sampled cell pairs Y, Y' in B_{t/2}(Z) of
    the spectral norm of A(Y) - A(Y')."""
    grid = A.grid
    if grid.dim != 2:
        raise NotImplementedError("dkp_alpha is implemented for N = 1 (dim = 2)")
    x0, t0 = float(Z[0]), float(Z[-1])
    if not (grid.lo[-1] < t0 < grid.hi[-1]):
        raise ValueError(f"point t={t0} outside the grid interior")
    nx, nt = grid.cell_shape
    ix = int((x0 - grid.lo[0]) / grid.h[0])
    it = int((t0 - grid.lo[-1]) / grid.h[-1])
    if not (0 <= it < nt):
        raise ValueError(f"point {Z} outside grid")
    tc = grid.cell_centers(1)[it]
    dxs, dts = _ball_offsets(grid, tc)
    cols = (ix + dxs) % nx if grid.spec.periodic[0] else np.clip(ix + dxs, 0, nx - 1)
    rows = np.clip(it + dts, 0, nt - 1)
    packed = _packed_sym(A)
    vals = packed[cols, rows][None, :, :]
    return float(_kernels.pairwise_opnorm_diameter(np.ascontiguousarray(vals))[0])


def dkp_carleson_integral(A: MatrixField, tent: Tent, K: int) -> tuple:
    """Midpoint quadrature of alpha(Z)^2 / t over the tent, broken down by
    dyadic t-slab.  Returns (total, breakdown) with keys k = -1, -2, ... for
    the slabs [2^k, 2^{k+1}) and "subres" for t < 2^-K."""
    grid = A.grid
    if grid.dim != 2:
        raise NotImplementedError("the DKP integral is implemented for N = 1 (dim = 2)")
    nx, nt = grid.cell_shape
    hx, ht = grid.h[0], grid.h[1]
    tc_all = grid.cell_centers(1)
    packed = np.ascontiguousarray(_packed_sym(A))
    segments = tent_segments(tent, grid)

    # column index list and per-column overlap weights, shared by all rows
    cols = []
    wx = []
    xe = grid.cell_edges(0)
    for lo, hi in segments:
        left = np.maximum(xe[:-1], lo[0])
        right = np.minimum(xe[1:], hi[0])
        w = np.clip(right - left, 0.0, None)
        nz = np.nonzero(w > 0)[0]
        cols.append(nz)
        wx.append(w[nz])
    cols = np.concatenate(cols)
    wx = np.concatenate(wx)

    t_hi = min(tent.R, grid.hi[1])
    breakdown = {}
    total = 0.0
    wrap = grid.spec.periodic[0]
    for it in range(nt):
        t0 = grid.lo[1] + it * ht
        t1 = t0 + ht
        overlap_t = min(t1, t_hi) - max(t0, 0.0)
        if overlap_t <= 0:
            continue
        tc = tc_all[it]
        dxs, dts = _ball_offsets(grid, tc)
        ccols = (cols[:, None] + dxs[None, :]) % nx if wrap else np.clip(cols[:, None] + dxs[None, :], 0, nx - 1)
        crows = np.clip(it + dts, 0, nt - 1)[None, :].repeat(len(cols), axis=0)
        vals = np.ascontiguousarray(packed[ccols, crows])
        alpha = _kernels.pairwise_opnorm_diameter(vals)
        contrib = float(np.sum(alpha**2 * wx) * overlap_t / tc)
        k = int(math.floor(math.log2(tc)))
        key = "subres" if k < -K else k
        breakdown[key] = breakdown.get(key, 0.0) + contrib
        total += contrib
    return float(total), breakdown


def two_scale_expand(ubar: ScalarField, layout: WhitneyLayout, correctors: dict) -> ScalarField:
    """Local two-scale expansion on the strip grid.

    ``u2s = ubar + sum_boxes period * chi * phi^i(./period) d_i ubar`` with
    the nodal gradient of ubar obtained by cell averaging and the correctors
    interpolated periodically.  Equals ubar outside the boxes (in particular
    for t >= 1) and reproduces the boundary trace exactly.
    """
    grid = ubar.grid
    if grid.dim != 2:
        raise NotImplementedError("the two-scale expansion is implemented for N = 1 (dim = 2)")
    g = gradient(ubar).values
    du = [cell_to_node_average(g[..., a], grid) for a in range(grid.dim)]
    out = ubar.values.copy()
    xs = grid.node_coordinates(0)
    ts = grid.node_coordinates(1)
    L = grid.hi[0] - grid.lo[0]
    for box in layout.boxes:
        cs = correctors[box.label]
        if box.label and _is_zero_corrector(cs):
            continue
        ix, it = _box_node_window(box, grid)
        if ix.size == 0 or it.size == 0:
            continue
        xw = xs[ix]
        tw = ts[it]
        chi = cutoff_values(box, [xw, tw], L)
        if not np.any(chi > 0):
            continue
        P = box.period
        pts = np.stack(np.broadcast_arrays(np.mod(xw[:, None] / P, 1.0), np.mod(tw[None, :] / P, 1.0)), axis=-1)
        window = np.zeros((ix.size, it.size))
        for i in range(grid.dim):
            phi = interp_nodal(cs.grid, cs.phi[i].values, pts)
            window += phi * du[i][np.ix_(ix, it)]
        out[np.ix_(ix, it)] += P * chi * window
    return ScalarField(grid, out)


def _is_zero_corrector(cs: CorrectorSet) -> bool:
    return all(s == 0.0 for s in cs.diagnostics.get("phi_sup", [1.0]))


def _box_node_window(box: WhitneyBox, grid: Grid):
    """Node indices covering the box (x wraps laterally, t clamps)."""
    nx = grid.cell_shape[0]
    hx, ht = grid.h[0], grid.h[1]
    L = grid.hi[0] - grid.lo[0]
    i0 = int(math.floor((box.x_lo(0) - grid.lo[0]) / hx))
    i1 = int(math.ceil((box.x_hi(0) - grid.lo[0]) / hx)) + 1
    if i1 - i0 >= nx:
        ix = np.arange(nx)
    else:
        ix = np.arange(i0, i1) % nx
    j0 = max(0, int(math.floor((box.t_lo - grid.lo[1]) / ht)))
    j1 = min(grid.node_shape[1], int(math.ceil((box.t_hi - grid.lo[1]) / ht)) + 1)
    return ix, np.arange(j0, j1)


def _box_cell_window(box: WhitneyBox, grid: Grid):
    nx = grid.cell_shape[0]
    hx, ht = grid.h[0], grid.h[1]
    i0 = int(math.floor((box.x_lo(0) - grid.lo[0]) / hx + 0.5))
    i1 = i0 + int(round(box.side / hx))
    ix = np.arange(i0, i1) % nx
    j0 = max(0, int(math.floor((box.t_lo - grid.lo[1]) / ht + 0.5)))
    j1 = min(grid.cell_shape[1], j0 + int(round(box.side / ht)))
    return ix, np.arange(j0, j1)


def _window_gradient(nodal: np.ndarray, hx: float, ht: float):
    """Q1 center gradient of a nodal window (shape (m+1, n+1) -> (m, n))."""
    gx = (nodal[1:, :] - nodal[:-1, :]) / hx
    gx = 0.5 * (gx[:, 1:] + gx[:, :-1])
    gt = (nodal[:, 1:] - nodal[:, :-1]) / ht
    gt = 0.5 * (gt[1:, :] + gt[:-1, :])
    return gx, gt


@dataclass
class ErrorBudget:
    tent: Tent
    bulk: float
    layer: float
    f_total: float
    z_energy: float            # int_{T_R} |grad z|^2
    z_energy_weighted: float   # (R ^ 1) * z_energy
    z_mass: float              # R^-2 int_{T_2R} z^2
    target: float              # R^N
    per_box: list = field(default_factory=list)
    f_field: VectorField | None = None


def _boxes_meeting_tent(layout: WhitneyLayout, tent: Tent, grid: Grid, factor: float = 2.0) -> list:
    segs = tent_segments(Tent(tent.x, min(factor * tent.R, grid.hi[-1] - 1e-12)), grid)
    out = []
    for box in layout.boxes:
        if box.t_lo >= min(factor * tent.R, 1.0):
            continue
        blo, bhi = box.x_lo(0), box.x_hi(0)
        L = grid.hi[0] - grid.lo[0]
        hit = False
        for lo, hi in segs:
            for shift in (-L, 0.0, L):
                if blo + shift < hi[0] and bhi + shift > lo[0]:
                    hit = True
        if hit:
            out.append(box)
    return out


def error_budget(u: ScalarField, ubar: ScalarField, u2s: ScalarField, layout: WhitneyLayout,
                 correctors: dict, tent: Tent, A: MatrixField, abars: dict) -> ErrorBudget:
    """Evaluate the terms controlling int |grad(u - u2s)|^2 over the tent.

    bulk:   sum over boxes of (period * Cs)^2 int chi^2 |grad^2 ubar|^2,
    layer:  sum over boxes of (osc^2 + Cs^2 (eps/eta)^2) int_{W \\ W_shrunk} |grad ubar|^2,
    f_total: int_{T_2R} |f|^2 for the defect flux f of the error equation,
    plus the energy and mass of z = u - u2s measured against the target R^N.

    Cs is the measured corrector bound sup_Q(|phi| + |sigma|) of the box
    template and osc the oscillation sup_W |A - Abar| of the assembled field,
    i.e. the constants usually hidden in the budget inequalities; with them
    every term vanishes identically for constant-coefficient templates.
    """
    grid = u.grid
    hx, ht = grid.h[0], grid.h[1]
    L = grid.hi[0] - grid.lo[0]
    gbar = gradient(ubar).values
    grad2 = np.sum(gbar * gbar, axis=-1)
    boxes = _boxes_meeting_tent(layout, tent, grid)

    bulk = 0.0
    layer = 0.0
    per_box = []
    fvals = np.zeros(grid.cell_shape + (2,))
    xs_c = grid.cell_centers(0)
    ts_c = grid.cell_centers(1)
    xs_n = grid.node_coordinates(0)
    ts_n = grid.node_coordinates(1)
    g_nodal = [cell_to_node_average(gbar[..., a], grid) for a in range(2)]

    for box in boxes:
        cs = correctors[box.label]
        Abar_box = abars[box.label]
        csup = max(cs.diagnostics.get("phi_sigma_sup", [0.0])) if cs.diagnostics else max(
            cs.sup_phi_sigma(i) for i in range(cs.dim))
        ix, it = _box_cell_window(box, grid)
        if ix.size == 0 or it.size == 0:
            continue
        xw, tw = xs_c[ix], ts_c[it]
        win = np.ix_(ix, it)
        chi_c = cutoff_values(box, [xw, tw], L)

        # oscillation of the assembled field around the box homogenized matrix
        Awin = A.values[win]
        dA = Awin - Abar_box
        mean = 0.5 * (dA[..., 0, 0] + dA[..., 1, 1])
        rad = np.sqrt((0.5 * (dA[..., 0, 0] - dA[..., 1, 1])) ** 2 + dA[..., 0, 1] ** 2)
        osc = float(np.max(np.abs(mean) + rad))

        # box-aware Hessian: difference the cell gradients inside the box only
        g0 = gbar[..., 0][win]
        g1 = gbar[..., 1][win]
        h2 = np.zeros_like(g0)
        for comp in (g0, g1):
            da, db = np.gradient(comp, hx, ht, edge_order=1)
            h2 += da**2 + db**2
        bulk_box = (box.period * csup) ** 2 * float(np.sum(chi_c**2 * h2)) * grid.cell_volume
        bulk += bulk_box

        lo_full, hi_full = box.bounds(0.0)
        lo_shr, hi_shr = box.bounds(box.eta)
        full = _integrate_wrapped(grad2, grid, lo_full, hi_full)
        shr = _integrate_wrapped(grad2, grid, lo_shr, hi_shr)
        layer_box = (osc**2 + (csup * box.eps / box.eta) ** 2) * max(full - shr, 0.0)
        layer += layer_box

        # defect flux on the box; node window aligned with the cell window
        P = box.period
        ixn = np.concatenate([ix, [(ix[-1] + 1) % grid.cell_shape[0]]])
        itn = np.arange(it[0], it[-1] + 2)
        chi_n = cutoff_values(box, [xs_n[ixn % grid.node_shape[0]], ts_n[itn]], L)
        pts_c = np.stack(np.broadcast_arrays(np.mod(xw[:, None] / P, 1.0), np.mod(tw[None, :] / P, 1.0)), axis=-1)
        term = np.zeros(g0.shape + (2,))
        for i in range(2):
            nodal = chi_n * g_nodal[i][np.ix_(ixn % grid.node_shape[0], itn)]
            gx, gt = _window_gradient(nodal, hx, ht)
            phi_c = interp_nodal(cs.grid, cs.phi[i].values, pts_c)
            s01 = interp_nodal(cs.grid, cs.sigma_entry(i, 0, 1), pts_c)
            # (A phi - sigma) @ grad(chi d_i ubar), sigma = [[0, s01], [-s01, 0]]
            term[..., 0] += P * ((Awin[..., 0, 0] * phi_c) * gx + (Awin[..., 0, 1] * phi_c - s01) * gt)
            term[..., 1] += P * ((Awin[..., 1, 0] * phi_c + s01) * gx + (Awin[..., 1, 1] * phi_c) * gt)
        gb = np.stack([g0, g1], axis=-1)
        term += (1.0 - chi_c)[..., None] * np.einsum("...ab,...b->...a", dA, gb)
        fvals[win] += term
        per_box.append({
            "k": box.k, "j": box.j, "eps": box.eps, "eta": box.eta,
            "bulk": bulk_box, "layer": layer_box, "corrector_sup": csup, "osc": osc,
            "chi_grad_bound": 1.875 / (0.25 * box.eta * box.side),
        })

    f2 = np.sum(fvals * fvals, axis=-1)
    t2 = Tent(tent.x, min(2.0 * tent.R, grid.hi[-1] - 1e-12))
    f_total = sum(integrate(f2, seg, grid=grid) for seg in tent_segments(t2, grid))

    z = u.values - u2s.values
    gz = gradient(ScalarField(grid, z)).values
    gz2 = np.sum(gz * gz, axis=-1)
    z_energy = sum(integrate(gz2, seg, grid=grid) for seg in tent_segments(tent, grid))
    zc = 0.25 * (z[:-1, :-1] + z[1:, :-1] + z[:-1, 1:] + z[1:, 1:]) if not grid.spec.periodic[0] else None
    if zc is None:
        zpad = np.concatenate([z, z[:1]], axis=0)
        zc = 0.25 * (zpad[:-1, :-1] + zpad[1:, :-1] + zpad[:-1, 1:] + zpad[1:, 1:])
    z_mass = sum(integrate(zc**2, seg, grid=grid) for seg in tent_segments(t2, grid)) / tent.R**2
    N = grid.dim - 1
    return ErrorBudget(
        tent=tent, bulk=float(bulk), layer=float(layer), f_total=float(f_total),
        z_energy=float(z_energy), z_energy_weighted=float(min(tent.R, 1.0) * z_energy),
        z_mass=float(z_mass), target=float(tent.R**N), per_box=per_box,
        f_field=VectorField(grid, fvals),
    )


def _integrate_wrapped(cellvals: np.ndarray, grid: Grid, lo: np.ndarray, hi: np.ndarray) -> float:
    """Integrate over a box whose horizontal extent may stick out laterally."""
    L = grid.hi[0] - grid.lo[0]
    lo = np.array(lo, dtype=float)
    hi = np.array(hi, dtype=float)
    lo[-1] = max(lo[-1], grid.lo[-1])
    hi[-1] = min(hi[-1], grid.hi[-1])
    if hi[-1] <= lo[-1]:
        return 0.0
    total = 0.0
    xlo, xhi = lo[0], hi[0]
    if xhi - xlo >= L - 1e-15:
        pieces = [(grid.lo[0], grid.hi[0])]
    else:
        s = math.fmod(xlo - grid.lo[0], L)
        if s < 0:
            s += L
        s += grid.lo[0]
        e = s + (xhi - xlo)
        pieces = [(s, min(e, grid.hi[0]))]
        if e > grid.hi[0] + 1e-15:
            pieces.append((grid.lo[0], e - L))
    for (a, b) in pieces:
        total += integrate(cellvals, (np.array([a, lo[-1]]), np.array([b, hi[-1]])), grid=grid)
    return float(total)
