"""Whitney decomposition of the strip and the locally periodic coefficient
field built on it.

The strip 0 < t < 1 over [0, x_extent)^N is tiled, per generation k < 0, by
boxes

    W_kj = (2^k j + [-2^(k-1), 2^(k-1))^N) x [2^k, 2^(k+1)),

so each box has side comparable to its distance to the bottom boundary.  On
W_kj the coefficient equals a periodic template rescaled to period
``2^k eps_kj``; above t = 1 it is a constant matrix.  The oscillation
schedule ``eps_kj = min(1, c 2^(alpha k))`` controls how fast homogenization
kicks in towards the boundary; the boundary-layer width ``eta_kj`` is derived
from it.  For finite computations only generations k >= -K are resolved;
below that the field is extended by the per-box homogenized matrices, and
every report carries that band separately.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cell import PeriodicTemplate
from .errors import ConfigError, ResolutionError
from .grid import Grid, MatrixField, ScalarField


@dataclass(frozen=True)
class EpsilonSchedule:
    """Oscillation schedule eps(k) = min(1, c * 2^(exponent * k))."""

    mode: str                      # theorem | laminate | constant | custom
    p: float | None = None         # higher-integrability exponent, > 1
    c: float = 1.0
    custom_exponent: float | None = None

    def __post_init__(self):
        if self.mode not in ("theorem", "laminate", "constant", "custom"):
            raise ConfigError(f"unknown schedule mode {self.mode!r}")
        if self.mode == "theorem":
            if self.p is None or self.p <= 1.0:
                raise ConfigError(f"theorem schedule needs p > 1, got {self.p}")
        if self.mode == "custom" and self.custom_exponent is None:
            raise ConfigError("custom schedule needs custom_exponent")
        if self.c <= 0:
            raise ConfigError(f"schedule prefactor must be positive, got {self.c}")

    @property
    def exponent(self) -> float:
        if self.mode == "theorem":
            return (3.0 * self.p - 1.0) / (2.0 * (self.p - 1.0))
        if self.mode == "laminate":
            return 1.5
        if self.mode == "constant":
            return 1.0
        return float(self.custom_exponent)


def epsilon_for(k: int, schedule: EpsilonSchedule) -> float:
    """Raw schedule value for generation k < 0 (before period rounding)."""
    if k >= 0:
        raise ValueError(f"generation must be negative, got k={k}")
    return min(1.0, schedule.c * 2.0 ** (schedule.exponent * k))


def round_epsilon(eps: float) -> float:
    """Snap to 1/integer so the box holds a whole number of periods."""
    return 1.0 / math.ceil(1.0 / eps - 1e-12)


def eta_for(eps: float, p: float) -> float:
    """Boundary-layer width eta = min(1/2, eps^(2p/(3p-1))).

    The exponent balances the layer loss against the corrector commutator
    term; it tends to 2/3 as p -> inf, and since it is < 1 the Step-1 proviso
    eta >= eps holds automatically for eps <= 1/2.
    """
    if not (0.0 < eps <= 1.0):
        raise ValueError(f"eps must be in (0, 1], got {eps}")
    q = 2.0 / 3.0 if math.isinf(p) else 2.0 * p / (3.0 * p - 1.0)
    return min(0.5, eps**q)


@dataclass(frozen=True)
class WhitneyBox:
    """One Whitney box with its oscillation and layer parameters."""

    k: int
    j: tuple
    eps: float
    eta: float
    label: str = ""

    @property
    def side(self) -> float:
        return 2.0**self.k

    @property
    def t_lo(self) -> float:
        return 2.0**self.k

    @property
    def t_hi(self) -> float:
        return 2.0 ** (self.k + 1)

    @property
    def period(self) -> float:
        return self.side * self.eps

    def x_center(self, axis: int) -> float:
        return self.side * self.j[axis]

    def x_lo(self, axis: int) -> float:
        return self.side * (self.j[axis] - 0.5)

    def x_hi(self, axis: int) -> float:
        return self.side * (self.j[axis] + 0.5)

    def center(self) -> tuple:
        return tuple(self.x_center(a) for a in range(len(self.j))) + (1.5 * self.side,)

    def bounds(self, shrink: float = 0.0):
        """Per-axis (lo, hi) of the box shrunk by the given fraction of its
        side (shrink = eta gives the cutoff plateau region)."""
        half = 0.5 * self.side * (1.0 - shrink)
        lo = [self.x_center(a) - half for a in range(len(self.j))]
        hi = [self.x_center(a) + half for a in range(len(self.j))]
        tmid = 1.5 * self.side
        lo.append(tmid - half)
        hi.append(tmid + half)
        return np.array(lo), np.array(hi)


@dataclass
class WhitneyLayout:
    x_extent: int
    K: int
    boxes: list
    schedule: EpsilonSchedule | None = None
    p: float = 3.0

    def generation(self, k: int) -> list:
        return [b for b in self.boxes if b.k == k]

    def __len__(self):
        return len(self.boxes)


def whitney_decompose(x_extent: int, K: int, schedule: EpsilonSchedule | None = None,
                      p: float = 3.0, label_for=None) -> WhitneyLayout:
    """All boxes of generations k = -1..-K over [0, x_extent)^N x (0, 1).

    ``x_extent`` must be a positive integer so every generation tiles the
    slab exactly (the j = 0 box wraps around laterally).  N is fixed to 1
    here; higher N layouts are produced on demand by the caller via the
    same box dataclass.
    """
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    if x_extent < 1 or int(x_extent) != x_extent:
        raise ValueError(f"x_extent must be a positive integer, got {x_extent}")
    boxes = []
    for k in range(-1, -K - 1, -1):
        count = int(x_extent) * 2**(-k)
        if schedule is not None:
            eps = round_epsilon(epsilon_for(k, schedule))
            eta = eta_for(eps, p)
        else:
            eps, eta = 1.0, 0.5
        for j in range(count):
            label = label_for(k, (j,)) if label_for else ""
            boxes.append(WhitneyBox(k=k, j=(j,), eps=eps, eta=eta, label=label))
    return WhitneyLayout(int(x_extent), K, boxes, schedule, p)


def horizontal_index(x: float, k: int, x_extent: int) -> int:
    """Index j of the generation-k box containing horizontal coordinate x."""
    side = 2.0**k
    return int(math.floor(x / side + 0.5)) % int(round(x_extent / side))


@dataclass
class CoefficientSpec:
    """Everything needed to realize the coefficient field on a grid."""

    templates: dict                 # label -> PeriodicTemplate
    assignment: dict                # {"rule": "single", "template": lbl} or
                                    # {"rule": "alternate", "templates": [a, b]}
    A_inf: np.ndarray
    schedule: EpsilonSchedule
    K: int
    lam: float = 0.1
    x_extent: int = 1
    p: float = 3.0

    def __post_init__(self):
        self.A_inf = np.asarray(self.A_inf, dtype=float)
        rule = self.assignment.get("rule")
        if rule == "single":
            lbl = self.assignment.get("template")
            if lbl not in self.templates:
                raise ConfigError(f"assignment references unknown template {lbl!r}")
        elif rule == "alternate":
            pair = self.assignment.get("templates", ())
            if len(pair) != 2 or any(l not in self.templates for l in pair):
                raise ConfigError(f"alternate assignment needs two known templates, got {pair}")
        else:
            raise ConfigError(f"unknown assignment rule {rule!r}")
        if self.K < 1:
            raise ConfigError(f"K must be >= 1, got {self.K}")
        lo = np.linalg.eigvalsh(self.A_inf).min()
        if lo < self.lam - 1e-12:
            raise ConfigError(f"A_inf violates ellipticity: min eigenvalue {lo:.3e} < lambda={self.lam}")

    def label_for(self, k: int, j: tuple) -> str:
        if self.assignment["rule"] == "single":
            return self.assignment["template"]
        pair = self.assignment["templates"]
        return pair[(k + sum(j)) % 2]

    def epsilon(self, k: int) -> float:
        return round_epsilon(epsilon_for(k, self.schedule))

    def finest_period(self) -> float:
        return 2.0**(-self.K) * self.epsilon(-self.K)

    def build_layout(self) -> WhitneyLayout:
        return whitney_decompose(self.x_extent, self.K, self.schedule, self.p, label_for=self.label_for)


def check_resolution(spec: CoefficientSpec, grid: Grid, cells_per_period: int = 8):
    """Reject grids that cannot resolve the finest coefficient period."""
    period = spec.finest_period()
    for a in range(grid.dim):
        if grid.h[a] * cells_per_period > period * (1.0 + 1e-12):
            need = [math.ceil(cells_per_period * (grid.hi[b] - grid.lo[b]) / period) for b in range(grid.dim)]
            raise ResolutionError(
                f"axis {a}: spacing {grid.h[a]:.3e} too coarse for finest period {period:.3e} "
                f"(need >= {cells_per_period} cells per period, i.e. cells >= {need})"
            )


def _band_rows(tc: np.ndarray, lo: float, hi: float) -> np.ndarray:
    return np.nonzero((tc >= lo) & (tc < hi))[0]


def _gather_template(template: PeriodicTemplate, xc, tc_band, period):
    pts = np.stack(np.broadcast_arrays(xc[:, None] / period, tc_band[None, :] / period), axis=-1)
    return template.evaluate(np.mod(pts, 1.0))


def assemble_A(spec: CoefficientSpec, grid: Grid, abars: dict) -> MatrixField:
    """Realize the locally periodic field on the cells of a strip grid.

    Cells are sampled at their centers.  For t >= 1 the field is the constant
    A_inf; on each resolved Whitney box it is the assigned template evaluated
    at (center / period) mod 1; below the resolved strip (t < 2^-K) it is
    extended by the homogenized matrix of the box that would live there.
    """
    if grid.dim != 2:
        raise NotImplementedError("strip assembly is implemented for N = 1 (dim = 2)")
    check_resolution(spec, grid)
    for lbl in spec.templates:
        if lbl not in abars:
            raise ConfigError(f"missing homogenized matrix for template {lbl!r}")
    xc = grid.cell_centers(0)
    tc = grid.cell_centers(1)
    nx, nt = grid.cell_shape
    values = np.empty((nx, nt, 2, 2))

    rows_top = np.nonzero(tc >= 1.0)[0]
    values[:, rows_top] = spec.A_inf

    k = -1
    while True:
        rows = _band_rows(tc, 2.0**k, min(1.0, 2.0 ** (k + 1)))
        if rows.size:
            if k >= -spec.K:
                eps = spec.epsilon(k)
                period = 2.0**k * eps
                if spec.assignment["rule"] == "single":
                    lbl = spec.assignment["template"]
                    values[:, rows] = _gather_template(spec.templates[lbl], xc, tc[rows], period)
                else:
                    a_lbl, b_lbl = spec.assignment["templates"]
                    va = _gather_template(spec.templates[a_lbl], xc, tc[rows], period)
                    vb = _gather_template(spec.templates[b_lbl], xc, tc[rows], period)
                    j = np.floor(xc / 2.0**k + 0.5).astype(int) % int(round(spec.x_extent / 2.0**k))
                    parity = (k + j) % 2
                    values[:, rows] = np.where(parity[:, None, None, None] == 0, va, vb)
            else:
                j = np.floor(xc / 2.0**k + 0.5).astype(int) % int(round(spec.x_extent / 2.0**k))
                parity = (k + j) % 2
                if spec.assignment["rule"] == "single":
                    values[:, rows] = abars[spec.assignment["template"]]
                else:
                    a_lbl, b_lbl = spec.assignment["templates"]
                    sel = np.where(parity == 0, 0, 1)
                    stack = np.stack([abars[a_lbl], abars[b_lbl]])
                    values[:, rows] = stack[sel][:, None]
        if 2.0**k < tc.min():
            break
        k -= 1

    out = MatrixField(grid, values)
    out.require_elliptic(spec.lam)
    return out


def assemble_Abar(spec: CoefficientSpec, grid: Grid, abars: dict) -> MatrixField:
    """The piecewise-constant homogenized companion field on the same grid."""
    if grid.dim != 2:
        raise NotImplementedError("strip assembly is implemented for N = 1 (dim = 2)")
    for lbl in spec.templates:
        if lbl not in abars:
            raise ConfigError(f"missing homogenized matrix for template {lbl!r}")
    xc = grid.cell_centers(0)
    tc = grid.cell_centers(1)
    nx, nt = grid.cell_shape
    values = np.empty((nx, nt, 2, 2))
    values[:, tc >= 1.0] = spec.A_inf
    k = -1
    while True:
        rows = _band_rows(tc, 2.0**k, min(1.0, 2.0 ** (k + 1)))
        if rows.size:
            if spec.assignment["rule"] == "single":
                values[:, rows] = abars[spec.assignment["template"]]
            else:
                a_lbl, b_lbl = spec.assignment["templates"]
                j = np.floor(xc / 2.0**k + 0.5).astype(int) % int(round(spec.x_extent / 2.0**k))
                sel = ((k + j) % 2).astype(int)
                stack = np.stack([abars[a_lbl], abars[b_lbl]])
                values[:, rows] = stack[sel][:, None]
        if 2.0**k < tc.min():
            break
        k -= 1
    out = MatrixField(grid, values)
    out.require_elliptic(spec.lam)
    return out


def _smoothstep(s: np.ndarray) -> np.ndarray:
    s = np.clip(s, 0.0, 1.0)
    return s**3 * (6.0 * s**2 - 15.0 * s + 10.0)


def cutoff_values(box: WhitneyBox, coords: list, x_extent: float) -> np.ndarray:
    """Evaluate the box cutoff at a tensor grid of coordinates.

    The profile is 1 inside the (1 - eta)-shrunken box, 0 outside the
    (1 - eta/2)-shrunken box, and a quintic smoothstep per axis in between;
    the horizontal distance is measured modulo ``x_extent``.
    """
    N = len(box.j)
    w = 0.5 * box.side
    inner = (1.0 - box.eta) * w
    width = 0.5 * box.eta * w
    out = None
    for a, xs in enumerate(coords):
        if a < N:
            c = box.x_center(a)
            d = np.abs(np.mod(xs - c + 0.5 * x_extent, x_extent) - 0.5 * x_extent)
        else:
            d = np.abs(xs - 1.5 * box.side)
        prof = 1.0 - _smoothstep((d - inner) / width)
        shape = [1] * len(coords)
        shape[a] = prof.size
        prof = prof.reshape(shape)
        out = prof if out is None else out * prof
    return out


def chi_gradient_bound(box: WhitneyBox) -> float:
    """Componentwise bound on |grad chi|: 15/8 / (transition width)."""
    return 1.875 / (0.25 * box.eta * box.side)


def cutoff_chi(box: WhitneyBox, grid: Grid) -> ScalarField:
    """The cutoff as a nodal field on a strip grid (lateral wrap respected)."""
    coords = [grid.node_coordinates(a) for a in range(grid.dim)]
    x_extent = grid.hi[0] - grid.lo[0]
    return ScalarField(grid, cutoff_values(box, coords, x_extent))
