"""Experiment orchestration: configuration ingestion, corrector caching, the
full pipeline (field assembly, strip solves, tent functionals, error budget)
and the convergence studies.  The CLI in ``cli.py`` is a thin wrapper.

Configuration is a JSON document; see ``configs/`` and the README for the
schema.  Every run writes a manifest with the canonical config hash and the
corrector cache keys, and re-running with ``deterministic=True`` reproduces
all emitted numbers exactly.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, _kernels
from .analysis import (CarlesonReport, Tent, carleson_sup, dkp_carleson_integral,
                       error_budget, two_scale_expand)
from .cell import (PeriodicTemplate, checkerboard_template, explicit_template,
                   identity_template, laminate_template, load_corrector_set,
                   random_checkerboard_template, save_corrector_set, smooth_trig_template,
                   solve_cell_problems)
from .errors import ConfigError
from .field import CoefficientSpec, EpsilonSchedule, assemble_A, assemble_Abar
from .grid import Grid, GridSpec, ScalarField, make_grid
from .oracle1d import Profile1D, fit_loglog_slope, l2_error_curve
from .solve import (BoundaryData, _prolong_nodes, dirichlet_solve,
                    max_principle_violation, solve_error_equation)

def _smoothstep(s):
    s = np.clip(s, 0.0, 1.0)
    return s**3 * (6.0 * s**2 - 15.0 * s + 10.0)


def build_template(label: str, spec: dict) -> PeriodicTemplate:
    kind = spec.get("type")
    if kind == "laminate":
        return laminate_template(spec["values"], axis=spec.get("axis", 0), label=label)
    if kind == "checkerboard":
        return checkerboard_template(spec["values"], blocks=spec.get("blocks", 2), label=label)
    if kind == "identity":
        return identity_template(label=label)
    if kind == "random_checkerboard":
        return random_checkerboard_template(spec.get("blocks", 4), spec.get("lam", 0.25),
                                            spec.get("seed", 0), label=label)
    if kind == "smooth_trig":
        return smooth_trig_template(spec.get("cells", 128), spec.get("contrast", 0.6), label=label)
    if kind == "explicit":
        return explicit_template(np.asarray(spec["values"], dtype=float), label=label)
    raise ConfigError(f"unknown template type {kind!r} for {label!r}")


def boundary_function(spec: dict, seed: int = 0):
    """Named bottom-data families, sup-normalized to 1."""
    family = spec.get("family", "cosine")
    if family == "cosine":
        m = spec.get("frequency", 1)
        return lambda x: np.cos(2.0 * np.pi * m * x)
    if family == "step_smoothed":
        w = spec.get("width", 0.1)

        def f(x):
            s = np.sin(2.0 * np.pi * np.asarray(x))
            return 2.0 * _smoothstep((s + w) / (2.0 * w)) - 1.0

        return f
    if family == "random_trig":
        M = spec.get("max_level", 4)
        rng = np.random.default_rng(spec.get("seed", seed))
        phases = rng.uniform(0.0, 2.0 * np.pi, M + 1)
        xs = np.arange(1 << 14) / float(1 << 14)
        raw = sum(np.cos(2.0 * np.pi * (1 << m) * xs + phases[m]) for m in range(M + 1))
        norm = float(np.abs(raw).max())

        def f(x):
            x = np.asarray(x)
            return sum(np.cos(2.0 * np.pi * (1 << m) * x + phases[m]) for m in range(M + 1)) / norm

        return f
    raise ConfigError(f"unknown boundary family {family!r}")


@dataclass
class ExperimentConfig:
    name: str
    templates: dict
    assignment: dict
    schedule: dict
    grid_cells: tuple
    A_inf: object = "abar"
    seed: int = 0
    lam: float = 0.2
    K: int = 4
    p: float = 3.0
    x_extent: int = 1
    t_top: float = 2.0
    cell_resolution: int = 128
    boundary: dict = field(default_factory=lambda: {"family": "cosine"})
    tents: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    dump_format: str = "npy"

    @classmethod
    def from_json(cls, path_or_dict) -> "ExperimentConfig":
        if isinstance(path_or_dict, (str, Path)):
            raw = json.loads(Path(path_or_dict).read_text())
        else:
            raw = dict(path_or_dict)
        try:
            cfg = cls(
                name=raw["name"],
                templates=raw["templates"],
                assignment=raw["assignment"],
                schedule=raw["schedule"],
                grid_cells=tuple(raw["grid"]["cells"]),
                A_inf=raw.get("A_inf", "abar"),
                seed=raw.get("seed", 0),
                lam=raw.get("lambda", 0.2),
                K=raw.get("K", 4),
                p=raw.get("p", raw.get("schedule", {}).get("p", 3.0) or 3.0),
                x_extent=raw.get("x_extent", 1),
                t_top=raw.get("t_top", 2.0),
                cell_resolution=raw.get("cell_resolution", 128),
                boundary=raw.get("boundary", {"family": "cosine"}),
                tents=raw.get("tents", {}),
                solver=raw.get("solver", {}),
                dump_format=raw.get("dump_format", "npy"),
            )
        except KeyError as e:
            raise ConfigError(f"missing configuration key: {e}") from None
        return cfg

    def canonical(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, default=str)

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    def build_templates(self) -> dict:
        return {lbl: build_template(lbl, spec) for lbl, spec in self.templates.items()}

    def build_schedule(self) -> EpsilonSchedule:
        s = dict(self.schedule)
        return EpsilonSchedule(mode=s.get("mode", "constant"), p=s.get("p", self.p),
                               c=s.get("c", 1.0), custom_exponent=s.get("custom_exponent"))

    def tent_radii(self) -> list:
        if "radii" in self.tents:
            return [float(r) for r in self.tents["radii"]]
        return [2.0**k for k in range(-4, 1)]

    def solver_tol(self) -> float:
        return float(self.solver.get("tol", 1e-10))


def _cache_key(template: PeriodicTemplate, resolution: int, tol: float) -> str:
    return f"{template.content_hash()}_r{resolution}_t{tol:.0e}"


def run_cell(config: ExperimentConfig, out: Path, deterministic: bool = False) -> dict:
    """Compute (or load) the corrector sets for every configured template."""
    out = Path(out)
    cache_dir = out / "cache"
    templates = config.build_templates()
    tol = config.solver_tol()
    results = {}
    report = {}
    for lbl, tpl in templates.items():
        key = _cache_key(tpl, config.cell_resolution, tol)
        cdir = cache_dir / key
        if (cdir / "Abar.json").exists():
            cs = load_corrector_set(cdir)
        else:
            cs = solve_cell_problems(tpl, config.cell_resolution, tol)
            save_corrector_set(cs, cdir)
        results[lbl] = (cs, key)
        report[lbl] = {"cache_key": key, "Abar": cs.Abar.tolist(), "diagnostics": cs.diagnostics}
    out.mkdir(parents=True, exist_ok=True)
    (out / "abar_report.json").write_text(json.dumps(report, indent=2))
    return results


def _resolve_A_inf(config: ExperimentConfig, abars: dict) -> np.ndarray:
    spec = config.A_inf
    if isinstance(spec, str):
        if spec == "abar":
            lbl = config.assignment.get("template") or config.assignment.get("templates", [None])[0]
            return np.asarray(abars[lbl])
        if spec.startswith("abar:"):
            lbl = spec.split(":", 1)[1]
            if lbl not in abars:
                raise ConfigError(f"A_inf references unknown template {lbl!r}")
            return np.asarray(abars[lbl])
        raise ConfigError(f"cannot interpret A_inf = {spec!r}")
    return np.asarray(spec, dtype=float)


def _write_csv(path: Path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in rows:
            writer.writerow([f"{v:.17g}" if isinstance(v, float) else v for v in row])


def save_field(path: Path, values: np.ndarray, fmt: str = "npy") -> None:
    """Field dump: ``npy`` (flat binary) or ``csv`` (row = indices + value)."""
    if fmt == "none":
        return
    if fmt == "npy":
        np.save(path.with_suffix(".npy"), values)
    elif fmt == "csv":
        with open(path.with_suffix(".csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"i{a}" for a in range(values.ndim)] + ["value"])
            for idx in np.ndindex(values.shape):
                writer.writerow(list(idx) + [f"{values[idx]:.17g}"])
    else:
        raise ConfigError(f"unknown dump format {fmt!r}")


@dataclass
class PipelineResult:
    summary: dict
    u: ScalarField
    ubar_native: ScalarField
    ubar: ScalarField
    u2s: ScalarField
    z: np.ndarray
    carleson_u: CarlesonReport
    carleson_ubar: CarlesonReport
    budget: object
    layout: object
    A: object
    correctors: dict
    abars: dict
    coeff_spec: CoefficientSpec


def _strip_grid(config: ExperimentConfig, cells=None) -> Grid:
    cells = tuple(cells or config.grid_cells)
    return make_grid(GridSpec(2, extent=(float(config.x_extent), config.t_top),
                              cells=cells, periodic=(True, False)))


def _prolong_to(grid_from_values: np.ndarray, coarse_grid: Grid, fine_grid: Grid) -> np.ndarray:
    out = grid_from_values
    g = coarse_grid
    while g.cell_shape != fine_grid.cell_shape:
        nxt = make_grid(GridSpec(2, extent=g.spec.extent, cells=tuple(2 * c for c in g.cell_shape),
                                 origin=g.spec.origin, periodic=g.spec.periodic))
        out = _prolong_nodes(out, nxt)
        g = nxt
        if max(g.cell_shape) > max(fine_grid.cell_shape):
            raise ConfigError("ubar grid does not refine into the main grid by factors of 2")
    return out


def run_pipeline(config: ExperimentConfig, out: Path, deterministic: bool = False) -> PipelineResult:
    """field -> solve (A and Abar) -> analysis, emitting the full report bundle."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    t_start = time.time()
    timings = {}

    cell_results = run_cell(config, out, deterministic)
    correctors = {lbl: cs for lbl, (cs, _) in cell_results.items()}
    cache_keys = {lbl: key for lbl, (_, key) in cell_results.items()}
    abars = {lbl: cs.Abar for lbl, cs in correctors.items()}
    timings["cell"] = time.time() - t_start

    coeff = CoefficientSpec(
        templates=config.build_templates(),
        assignment=config.assignment,
        A_inf=_resolve_A_inf(config, abars),
        schedule=config.build_schedule(),
        K=config.K,
        lam=config.lam,
        x_extent=config.x_extent,
        p=config.p,
    )
    layout = coeff.build_layout()
    grid = _strip_grid(config)
    t0 = time.time()
    A = assemble_A(coeff, grid, abars)
    timings["assemble"] = time.time() - t0

    ffun = boundary_function(config.boundary, config.seed)
    bc = BoundaryData(f=ffun, t_top=config.t_top)
    tol = config.solver_tol()

    t0 = time.time()
    rep_u = dirichlet_solve(A, bc, tol=tol)
    timings["solve_u"] = time.time() - t0

    ubar_cells = config.solver.get("ubar_cells")
    t0 = time.time()
    if ubar_cells and tuple(ubar_cells) != grid.cell_shape:
        ubar_grid = _strip_grid(config, ubar_cells)
        Abar_coarse = assemble_Abar(coeff, ubar_grid, abars)
        rep_ubar = dirichlet_solve(Abar_coarse, bc, tol=tol)
        ubar_native = rep_ubar.u
        ubar_vals = _prolong_to(ubar_native.values, ubar_grid, grid)
        # restore the exact boundary rows lost to interpolation
        ubar_vals[:, 0] = ffun(grid.node_coordinates(0))
        ubar_vals[:, -1] = ubar_native.values[0, -1]
        ubar = ScalarField(grid, ubar_vals)
        z_routes = None
    else:
        rep_ubar = dirichlet_solve(assemble_Abar(coeff, grid, abars), bc, tol=tol)
        ubar_native = rep_ubar.u
        ubar = ubar_native
        z_routes = "pending"
    timings["solve_ubar"] = time.time() - t0

    t0 = time.time()
    u2s = two_scale_expand(ubar, layout, correctors)
    z = rep_u.u.values - u2s.values
    timings["two_scale"] = time.time() - t0

    z_route_disagreement = None
    if z_routes == "pending":
        rep_z = solve_error_equation(A, rhs_nodal=u2s.values, tol=tol)
        num = np.sqrt(np.mean((rep_z.u.values - z) ** 2))
        den = max(np.sqrt(np.mean(z**2)), 1e-30)
        z_route_disagreement = float(num / den)

    radii = config.tent_radii()
    subres_t = 2.0 ** (-config.K)
    t0 = time.time()
    carleson_u = carleson_sup(rep_u.u, radii, sub_resolution_t=subres_t)
    carleson_ubar = carleson_sup(ubar_native, radii, sub_resolution_t=subres_t)
    timings["carleson"] = time.time() - t0

    t0 = time.time()
    dkp_tent = Tent(tuple(config.tents.get("dkp_center", (0.0,) * (grid.dim - 1))),
                    config.tents.get("dkp_R", 0.5))
    dkp_total, dkp_breakdown = dkp_carleson_integral(A, dkp_tent, config.K)
    timings["dkp"] = time.time() - t0

    t0 = time.time()
    budget_tent = Tent(tuple(config.tents.get("budget_center", (0.5 * config.x_extent,) * (grid.dim - 1))),
                       config.tents.get("budget_R", 1.0))
    budget = error_budget(rep_u.u, ubar, u2s, layout, correctors, budget_tent, A, abars)
    timings["budget"] = time.time() - t0

    fvals = ffun(grid.node_coordinates(0))
    kappa = max_principle_violation(rep_u.u, fvals)

    dkp_per_generation = [float(dkp_breakdown.get(k, 0.0)) for k in range(-1, -config.K - 1, -1)]
    summary = {
        "name": config.name,
        "carleson_sup_u": carleson_u.sup,
        "carleson_sup_ubar": carleson_ubar.sup,
        "carleson_ratio_u": carleson_u.ratio,
        "carleson_ratio_ubar": carleson_ubar.ratio,
        "dkp_total": float(dkp_total),
        "dkp_per_generation": dkp_per_generation,
        "dkp_subres": float(dkp_breakdown.get("subres", 0.0)),
        "z_energy": budget.z_energy,
        "z_energy_weighted": budget.z_energy_weighted,
        "z_mass": budget.z_mass,
        "budget_bulk": budget.bulk,
        "budget_layer": budget.layer,
        "budget_f_total": budget.f_total,
        "budget_target": budget.target,
        "max_principle_kappa": float(kappa),
        "osc_f": float(np.max(fvals) - np.min(fvals)),
        "z_route_disagreement": z_route_disagreement,
        "solver": {
            "u_iterations": rep_u.iterations, "u_relres": rep_u.residual, "u_energy": rep_u.energy,
            "ubar_iterations": rep_ubar.iterations, "ubar_relres": rep_ubar.residual,
            "ubar_energy": rep_ubar.energy, "tol": tol,
        },
    }
    _emit_pipeline(out, config, summary, rep_u, ubar_native, u2s, z, carleson_u, carleson_ubar,
                   dkp_breakdown, budget, cache_keys, deterministic)
    timings["total"] = time.time() - t_start
    (out / "timings.json").write_text(json.dumps(timings, indent=2, sort_keys=True))
    summary["timings"] = timings  # in-memory only; summary.json stays reproducible
    return PipelineResult(summary, rep_u.u, ubar_native, ubar, u2s, z, carleson_u, carleson_ubar,
                          budget, layout, A, correctors, abars, coeff)


def _emit_pipeline(out, config, summary, rep_u, ubar_native, u2s, z, carleson_u, carleson_ubar,
                   dkp_breakdown, budget, cache_keys, deterministic):
    out = Path(out)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    _write_csv(out / "carleson_u.csv", carleson_u.to_csv_rows())
    _write_csv(out / "carleson_ubar.csv", carleson_ubar.to_csv_rows())
    dkp_rows = [("slab", "contribution")] + [(str(k), float(v)) for k, v in sorted(
        dkp_breakdown.items(), key=lambda kv: (isinstance(kv[0], str), kv[0] if isinstance(kv[0], int) else 0))]
    _write_csv(out / "dkp.csv", dkp_rows)
    box_rows = [("k", "j", "eps", "eta", "bulk", "layer", "corrector_sup", "osc", "chi_grad_bound")]
    for r in budget.per_box:
        box_rows.append((r["k"], r["j"][0], r["eps"], r["eta"], r["bulk"], r["layer"],
                         r["corrector_sup"], r["osc"], r["chi_grad_bound"]))
    _write_csv(out / "budget_boxes.csv", box_rows)
    fmt = config.dump_format
    save_field(out / "u", rep_u.u.values, fmt)
    save_field(out / "ubar", ubar_native.values, fmt)
    save_field(out / "u2s", u2s.values, fmt)
    save_field(out / "z", z, fmt)
    manifest = {
        "config": json.loads(config.canonical()),
        "config_hash": config.config_hash(),
        "cache_keys": cache_keys,
        "version": __version__,
        "numpy": np.__version__,
        "kernels": _kernels.NAME,
        "deterministic": bool(deterministic),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def run_convergence(config: ExperimentConfig, out: Path, deterministic: bool = False) -> dict:
    """1-D oracle error curve plus strip manufactured-solution rate table."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)

    profile = Profile1D(a=(1.0, 3.0), f_nodes=(0.0, 1.0), f_values=(0.0, 1.0))
    eps_list = [2.0**-k for k in range(3, 8)]
    rows = l2_error_curve(profile, eps_list)
    _write_csv(out / "oracle_curve.csv", [("eps", "l2_error", "local_slope")] + [tuple(r) for r in rows])
    slope = fit_loglog_slope(rows)

    from .grid import constant_matrix_field

    errs = []
    ns = [64, 128, 256]
    for n in ns:
        g = _strip_grid(config, (n, 2 * n))
        A = constant_matrix_field(g, np.eye(2))
        bc = BoundaryData(f=lambda x: np.cos(2.0 * np.pi * x), t_top=config.t_top)
        rep = dirichlet_solve(A, bc, tol=config.solver_tol())
        xs = g.node_coordinates(0)[:, None]
        ts = g.node_coordinates(1)[None, :]
        exact = np.cos(2.0 * np.pi * xs) * np.exp(-2.0 * np.pi * ts)
        errs.append(float(np.sqrt(np.mean((rep.u.values - exact) ** 2))))
    rates = [math.log2(errs[i] / errs[i + 1]) for i in range(len(errs) - 1)]
    _write_csv(out / "strip_rates.csv",
               [("cells_x", "l2_error", "rate")] +
               [(ns[i], errs[i], rates[i - 1] if i > 0 else float("nan")) for i in range(len(ns))])

    result = {"oracle_slope": slope, "strip_errors": errs, "strip_rates": rates}
    (out / "convergence.json").write_text(json.dumps(result, indent=2, sort_keys=True))
    return result
