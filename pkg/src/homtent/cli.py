"""Command-line entry point.

Subcommands (each takes ``--config <path>``, ``--out <dir>``,
``--deterministic``):

* ``cell``         compute and cache correctors, write Abar.json per template
* ``pipeline``     full run: fields, both solves, tent functionals, budget,
                   ``summary.json`` with every acceptance metric
* ``convergence``  1-D oracle error curve and strip manufactured-solution rates
* ``carleson``     assembly + solves + Carleson reports only
* ``dkp``          assembly + DKP oscillation report only (no solves)

Exit codes: 0 success, 2 configuration error, 3 solver failure.

Emitted files (pipeline): ``summary.json`` (keys carleson_sup_u,
carleson_sup_ubar, carleson_ratio_u, dkp_total, dkp_per_generation, z_energy,
z_mass, budget_bulk, budget_layer, ...), ``manifest.json``, CSV tables
(carleson_u.csv / carleson_ubar.csv: x, R, raw, normalized, subres;
dkp.csv: slab, contribution; budget_boxes.csv: k, j, eps, eta, bulk, layer,
chi_grad_bound), and field dumps (``.npy`` flat binary, or CSV with
row = cell index + value when ``dump_format`` is ``csv``).
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from . import _kernels
from .analysis import Tent, carleson_sup, dkp_carleson_integral
from .errors import ConfigError, SolverError
from .field import CoefficientSpec, assemble_A
from .runner import (ExperimentConfig, _resolve_A_inf, _strip_grid, _write_csv,
                     boundary_function, run_cell, run_convergence, run_pipeline)
from .solve import BoundaryData, dirichlet_solve


def _apply_determinism(on: bool):
    if on:
        _kernels.set_num_threads(1)


def _load_config(path) -> ExperimentConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    return ExperimentConfig.from_json(p)


def _cmd_cell(args) -> int:
    config = _load_config(args.config)
    run_cell(config, Path(args.out), args.deterministic)
    return 0


def _cmd_pipeline(args) -> int:
    config = _load_config(args.config)
    run_pipeline(config, Path(args.out), args.deterministic)
    return 0


def _cmd_convergence(args) -> int:
    config = _load_config(args.config)
    run_convergence(config, Path(args.out), args.deterministic)
    return 0


def _cmd_carleson(args) -> int:
    config = _load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cell_results = run_cell(config, out, args.deterministic)
    abars = {lbl: cs.Abar for lbl, (cs, _) in cell_results.items()}
    coeff = CoefficientSpec(
        templates=config.build_templates(), assignment=config.assignment,
        A_inf=_resolve_A_inf(config, abars), schedule=config.build_schedule(),
        K=config.K, lam=config.lam, x_extent=config.x_extent, p=config.p)
    grid = _strip_grid(config)
    A = assemble_A(coeff, grid, abars)
    bc = BoundaryData(f=boundary_function(config.boundary, config.seed), t_top=config.t_top)
    rep = dirichlet_solve(A, bc, tol=config.solver_tol())
    report = carleson_sup(rep.u, config.tent_radii(), sub_resolution_t=2.0 ** (-config.K))
    _write_csv(out / "carleson_u.csv", report.to_csv_rows())
    (out / "carleson.json").write_text(json.dumps(
        {"sup": report.sup, "ratio": report.ratio,
         "per_radius_max": {str(k): v for k, v in report.per_radius_max.items()}},
        indent=2, sort_keys=True))
    return 0


def _cmd_dkp(args) -> int:
    config = _load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cell_results = run_cell(config, out, args.deterministic)
    abars = {lbl: cs.Abar for lbl, (cs, _) in cell_results.items()}
    coeff = CoefficientSpec(
        templates=config.build_templates(), assignment=config.assignment,
        A_inf=_resolve_A_inf(config, abars), schedule=config.build_schedule(),
        K=config.K, lam=config.lam, x_extent=config.x_extent, p=config.p)
    grid = _strip_grid(config)
    A = assemble_A(coeff, grid, abars)
    tent = Tent(tuple(config.tents.get("dkp_center", (0.0,))), config.tents.get("dkp_R", 0.5))
    total, breakdown = dkp_carleson_integral(A, tent, config.K)
    rows = [("slab", "contribution")] + [(str(k), float(v)) for k, v in sorted(
        breakdown.items(), key=lambda kv: (isinstance(kv[0], str), kv[0] if isinstance(kv[0], int) else 0))]
    _write_csv(out / "dkp.csv", rows)
    (out / "dkp.json").write_text(json.dumps(
        {"total": total, "breakdown": {str(k): v for k, v in breakdown.items()}}, indent=2, sort_keys=True))
    return 0


_COMMANDS = {
    "cell": _cmd_cell,
    "pipeline": _cmd_pipeline,
    "convergence": _cmd_convergence,
    "carleson": _cmd_carleson,
    "dkp": _cmd_dkp,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="homtent", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="JSON experiment configuration")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--deterministic", action="store_true",
                        help="single-threaded kernels; bit-reproducible outputs")
    args = parser.parse_args(argv)
    _apply_determinism(args.deterministic)
    t0 = time.time()
    try:
        rc = _COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 2
    except SolverError as e:
        print(f"solver failure: {e}", file=sys.stderr)
        return 3
    print(f"{args.command} finished in {time.time() - t0:.1f}s -> {args.out}")
    return rc


if __name__ == "__main__":
    sys.exit(main())
