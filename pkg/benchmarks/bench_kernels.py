"""Benchmark the compiled kernel lane against the numpy fallback.

Covers the three hot paths: the 9-point stencil matvec (the inner loop of
every CG iteration), the fused CG vector updates, and the pairwise
operator-norm diameter behind the DKP functional, plus one end-to-end strip
solve per lane.

Usage: python benchmarks/bench_kernels.py [--size 1024] [--solve-size 256]
"""

import argparse
import time

import numpy as np

import homtent._kernels as kern
from homtent._kernels import _ref
from homtent.grid import GridSpec, MatrixField, make_grid
from homtent.solve import BoundaryData, dirichlet_solve


def _time(fn, repeat=5):
    fn()  # warm up
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn()
    return (time.perf_counter() - t0) / repeat


def bench_stencil(n):
    rng = np.random.default_rng(0)
    w = rng.standard_normal((9, n, 2 * n + 1))
    x = rng.standard_normal((n, 2 * n + 1))
    out = np.empty_like(x)
    rows = []
    if kern.COMPILED:
        for nt in (1, kern.get_num_threads()):
            dt = _time(lambda: kern._core.stencil_apply_dot_2d(w, x, out, True, False, nt))
            rows.append((f"compiled[{nt}t]", dt))
    rows.append(("numpy", _time(lambda: _ref.stencil_apply_dot(w, x, (True, False), out), repeat=2)))
    return rows


def bench_vector_ops(n):
    rng = np.random.default_rng(1)
    x, p, r, q = (rng.standard_normal(n * n) for _ in range(4))
    invd = np.abs(rng.standard_normal(n * n)) + 0.5
    rows = []
    if kern.COMPILED:
        rows.append(("compiled", _time(lambda: kern._core.axpy_pair_rr_rho(x, p, r, q, invd, 1e-9, kern.get_num_threads()))))
    rows.append(("numpy", _time(lambda: _ref.axpy_pair_rr_rho(x, p, r, q, invd, 1e-9))))
    return rows


def bench_opnorm(ncells=20000, ns=64):
    rng = np.random.default_rng(2)
    vals = np.ascontiguousarray(rng.standard_normal((ncells, ns, 3)))
    rows = []
    if kern.COMPILED:
        rows.append(("compiled", _time(lambda: kern._core.pairwise_opnorm_diameter(vals, kern.get_num_threads()), repeat=3)))
    rows.append(("numpy", _time(lambda: _ref.pairwise_opnorm_diameter(vals), repeat=1)))
    return rows


def bench_solve(n, force_ref):
    g = make_grid(GridSpec(2, extent=(1.0, 2.0), cells=(n, 2 * n), periodic=(True, False)))
    xc = g.cell_centers(0)[:, None]
    tc = g.cell_centers(1)[None, :]
    a = 1.0 + 2.0 * (np.mod(xc * 16 + 8 * tc, 1.0) < 0.5)
    M = np.zeros(g.cell_shape + (2, 2))
    M[..., 0, 0] = a
    M[..., 1, 1] = a
    A = MatrixField(g, M)
    bc = BoundaryData(f=lambda x: np.cos(2 * np.pi * x))
    import homtent._kernels as k

    saved = k.COMPILED
    if force_ref:
        k.COMPILED = False
    try:
        t0 = time.perf_counter()
        rep = dirichlet_solve(A, bc, tol=1e-8)
        dt = time.perf_counter() - t0
    finally:
        k.COMPILED = saved
    return dt, rep.iterations


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--size", type=int, default=1024, help="grid cells per axis for kernel benchmarks")
    ap.add_argument("--solve-size", type=int, default=256, help="strip cells (x) for the end-to-end solve")
    args = ap.parse_args()

    print(f"kernel lane available: {kern.COMPILED} ({kern.NAME}), threads = {kern.get_num_threads()}")
    print(f"\nstencil matvec+dot on ({args.size}, {2 * args.size + 1}) nodes:")
    for name, dt in bench_stencil(args.size):
        print(f"  {name:14s} {1000 * dt:8.2f} ms")
    print(f"\nfused CG update on {args.size}^2 unknowns:")
    for name, dt in bench_vector_ops(args.size):
        print(f"  {name:14s} {1000 * dt:8.2f} ms")
    print("\npairwise op-norm diameter (20000 cells x 64 samples):")
    for name, dt in bench_opnorm():
        print(f"  {name:14s} {1000 * dt:8.2f} ms")
    print(f"\nend-to-end strip solve ({args.solve_size} x {2 * args.solve_size} cells, tol 1e-8):")
    for force_ref, name in ((False, "compiled"), (True, "numpy")):
        if force_ref or kern.COMPILED:
            dt, iters = bench_solve(args.solve_size, force_ref)
            print(f"  {name:14s} {dt:8.2f} s  ({iters} iterations)")


if __name__ == "__main__":
    main()
