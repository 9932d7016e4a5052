"""Hot numerical kernels with a compiled core and a numpy fallback.

The compiled extension (Cython + OpenMP) is used when it imported cleanly and
the problem is 2-D; otherwise the numpy reference lane runs.  Set
``HOMTENT_FORCE_REF=1`` to force the fallback (used by the parity tests and
the benchmark).
"""

import os

import numpy as np

from . import _ref

try:  # pragma: no cover - depends on the build environment
    if os.environ.get("HOMTENT_FORCE_REF"):
        _core = None
    else:
        from . import _core
except ImportError:  # pragma: no cover
    _core = None

COMPILED = _core is not None
NAME = _core.NAME if COMPILED else _ref.NAME

_num_threads = max(1, os.cpu_count() or 1)


def set_num_threads(n: int):
    global _num_threads
    _num_threads = max(1, int(n))


def get_num_threads() -> int:
    return _num_threads


def _use_core_2d(x):
    return COMPILED and x.ndim == 2


def stencil_apply(w, x, wrap, out=None):
    if _use_core_2d(x):
        if out is None:
            out = np.empty_like(x)
        _core.stencil_apply_2d(w, x, out, wrap[0], wrap[1], _num_threads)
        return out
    return _ref.stencil_apply(w, x, wrap, out)


def stencil_apply_dot(w, x, wrap, out):
    if _use_core_2d(x):
        return _core.stencil_apply_dot_2d(w, x, out, wrap[0], wrap[1], _num_threads)
    return _ref.stencil_apply_dot(w, x, wrap, out)


def dot(a, b):
    if COMPILED and a.ndim <= 2:
        return _core.dot(a.reshape(-1), b.reshape(-1), _num_threads)
    return _ref.dot(a, b)


def axpy_pair_rr(x, p, r, q, alpha):
    if COMPILED and x.ndim <= 2:
        return _core.axpy_pair_rr(x.reshape(-1), p.reshape(-1), r.reshape(-1), q.reshape(-1), alpha, _num_threads)
    return _ref.axpy_pair_rr(x, p, r, q, alpha)


def axpy_pair_rr_rho(x, p, r, q, inv_diag, alpha):
    if COMPILED and x.ndim <= 2:
        return _core.axpy_pair_rr_rho(
            x.reshape(-1), p.reshape(-1), r.reshape(-1), q.reshape(-1), inv_diag.reshape(-1), alpha, _num_threads
        )
    return _ref.axpy_pair_rr_rho(x, p, r, q, inv_diag, alpha)


def xpby_precond(p, r, inv_diag, beta):
    if COMPILED and p.ndim <= 2:
        _core.xpby_precond(p.reshape(-1), r.reshape(-1), inv_diag.reshape(-1), beta, _num_threads)
        return
    _ref.xpby_precond(p, r, inv_diag, beta)


def jacobi_dot(z, r, inv_diag):
    if COMPILED and z.ndim <= 2:
        return _core.jacobi_dot(z.reshape(-1), r.reshape(-1), inv_diag.reshape(-1), _num_threads)
    return _ref.jacobi_dot(z, r, inv_diag)


def xpby(p, z, beta):
    if COMPILED and p.ndim <= 2:
        _core.xpby(p.reshape(-1), z.reshape(-1), beta, _num_threads)
        return
    _ref.xpby(p, z, beta)


def pairwise_opnorm_diameter(vals):
    if COMPILED:
        return _core.pairwise_opnorm_diameter(np.ascontiguousarray(vals), _num_threads)
    return _ref.pairwise_opnorm_diameter(vals)
