"""Pure-numpy reference implementations of the hot kernels.

Every function here has the same signature and semantics as its compiled
counterpart in ``_core.pyx``; the compiled lane is selected at import when
available (see ``__init__.py``).
"""

import numpy as np

NAME = "numpy"


def set_num_threads(n):
    pass


def get_num_threads():
    return 1


def _padded(x, wrap):
    # pad axis by axis so corner ghosts wrap consistently with the kernel
    xp = x
    for a in range(x.ndim):
        widths = [(0, 0)] * x.ndim
        widths[a] = (1, 1)
        xp = np.pad(xp, widths, mode="wrap" if wrap[a] else "constant")
    return xp


def stencil_apply(w, x, wrap, out=None):
    """y[n] = sum_o w[o, n] * x[n + o], offsets o in C-order over {-1,0,1}^dim.

    Reads past a non-periodic edge are dropped (their weights are assembled
    as zero anyway).
    """
    dim = x.ndim
    if out is None:
        out = np.zeros_like(x)
    else:
        out[...] = 0.0
    xp = _padded(x, wrap)
    shape = x.shape
    from itertools import product

    for oi, offset in enumerate(product((-1, 0, 1), repeat=dim)):
        sl = tuple(slice(1 + o, 1 + o + n) for o, n in zip(offset, shape))
        out += w[oi] * xp[sl]
    return out


def stencil_apply_dot(w, x, wrap, out):
    """Fused y = W x and return x . y."""
    stencil_apply(w, x, wrap, out)
    return float(np.sum(x * out))


def dot(a, b):
    return float(np.sum(a * b))


def axpy_pair_rr(x, p, r, q, alpha):
    """x += alpha p; r -= alpha q; return r . r."""
    x += alpha * p
    r -= alpha * q
    return float(np.sum(r * r))


def axpy_pair_rr_rho(x, p, r, q, inv_diag, alpha):
    """x += alpha p; r -= alpha q; return (r.r, r.(inv_diag r))."""
    x += alpha * p
    r -= alpha * q
    rr = float(np.sum(r * r))
    rho = float(np.sum(r * r * inv_diag))
    return rr, rho


def xpby_precond(p, r, inv_diag, beta):
    """p = inv_diag * r + beta * p."""
    p *= beta
    p += inv_diag * r


def jacobi_dot(z, r, inv_diag):
    """z = inv_diag * r; return r . z."""
    np.multiply(inv_diag, r, out=z)
    return float(np.sum(r * z))


def xpby(p, z, beta):
    """p = z + beta p."""
    p *= beta
    p += z


def pairwise_opnorm_diameter(vals):
    """Max over sample pairs of the spectral norm of the difference of
    symmetric 2x2 matrices packed as (a11, a22, a12).

    ``vals`` has shape (ncells, nsamples, 3); returns shape (ncells,).
    """
    vals = np.asarray(vals, dtype=float)
    ncells, ns, _ = vals.shape
    best = np.zeros(ncells)
    for i in range(ns - 1):
        d = vals[:, i + 1 :, :] - vals[:, i : i + 1, :]
        mean = 0.5 * (d[..., 0] + d[..., 1])
        rad = np.sqrt((0.5 * (d[..., 0] - d[..., 1])) ** 2 + d[..., 2] ** 2)
        cand = np.abs(mean) + rad
        np.maximum(best, cand.max(axis=1), out=best)
    return best
