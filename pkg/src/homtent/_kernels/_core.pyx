# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: 2-D stencil application, fused CG vector updates, and the
pairwise operator-norm diameter behind the DKP oscillation functional.

All reductions accumulate Kahan-compensated partial sums over fixed-size
chunks and combine them in index order, so results do not depend on the
number of OpenMP threads.
"""

import numpy as np

cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport fabs, sqrt

NAME = "compiled"

DEF CHUNK = 8192


cdef inline Py_ssize_t _imin(Py_ssize_t a, Py_ssize_t b) nogil:
    return a if a < b else b


def stencil_apply_2d(const double[:, :, ::1] w, const double[:, ::1] x, double[:, ::1] out,
                     bint wrap0, bint wrap1, int nthreads):
    """out[i,j] = sum_{o} w[o,i,j] * x[i+o0, j+o1], offsets C-ordered over
    {-1,0,1}^2.  Reads past a non-periodic edge are skipped (zero weights)."""
    cdef Py_ssize_t n0 = x.shape[0], n1 = x.shape[1]
    cdef Py_ssize_t i, j, im, ip, jm, jp
    cdef double acc
    for i in prange(n0, nogil=True, schedule='static', num_threads=nthreads):
        im = i - 1 if i > 0 else (n0 - 1 if wrap0 else -1)
        ip = i + 1 if i < n0 - 1 else (0 if wrap0 else -1)
        for j in range(n1):
            jm = j - 1 if j > 0 else (n1 - 1 if wrap1 else -1)
            jp = j + 1 if j < n1 - 1 else (0 if wrap1 else -1)
            acc = w[4, i, j] * x[i, j]
            if jm >= 0:
                acc = acc + w[3, i, j] * x[i, jm]
            if jp >= 0:
                acc = acc + w[5, i, j] * x[i, jp]
            if im >= 0:
                acc = acc + w[1, i, j] * x[im, j]
                if jm >= 0:
                    acc = acc + w[0, i, j] * x[im, jm]
                if jp >= 0:
                    acc = acc + w[2, i, j] * x[im, jp]
            if ip >= 0:
                acc = acc + w[7, i, j] * x[ip, j]
                if jm >= 0:
                    acc = acc + w[6, i, j] * x[ip, jm]
                if jp >= 0:
                    acc = acc + w[8, i, j] * x[ip, jp]
            out[i, j] = acc


def stencil_apply_dot_2d(const double[:, :, ::1] w, const double[:, ::1] x, double[:, ::1] out,
                         bint wrap0, bint wrap1, int nthreads):
    """Fused out = K x plus x . out; row sums are combined in fixed order."""
    cdef Py_ssize_t n0 = x.shape[0], n1 = x.shape[1]
    cdef Py_ssize_t i, j, im, ip, jm, jp
    cdef double acc, s, comp, v, t
    rowsums_np = np.empty(n0)
    cdef double[::1] rowsums = rowsums_np
    for i in prange(n0, nogil=True, schedule='static', num_threads=nthreads):
        im = i - 1 if i > 0 else (n0 - 1 if wrap0 else -1)
        ip = i + 1 if i < n0 - 1 else (0 if wrap0 else -1)
        s = 0.0
        comp = 0.0
        for j in range(n1):
            jm = j - 1 if j > 0 else (n1 - 1 if wrap1 else -1)
            jp = j + 1 if j < n1 - 1 else (0 if wrap1 else -1)
            acc = w[4, i, j] * x[i, j]
            if jm >= 0:
                acc = acc + w[3, i, j] * x[i, jm]
            if jp >= 0:
                acc = acc + w[5, i, j] * x[i, jp]
            if im >= 0:
                acc = acc + w[1, i, j] * x[im, j]
                if jm >= 0:
                    acc = acc + w[0, i, j] * x[im, jm]
                if jp >= 0:
                    acc = acc + w[2, i, j] * x[im, jp]
            if ip >= 0:
                acc = acc + w[7, i, j] * x[ip, j]
                if jm >= 0:
                    acc = acc + w[6, i, j] * x[ip, jm]
                if jp >= 0:
                    acc = acc + w[8, i, j] * x[ip, jp]
            out[i, j] = acc
            v = x[i, j] * acc - comp
            t = s + v
            comp = (t - s) - v
            s = t
        rowsums[i] = s
    return float(np.sum(rowsums_np))


def dot(const double[::1] a, const double[::1] b, int nthreads):
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t nchunks = (n + CHUNK - 1) // CHUNK
    partials_np = np.empty(nchunks)
    cdef double[::1] partials = partials_np
    cdef Py_ssize_t c, k, lo, hi
    cdef double s, comp, v, t
    for c in prange(nchunks, nogil=True, schedule='static', num_threads=nthreads):
        lo = c * CHUNK
        hi = _imin(n, lo + CHUNK)
        s = 0.0
        comp = 0.0
        for k in range(lo, hi):
            v = a[k] * b[k] - comp
            t = s + v
            comp = (t - s) - v
            s = t
        partials[c] = s
    return float(np.sum(partials_np))


def axpy_pair_rr(double[::1] x, const double[::1] p, double[::1] r, const double[::1] q,
                 double alpha, int nthreads):
    """x += alpha p; r -= alpha q; returns r . r."""
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t nchunks = (n + CHUNK - 1) // CHUNK
    partials_np = np.empty(nchunks)
    cdef double[::1] partials = partials_np
    cdef Py_ssize_t c, k, lo, hi
    cdef double s, comp, v, t, rv
    for c in prange(nchunks, nogil=True, schedule='static', num_threads=nthreads):
        lo = c * CHUNK
        hi = _imin(n, lo + CHUNK)
        s = 0.0
        comp = 0.0
        for k in range(lo, hi):
            x[k] = x[k] + alpha * p[k]
            rv = r[k] - alpha * q[k]
            r[k] = rv
            v = rv * rv - comp
            t = s + v
            comp = (t - s) - v
            s = t
        partials[c] = s
    return float(np.sum(partials_np))


def axpy_pair_rr_rho(double[::1] x, const double[::1] p, double[::1] r, const double[::1] q,
                     const double[::1] inv_diag, double alpha, int nthreads):
    """x += alpha p; r -= alpha q; returns (r.r, r.(inv_diag r))."""
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t nchunks = (n + CHUNK - 1) // CHUNK
    partials_np = np.empty((nchunks, 2))
    cdef double[:, ::1] partials = partials_np
    cdef Py_ssize_t c, k, lo, hi
    cdef double s0, c0, s1, c1, v, t, rv
    for c in prange(nchunks, nogil=True, schedule='static', num_threads=nthreads):
        lo = c * CHUNK
        hi = _imin(n, lo + CHUNK)
        s0 = 0.0
        c0 = 0.0
        s1 = 0.0
        c1 = 0.0
        for k in range(lo, hi):
            x[k] = x[k] + alpha * p[k]
            rv = r[k] - alpha * q[k]
            r[k] = rv
            v = rv * rv - c0
            t = s0 + v
            c0 = (t - s0) - v
            s0 = t
            v = rv * rv * inv_diag[k] - c1
            t = s1 + v
            c1 = (t - s1) - v
            s1 = t
        partials[c, 0] = s0
        partials[c, 1] = s1
    sums = np.sum(partials_np, axis=0)
    return float(sums[0]), float(sums[1])


def xpby_precond(double[::1] p, const double[::1] r, const double[::1] inv_diag, double beta,
                 int nthreads):
    """p = inv_diag * r + beta * p."""
    cdef Py_ssize_t n = p.shape[0]
    cdef Py_ssize_t k
    for k in prange(n, nogil=True, schedule='static', num_threads=nthreads):
        p[k] = inv_diag[k] * r[k] + beta * p[k]


def jacobi_dot(double[::1] z, const double[::1] r, const double[::1] inv_diag, int nthreads):
    """z = inv_diag * r; returns r . z."""
    cdef Py_ssize_t n = z.shape[0]
    cdef Py_ssize_t nchunks = (n + CHUNK - 1) // CHUNK
    partials_np = np.empty(nchunks)
    cdef double[::1] partials = partials_np
    cdef Py_ssize_t c, k, lo, hi
    cdef double s, comp, v, t, zv
    for c in prange(nchunks, nogil=True, schedule='static', num_threads=nthreads):
        lo = c * CHUNK
        hi = _imin(n, lo + CHUNK)
        s = 0.0
        comp = 0.0
        for k in range(lo, hi):
            zv = inv_diag[k] * r[k]
            z[k] = zv
            v = r[k] * zv - comp
            t = s + v
            comp = (t - s) - v
            s = t
        partials[c] = s
    return float(np.sum(partials_np))


def xpby(double[::1] p, const double[::1] z, double beta, int nthreads):
    """p = z + beta p."""
    cdef Py_ssize_t n = p.shape[0]
    cdef Py_ssize_t k
    for k in prange(n, nogil=True, schedule='static', num_threads=nthreads):
        p[k] = z[k] + beta * p[k]


def pairwise_opnorm_diameter(const double[:, :, ::1] vals, int nthreads):
    """Per cell, max over sample pairs of the spectral norm of the difference
    of symmetric 2x2 matrices packed as (a11, a22, a12)."""
    cdef Py_ssize_t nc = vals.shape[0], ns = vals.shape[1]
    out_np = np.zeros(nc)
    cdef double[::1] out = out_np
    cdef Py_ssize_t c, i, j
    cdef double best, da, db, dc_, mean, rad, cand
    for c in prange(nc, nogil=True, schedule='static', num_threads=nthreads):
        best = 0.0
        for i in range(ns - 1):
            for j in range(i + 1, ns):
                da = vals[c, i, 0] - vals[c, j, 0]
                db = vals[c, i, 1] - vals[c, j, 1]
                dc_ = vals[c, i, 2] - vals[c, j, 2]
                mean = 0.5 * (da + db)
                rad = sqrt(0.25 * (da - db) * (da - db) + dc_ * dc_)
                cand = fabs(mean) + rad
                if cand > best:
                    best = cand
        out[c] = best
    return out_np
