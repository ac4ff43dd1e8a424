# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels; semantics match ``_kernels_py`` exactly."""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, sqrt

cnp.import_array()


cdef double _kkt(double[::1] grad, double[::1] beta, double lam, double[::1] root) noexcept nogil:
    cdef Py_ssize_t j, p = beta.shape[0]
    cdef double v, worst = 0.0
    for j in range(p):
        if root[j] == 0.0:
            continue
        if beta[j] > 0.0:
            v = fabs(grad[j] - lam)
        elif beta[j] < 0.0:
            v = fabs(grad[j] + lam)
        else:
            v = fabs(grad[j]) - lam
        v /= root[j]
        if v > worst:
            worst = v
    return worst


def cd_lasso_gram(G, c, double lam, double[::1] beta, int max_iter, double tol):
    cdef const double[::1, :] g = np.asfortranarray(G, dtype=np.float64)
    cdef Py_ssize_t p = g.shape[0]
    cdef double[::1] diag = np.empty(p)
    cdef double[::1] root = np.empty(p)
    cdef double[::1] grad = np.asarray(c, dtype=np.float64) - np.asarray(g) @ np.asarray(beta)
    cdef Py_ssize_t j, i
    cdef int sweep, done = 0, n_sweeps = max_iter
    cdef double old, z, new, step, moved, max_step
    for j in range(p):
        diag[j] = g[j, j]
        root[j] = sqrt(diag[j]) if diag[j] > 0.0 else 0.0
    with nogil:
        for sweep in range(1, max_iter + 1):
            max_step = 0.0
            for j in range(p):
                if diag[j] <= 0.0:
                    continue
                old = beta[j]
                z = grad[j] + diag[j] * old
                if z > lam:
                    new = (z - lam) / diag[j]
                elif z < -lam:
                    new = (z + lam) / diag[j]
                else:
                    new = 0.0
                if new != old:
                    step = new - old
                    for i in range(p):
                        grad[i] -= g[i, j] * step
                    beta[j] = new
                    moved = fabs(step) * root[j]
                    if moved > max_step:
                        max_step = moved
            if max_step <= tol and _kkt(grad, beta, lam, root) <= tol:
                done = 1
                n_sweeps = sweep
                break
    return n_sweeps, bool(done)


def bspline_values(knots, int order, z):
    cdef const double[::1] kn = np.ascontiguousarray(knots, dtype=np.float64)
    cdef const double[::1] zz = np.ascontiguousarray(z, dtype=np.float64)
    cdef Py_ssize_t n_basis = kn.shape[0] - order
    cdef Py_ssize_t deg = order - 1
    cdef Py_ssize_t n = zz.shape[0]
    out_arr = np.zeros((n, n_basis))
    cdef double[:, ::1] out = out_arr
    cdef double[::1] left = np.zeros(order)
    cdef double[::1] right = np.zeros(order)
    cdef double[::1] vals = np.zeros(order)
    cdef Py_ssize_t row, span, lo, hi, mid, j, r
    cdef double t, saved, tmp
    with nogil:
        for row in range(n):
            t = zz[row]
            if t >= kn[n_basis]:
                span = n_basis - 1
            else:
                lo = order - 1
                hi = n_basis
                while hi - lo > 1:
                    mid = (lo + hi) // 2
                    if t < kn[mid]:
                        hi = mid
                    else:
                        lo = mid
                span = lo
            for j in range(order):
                vals[j] = 0.0
            vals[0] = 1.0
            for j in range(1, deg + 1):
                left[j] = t - kn[span + 1 - j]
                right[j] = kn[span + j] - t
                saved = 0.0
                for r in range(j):
                    tmp = vals[r] / (right[r + 1] + left[j - r])
                    vals[r] = saved + right[r + 1] * tmp
                    saved = left[j - r] * tmp
                vals[j] = saved
            for j in range(order):
                out[row, span - deg + j] = vals[j]
    return out_arr
