"""Pure-Python reference versions of the compiled kernels in ``_kernels_c.pyx``."""
import math

import numpy as np


def cd_lasso_gram(G, c, lam, beta, max_iter, tol):
    """Cyclic coordinate descent for ``0.5 b'Gb - c'b + lam |b|_1`` (covariance updates).

    ``beta`` is updated in place. A sweep counts as converged when every
    coordinate moved by at most ``tol`` and every KKT condition is violated
    by at most ``tol``, both measured in units of ``sqrt(G_jj)``.
    Returns ``(n_sweeps, converged)``.
    """
    p = G.shape[0]
    diag = [float(G[j, j]) for j in range(p)]
    root = [math.sqrt(d) if d > 0.0 else 0.0 for d in diag]
    grad = np.asarray(c, dtype=float) - G @ beta
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
                grad -= G[:, j] * step
                beta[j] = new
                moved = abs(step) * root[j]
                if moved > max_step:
                    max_step = moved
        if max_step <= tol and kkt_violation(grad, beta, lam, root) <= tol:
            return sweep, True
    return max_iter, False


def kkt_violation(grad, beta, lam, root):
    worst = 0.0
    for j in range(len(beta)):
        if root[j] == 0.0:
            continue
        if beta[j] > 0.0:
            v = abs(grad[j] - lam)
        elif beta[j] < 0.0:
            v = abs(grad[j] + lam)
        else:
            v = abs(grad[j]) - lam
        v /= root[j]
        if v > worst:
            worst = v
    return worst


def find_span(knots, order, n_basis, t):
    if t >= knots[n_basis]:
        return n_basis - 1
    lo, hi = order - 1, n_basis
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if t < knots[mid]:
            hi = mid
        else:
            lo = mid
    return lo


def bspline_values(knots, order, z):
    """Unnormalized B-spline values (rows sum to one) for a clamped knot vector."""
    knots = np.asarray(knots, dtype=float)
    n_basis = len(knots) - order
    deg = order - 1
    out = np.zeros((len(z), n_basis))
    left = [0.0] * order
    right = [0.0] * order
    for row, t in enumerate(z):
        span = find_span(knots, order, n_basis, t)
        vals = [0.0] * order
        vals[0] = 1.0
        for j in range(1, deg + 1):
            left[j] = t - knots[span + 1 - j]
            right[j] = knots[span + j] - t
            saved = 0.0
            for r in range(j):
                tmp = vals[r] / (right[r + 1] + left[j - r])
                vals[r] = saved + right[r + 1] * tmp
                saved = left[j - r] * tmp
            vals[j] = saved
        out[row, span - deg:span + 1] = vals
    return out
