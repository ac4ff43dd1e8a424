"""Nonparametric surrogates and the CLIME-type precision estimate.

Each row of the precision estimate solves

    min ||g||_1  subject to  ||S g - e_j||_inf <= delta

as a linear program in the positive and negative parts of ``g``. The LP is
solved exactly with HiGHS inside a column-generation loop: a restricted LP
over a few columns is solved, its duals price every remaining column, and
columns with negative reduced cost are added until none remain. The loop
terminates at the optimum of the full LP; when the restricted problem is
infeasible the full LP is solved directly.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .core import DimensionError, InfeasibleError
from .factors import FactorDecomposition
from .splines import BasisMatrix, projector_onto_basis

_HIGHS = {"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10}
_PRICE_TOL = 1e-9
_BATCH = 20


@dataclass(frozen=True)
class Surrogates:
    u_tilde: np.ndarray
    sigma_tilde: np.ndarray


def compute_surrogates(decomp: FactorDecomposition, pi: BasisMatrix | np.ndarray) -> Surrogates:
    """``U~ = (I - H) U^`` with ``H`` the projector onto the basis, and ``S~ = U~'U~ / n``."""
    proj = projector_onto_basis(pi)
    if proj.pi.shape[0] != decomp.n:
        raise DimensionError("basis matrix row count differs from the factor decomposition")
    u_tilde = proj.residual(decomp.u_hat)
    sigma = u_tilde.T @ u_tilde / decomp.n
    sigma = 0.5 * (sigma + sigma.T)
    return Surrogates(u_tilde=u_tilde, sigma_tilde=sigma)


@dataclass(frozen=True)
class PrecisionEstimate:
    """Symmetrized precision estimate.

    ``theta_rows`` holds the row-wise LP solutions before symmetrization and
    ``from_transpose[i, j]`` is True where ``theta_hat[i, j]`` was taken from
    ``theta_rows[j, i]``. ``feasibility_margin`` is the largest constraint
    value ``max_j ||theta_rows[j] S - e_j||_inf`` minus ``delta_n`` (at most
    zero up to solver tolerance).
    """

    theta_hat: np.ndarray
    delta_n: float
    feasibility_margin: float
    per_row_l1: np.ndarray
    theta_rows: np.ndarray
    from_transpose: np.ndarray
    n_doublings: int = 0


def _full_lp(s, j, delta):
    p = s.shape[0]
    e = np.zeros(p)
    e[j] = 1.0
    a = np.block([[s, -s], [-s, s]])
    res = linprog(np.ones(2 * p), A_ub=a, b_ub=np.r_[e + delta, delta - e], bounds=(0, None),
                  method="highs", options=_HIGHS)
    if res.status == 2:
        return None
    if res.status != 0:
        raise InfeasibleError(f"LP solver failed on row {j}: {res.message}")
    return res.x[:p] - res.x[p:]


def clime_row(s, j: int, delta: float):
    """Solve one row problem exactly; returns ``None`` when it is infeasible."""
    s = np.asarray(s, dtype=float)
    p = s.shape[0]
    e = np.zeros(p)
    e[j] = 1.0
    b = np.r_[e + delta, delta - e]
    active = [j]
    for _ in range(p + 1):
        sa = s[:, active]
        a = np.block([[sa, -sa], [-sa, sa]])
        res = linprog(np.ones(2 * len(active)), A_ub=a, b_ub=b, bounds=(0, None),
                      method="highs", options=_HIGHS)
        if res.status != 0:
            # restricted infeasibility says nothing about the full problem
            return _full_lp(s, j, delta)
        y = res.ineqlin.marginals
        price = np.abs(s @ (y[:p] - y[p:])) - 1.0
        price[active] = -np.inf
        enter = np.flatnonzero(price > _PRICE_TOL)
        if enter.size == 0:
            k = len(active)
            g = np.zeros(p)
            g[active] = res.x[:k] - res.x[k:]
            return g
        active.extend(enter[np.argsort(-price[enter], kind="stable")][:_BATCH].tolist())
    return _full_lp(s, j, delta)


def symmetrize(rows):
    """Keep, for each pair ``(i, j)``, the entry of smaller magnitude."""
    rows = np.asarray(rows, dtype=float)
    take_t = np.abs(rows) > np.abs(rows.T)
    return np.where(take_t, rows.T, rows), take_t


def default_delta(n: int, p: int, basis_dim: int) -> float:
    lp = math.log(p) if p > 1 else 0.0
    return 0.5 * (lp / math.sqrt(n) + math.sqrt(basis_dim * lp / n))


def _solve_rows(s, delta, n_jobs):
    p = s.shape[0]
    if n_jobs and n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as ex:
            return list(ex.map(lambda j: clime_row(s, j, delta), range(p)))
    out = []
    for j in range(p):
        g = clime_row(s, j, delta)
        out.append(g)
        if g is None:
            break
    return out


def estimate_precision(
    sigma_tilde,
    delta_n: float | str = "auto",
    n_samples: int | None = None,
    basis_dim: int | None = None,
    n_jobs: int = 1,
) -> PrecisionEstimate:
    """CLIME estimate of the inverse of ``sigma_tilde``.

    With ``delta_n="auto"`` the radius starts at
    ``0.5 * (log p / sqrt(n) + sqrt(M_n log p / n))`` and doubles until every
    row is feasible; ``n_samples`` and ``basis_dim`` are then required. The
    doubling stops with :class:`InfeasibleError` past ``2 * max|S|``.
    """
    s = np.asarray(sigma_tilde, dtype=float)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise DimensionError("sigma_tilde must be square")
    if not np.allclose(s, s.T, rtol=0, atol=1e-12 * max(1.0, np.max(np.abs(s)))):
        raise ValueError("sigma_tilde must be symmetric")
    p = s.shape[0]
    cap = 2.0 * float(np.max(np.abs(s)))

    if delta_n == "auto":
        if n_samples is None or basis_dim is None:
            raise ValueError("delta_n='auto' needs n_samples and basis_dim")
        delta = default_delta(n_samples, p, basis_dim)
        auto = True
    else:
        delta = float(delta_n)
        if not delta >= 0:
            raise ValueError("delta_n must be nonnegative")
        auto = False

    doublings = 0
    while True:
        rows = _solve_rows(s, delta, n_jobs)
        if all(g is not None for g in rows) and len(rows) == p:
            break
        if not auto or delta <= 0 or 2 * delta > cap:
            raise InfeasibleError(f"CLIME constraints infeasible at delta_n={delta:.6g}")
        delta *= 2
        doublings += 1

    theta_rows = np.vstack(rows)
    viol = np.max(np.abs(theta_rows @ s - np.eye(p)))
    theta, take_t = symmetrize(theta_rows)
    return PrecisionEstimate(
        theta_hat=theta,
        delta_n=delta,
        feasibility_margin=float(viol - delta),
        per_row_l1=np.sum(np.abs(theta_rows), axis=1),
        theta_rows=theta_rows,
        from_transpose=take_t,
        n_doublings=doublings,
    )
