"""Principal-component estimation of latent factors and the eigenvalue-ratio rule for K."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DimensionError, NonFiniteError

_LOW_RANK = 1e-12


@dataclass(frozen=True)
class FactorDecomposition:
    """``x = f_hat @ b_hat.T + u_hat`` with ``f_hat.T @ f_hat / n = I``.

    ``k == 0`` is the degenerate no-factor decomposition (``u_hat = x``).
    """

    f_hat: np.ndarray
    b_hat: np.ndarray
    u_hat: np.ndarray
    k: int
    spiked_eigenvalues: np.ndarray

    @property
    def n(self) -> int:
        return self.u_hat.shape[0]

    def project_out(self, m):
        """``(I - P) m`` with ``P = f_hat f_hat' / n``."""
        if self.k == 0:
            return m
        return m - self.f_hat @ (self.f_hat.T @ m) / self.n

    def factor_scores(self, x_new):
        return factor_scores(self.b_hat, x_new)


def factor_scores(b_hat, x_new):
    """Factors and idiosyncratic parts of new rows given training loadings ``b_hat``.

    ``f_new = x_new B (B'B)^{-1}`` and ``u_new = x_new - f_new B'``; on the
    training rows this reproduces ``f_hat`` and ``u_hat``.
    """
    x_new = np.atleast_2d(np.asarray(x_new, dtype=float))
    b_hat = np.asarray(b_hat, dtype=float)
    if x_new.shape[1] != b_hat.shape[0]:
        raise DimensionError(
            f"x_new has {x_new.shape[1]} columns, training data had {b_hat.shape[0]}"
        )
    if b_hat.shape[1] == 0:
        return np.zeros((x_new.shape[0], 0)), x_new
    f_new = np.linalg.solve(b_hat.T @ b_hat, b_hat.T @ x_new.T).T
    return f_new, x_new - f_new @ b_hat.T


def _check_finite(x):
    if not np.all(np.isfinite(x)):
        raise NonFiniteError("x contains non-finite entries")


def _sign_fix(v):
    idx = np.argmax(np.abs(v), axis=0)
    signs = np.sign(v[idx, np.arange(v.shape[1])])
    signs[signs == 0] = 1.0
    return v * signs


def gram_eigenvalues(x) -> np.ndarray:
    """Eigenvalues of ``x x'`` in decreasing order (the nonzero spectrum, length min(n, p))."""
    n, p = x.shape
    small = x @ x.T if n <= p else x.T @ x
    return np.clip(np.linalg.eigvalsh(small)[::-1], 0.0, None)


def estimate_factors(x, k: int) -> FactorDecomposition:
    """Constrained least-squares factor estimate with ``k`` factors.

    ``f_hat / sqrt(n)`` holds the top-``k`` eigenvectors of ``x x'``; the
    eigenproblem is solved on whichever of ``x x'`` and ``x' x`` is smaller.
    Each factor column is signed so that its largest-magnitude entry is positive.
    """
    x = np.asarray(x, dtype=float)
    n, p = x.shape
    _check_finite(x)
    k = int(k)
    if not 1 <= k <= min(n, p):
        raise ValueError(f"k must be in [1, {min(n, p)}], got {k}")

    vecs = None
    if n > p:
        w, v = np.linalg.eigh(x.T @ x)
        w, v = w[::-1][:k], v[:, ::-1][:, :k]
        if w[-1] > _LOW_RANK * max(w[0], 0.0) and w[-1] > 0:
            vecs = (x @ v) / np.sqrt(w)
            # one step of re-orthonormalization against round-off
            vecs, _ = np.linalg.qr(vecs)
            vals = w
    if vecs is None:
        w, v = np.linalg.eigh(x @ x.T)
        vals, vecs = w[::-1][:k], v[:, ::-1][:, :k]
    vecs = _sign_fix(vecs)
    vals = np.clip(vals, 0.0, None)

    f_hat = np.sqrt(n) * vecs
    b_hat = x.T @ f_hat / n
    u_hat = x - f_hat @ b_hat.T
    return FactorDecomposition(f_hat, b_hat, u_hat, k, vals)


def no_factors(x) -> FactorDecomposition:
    """Skip the factor step: ``u_hat = x`` and empty factor blocks."""
    x = np.asarray(x, dtype=float)
    _check_finite(x)
    n, p = x.shape
    return FactorDecomposition(np.zeros((n, 0)), np.zeros((p, 0)), x.copy(), 0, np.zeros(0))


@dataclass(frozen=True)
class FactorCount:
    k: int
    ratios: np.ndarray
    eigenvalues: np.ndarray
    low_rank: bool


def default_k_max(n: int, p: int) -> int:
    return max(1, min(min(n, p) // 2, 15, min(n, p) - 1))


def select_num_factors(x, k_max: int | None = None) -> FactorCount:
    """Eigenvalue-ratio estimate of the number of factors.

    Picks ``argmax_{k <= k_max} lambda_k / lambda_{k+1}`` over the eigenvalues
    of ``x x'``, smallest ``k`` on ties. If one of the first ``k_max + 1``
    eigenvalues is numerically zero the ratios are undefined; the numerical
    rank (capped to ``k_max``) is returned with ``low_rank=True``.
    """
    x = np.asarray(x, dtype=float)
    _check_finite(x)
    n, p = x.shape
    if k_max is None:
        k_max = default_k_max(n, p)
    if not 1 <= k_max <= min(n, p) - 1:
        raise ValueError(f"k_max must be in [1, {min(n, p) - 1}], got {k_max}")
    lam = gram_eigenvalues(x)
    head = lam[: k_max + 1]
    floor = _LOW_RANK * head[0]
    if head[0] <= 0 or np.any(head <= floor):
        rank = int(np.sum(head > floor))
        ratios = np.full(k_max, np.nan)
        ok = head[1:] > floor
        ratios[ok] = head[:-1][ok] / head[1:][ok]
        return FactorCount(max(1, min(rank, k_max)), ratios, lam, True)
    ratios = head[:-1] / head[1:]
    return FactorCount(int(np.argmax(ratios)) + 1, ratios, lam, False)
