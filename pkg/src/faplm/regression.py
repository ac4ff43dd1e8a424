"""Penalized estimation of the factor-adjusted partially linear model.

The objective is

    (1/2n) ||Y - U b - F phi - Pi xi||^2 + lam ||b||_1

with only ``b`` penalized. The unpenalized block ``[F, Pi]`` is profiled out
exactly: ``U`` and ``Y`` are residualized on its column space, a Lasso is
solved on the residualized pair by coordinate descent, and ``(phi, xi)`` are
then recovered by least squares. Since ``F'U = 0`` this is the same problem
as minimizing over ``(b, xi)`` with ``(I - P)`` applied, and ``phi`` has the
closed form ``F'(Y - Pi xi) / n``.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    STREAM_CV,
    AffineMap,
    Dataset,
    DimensionError,
    RankDeficientError,
    RngSpec,
    rescale_z_to_unit,
    validate_dataset,
)
from .factors import (
    FactorCount,
    FactorDecomposition,
    estimate_factors,
    factor_scores,
    no_factors,
    select_num_factors,
)
from .kernels import cd_lasso_gram
from .splines import DEFAULT_ORDER, BasisMatrix, SplineBasis, build_basis, default_num_knots, evaluate_basis


LAMBDA_RULES = ("auto", "rate")


@dataclass(frozen=True)
class FitConfig:
    """Tuning for :func:`fit_faplm`.

    ``lam`` is a fixed penalty, ``"auto"`` for K-fold cross-validation over
    ``lambda_grid``, or ``"rate"`` for the fixed rate ``sqrt(log p / n)``.
    ``tol`` bounds the per-sweep coordinate change and the KKT violation,
    both relative to the root-mean-square of the residualized response (and
    scaled by the column norm ``sqrt(G_jj)``), which makes the solver
    invariant to rescaling ``(Y, lam)``.
    """

    lam: float | str = "auto"
    lambda_grid: tuple | None = None
    cv_folds: int = 5
    max_iter: int = 10000
    tol: float = 1e-7
    rng: RngSpec = field(default_factory=lambda: RngSpec(0, STREAM_CV))
    cv_substream: int = 0

    def __post_init__(self):
        if isinstance(self.lam, str):
            if self.lam not in LAMBDA_RULES:
                raise ValueError(f"lam must be a number or one of {LAMBDA_RULES}, got {self.lam!r}")
        elif not (self.lam >= 0 and math.isfinite(self.lam)):
            raise ValueError(f"lam must be nonnegative, got {self.lam}")
        if self.lambda_grid is not None:
            grid = tuple(float(v) for v in self.lambda_grid)
            if not grid or any(not v > 0 for v in grid):
                raise ValueError("lambda_grid must be a nonempty sequence of positive values")
            object.__setattr__(self, "lambda_grid", grid)
        if self.cv_folds < 2:
            raise ValueError("cv_folds must be at least 2")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")

    def snapshot(self) -> dict:
        d = dataclasses.asdict(self)
        d["rng"] = {"seed": self.rng.seed, "stream_id": self.rng.stream_id}
        return d


@dataclass(frozen=True)
class FitResult:
    beta_hat: np.ndarray
    xi_hat: np.ndarray
    phi_hat: np.ndarray
    lambda_used: float
    n_iterations: int
    converged: bool
    g_hat_values: np.ndarray
    objective_value: float
    fitted_values: np.ndarray
    response_scale: float
    cv_curve: np.ndarray | None = None

    @property
    def active_set(self) -> np.ndarray:
        return np.flatnonzero(self.beta_hat)


class ProfiledLasso:
    """Lasso of ``y`` on ``u`` with the columns of ``a`` left unpenalized."""

    def __init__(self, u, a, y):
        u = np.asarray(u, dtype=float)
        a = np.asarray(a, dtype=float)
        y = np.asarray(y, dtype=float)
        n = y.shape[0]
        if u.shape[0] != n or a.shape[0] != n:
            raise DimensionError("design blocks and response have different row counts")
        self.n, self.u, self.y = n, u, y
        if a.shape[1]:
            eig = np.linalg.eigvalsh(a.T @ a)
            if a.shape[1] > n or eig[0] <= 1e-10 * eig[-1]:
                raise RankDeficientError(
                    "unpenalized block (factors and spline basis) is rank deficient; "
                    "reduce the number of knots or factors"
                )
            self.q, self.r = np.linalg.qr(a)
            self.w = u - self.q @ (self.q.T @ u)
            self.wy = y - self.q @ (self.q.T @ y)
        else:
            self.q = self.r = None
            self.w, self.wy = u, y
        self.gram = self.w.T @ self.w / n
        self.cov = self.w.T @ self.wy / n
        self.scale = float(np.sqrt(np.mean(self.wy**2)))

    @property
    def lambda_max(self) -> float:
        """Smallest penalty at which the zero vector solves the Lasso."""
        return float(np.max(np.abs(self.cov))) if self.cov.size else 0.0

    def solve(self, lam, beta0=None, max_iter=10000, tol=1e-7):
        beta = np.zeros(self.gram.shape[0]) if beta0 is None else np.array(beta0, dtype=float)
        tol_abs = tol * self.scale if self.scale > 0 else tol
        n_iter, converged = cd_lasso_gram(self.gram, self.cov, float(lam), beta, int(max_iter), tol_abs)
        return beta, int(n_iter), bool(converged)

    def unpenalized(self, beta):
        if self.q is None:
            return np.zeros(0)
        return np.linalg.solve(self.r, self.q.T @ (self.y - self.u @ beta))


def _unpenalized_block(decomp: FactorDecomposition, pi: BasisMatrix | np.ndarray):
    pi_vals = pi.values if isinstance(pi, BasisMatrix) else np.asarray(pi, dtype=float)
    return np.hstack([decomp.f_hat, pi_vals]), pi_vals


def profiled_design(decomp: FactorDecomposition, pi, y) -> ProfiledLasso:
    """Residualized design ``W`` and response ``W_y`` for the penalized coordinates."""
    a, _ = _unpenalized_block(decomp, pi)
    return ProfiledLasso(decomp.u_hat, a, y)


def lambda_anchor(n: int, p: int) -> float:
    """``sqrt(log p / n)`` (``sqrt(1 / n)`` when ``p = 1``)."""
    return math.sqrt(math.log(p) / n) if p > 1 else math.sqrt(1.0 / n)


def default_lambda_grid(n: int, p: int) -> np.ndarray:
    return lambda_anchor(n, p) * 2.0 ** np.arange(-4, 3)


def objective(decomp, pi_vals, y, beta, phi, xi, lam) -> float:
    r = y - decomp.u_hat @ beta - decomp.f_hat @ phi - pi_vals @ xi
    return float(r @ r / (2 * y.shape[0]) + lam * np.sum(np.abs(beta)))


def fit_faplm(decomp: FactorDecomposition, pi, y, cfg: FitConfig | None = None) -> FitResult:
    """Estimate ``(beta, xi, phi)`` at a fixed or cross-validated penalty."""
    cfg = cfg or FitConfig()
    y = np.asarray(y, dtype=float)
    if y.shape[0] != decomp.n:
        raise DimensionError(f"y has length {y.shape[0]}, factor decomposition has n={decomp.n}")
    a, pi_vals = _unpenalized_block(decomp, pi)
    if pi_vals.shape[0] != decomp.n:
        raise DimensionError("basis matrix row count differs from the data")
    prob = ProfiledLasso(decomp.u_hat, a, y)

    curve = None
    if cfg.lam == "auto":
        lam, curve = select_lambda_cv(decomp, pi, y, cfg)
    elif cfg.lam == "rate":
        lam = lambda_anchor(decomp.n, decomp.u_hat.shape[1])
    else:
        lam = float(cfg.lam)
    beta, n_iter, converged = prob.solve(lam, max_iter=cfg.max_iter, tol=cfg.tol)

    xi = prob.unpenalized(beta)[decomp.k:]
    phi = decomp.f_hat.T @ (y - pi_vals @ xi) / decomp.n
    g_hat = pi_vals @ xi
    fitted = decomp.u_hat @ beta + decomp.f_hat @ phi + g_hat
    return FitResult(
        beta_hat=beta,
        xi_hat=xi,
        phi_hat=phi,
        lambda_used=lam,
        n_iterations=n_iter,
        converged=converged,
        g_hat_values=g_hat,
        objective_value=objective(decomp, pi_vals, y, beta, phi, xi, lam),
        fitted_values=fitted,
        response_scale=prob.scale,
        cv_curve=curve,
    )


def _folds(n, n_folds, rng):
    perm = rng.permutation(n)
    return np.array_split(perm, n_folds)


def select_lambda_cv(decomp: FactorDecomposition, pi, y, cfg: FitConfig):
    """K-fold cross-validated penalty.

    Rows are shuffled once with ``cfg.rng`` (substream ``cfg.cv_substream``)
    and cut into contiguous folds. The factor decomposition is not refit per
    fold. Returns the penalty with the smallest mean held-out squared error,
    preferring the larger penalty on exact ties, and the curve as an array of
    ``(lam, error)`` rows in increasing ``lam``.
    """
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    if cfg.cv_folds < 2 or n < 2 * cfg.cv_folds:
        raise ValueError(f"need at least {2 * cfg.cv_folds} samples for {cfg.cv_folds}-fold CV, got {n}")
    grid = (
        np.sort(np.asarray(cfg.lambda_grid, dtype=float))
        if cfg.lambda_grid is not None
        else default_lambda_grid(n, decomp.u_hat.shape[1])
    )
    if grid.size == 1:
        return float(grid[0]), np.array([[grid[0], np.nan]])

    a, _ = _unpenalized_block(decomp, pi)
    u = decomp.u_hat
    errors = np.zeros((len(grid), cfg.cv_folds))
    for f, test in enumerate(_folds(n, cfg.cv_folds, cfg.rng.generator(cfg.cv_substream))):
        train = np.setdiff1d(np.arange(n), test, assume_unique=True)
        prob = ProfiledLasso(u[train], a[train], y[train])
        beta = None
        for i in range(len(grid) - 1, -1, -1):
            beta, _, _ = prob.solve(grid[i], beta, cfg.max_iter, cfg.tol)
            pred = u[test] @ beta + a[test] @ prob.unpenalized(beta)
            errors[i, f] = np.mean((y[test] - pred) ** 2)
    mean_err = errors.mean(axis=1)
    best = np.min(mean_err)
    ties = np.flatnonzero(mean_err <= best * (1 + 1e-10) + 1e-300)
    choice = ties[-1]
    return float(grid[choice]), np.column_stack([grid, mean_err])


@dataclass(frozen=True)
class FittedModel:
    """Everything needed to report a fit and predict at new points."""

    decomp: FactorDecomposition
    basis: SplineBasis
    pi: BasisMatrix
    zmap: AffineMap
    fit: FitResult
    factor_count: FactorCount | None = None

    def g_hat(self, z_unit) -> np.ndarray:
        """Estimated nonparametric component at points already on the unit scale."""
        return evaluate_basis(self.basis, z_unit).values @ self.fit.xi_hat


def fit_model(
    dataset: Dataset,
    k: int | str = "auto",
    order: int | None = None,
    k_n: int | None = None,
    knots: str = "uniform",
    cfg: FitConfig | None = None,
    k_max: int | None = None,
) -> FittedModel:
    """Validate, rescale ``z``, estimate factors, build the basis and fit."""
    validate_dataset(dataset)
    z_unit, zmap = rescale_z_to_unit(dataset.z)
    count = None
    if k == "auto":
        count = select_num_factors(dataset.x, k_max)
        k = count.k
    k = int(k)
    decomp = estimate_factors(dataset.x, k) if k > 0 else no_factors(dataset.x)
    if k_n is None:
        # tiny samples: keep the unpenalized block [F, Pi] narrower than n where possible
        room = dataset.n - 1 - k - (DEFAULT_ORDER if order is None else int(order))
        k_n = min(default_num_knots(dataset.n), max(0, room))
    basis = build_basis(dataset.n, True, order, k_n, knots=knots, z=z_unit)
    pi = evaluate_basis(basis, z_unit)
    fit = fit_faplm(decomp, pi, dataset.y, cfg)
    return FittedModel(decomp, basis, pi, zmap, fit, count)


def predict(fit: FitResult, context: FittedModel, x_new, z_new, return_clamped=False):
    """Predict ``Y`` at new ``(x, z)`` using the training loadings and basis.

    ``z_new`` is on the original scale. Values mapping outside [0, 1] are
    clamped; pass ``return_clamped=True`` to also get the per-row flag.
    """
    x_new = np.atleast_2d(np.asarray(x_new, dtype=float))
    z_unit = np.atleast_1d(context.zmap.forward(z_new))
    if z_unit.shape[0] != x_new.shape[0]:
        raise DimensionError("x_new and z_new have different row counts")
    clamped = (z_unit < 0.0) | (z_unit > 1.0)
    z_unit = np.clip(z_unit, 0.0, 1.0)
    f_new, u_new = factor_scores(context.decomp.b_hat, x_new)
    yhat = u_new @ fit.beta_hat + f_new @ fit.phi_hat + evaluate_basis(context.basis, z_unit).values @ fit.xi_hat
    if return_clamped:
        return yhat, clamped
    return yhat
