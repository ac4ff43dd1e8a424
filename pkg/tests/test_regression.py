import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from faplm.core import Dataset, DimensionError, RankDeficientError, RngSpec
from faplm.factors import estimate_factors, no_factors
from faplm.regression import (
    FitConfig,
    default_lambda_grid,
    fit_faplm,
    fit_model,
    predict,
    profiled_design,
    select_lambda_cv,
)
from faplm.splines import build_basis, evaluate_basis
from oracles import normal_equations


def _pieces(y, x, z, k=2, order=4, k_n=2):
    decomp = estimate_factors(x, k) if k else no_factors(x)
    pi = evaluate_basis(build_basis(len(y), order=order, k_n=k_n), z)
    return decomp, pi


def kkt_gap(decomp, pi, y, fit):
    prob = profiled_design(decomp, pi, y)
    grad = prob.w.T @ (prob.wy - prob.w @ fit.beta_hat) / prob.n
    lam = fit.lambda_used
    b = fit.beta_hat
    viol = np.where(b > 0, np.abs(grad - lam), np.where(b < 0, np.abs(grad + lam), np.abs(grad) - lam))
    return float(np.max(viol)), prob


def test_config_validation():
    for bad in ({"lam": -1.0}, {"lam": "cv"}, {"tol": 0.0}, {"max_iter": 0}, {"cv_folds": 1},
                {"lambda_grid": (0.1, -0.2)}):
        with pytest.raises(ValueError):
            FitConfig(**bad)


def test_kkt_and_closed_forms(factor_data):
    y, x, z = factor_data
    decomp, pi = _pieces(y, x, z)
    fit = fit_faplm(decomp, pi, y, FitConfig(lam=0.05))
    assert fit.converged
    gap, prob = kkt_gap(decomp, pi, y, fit)
    assert gap <= 10 * 1e-7 * prob.scale
    n = len(y)
    np.testing.assert_allclose(fit.phi_hat, decomp.f_hat.T @ (y - pi.values @ fit.xi_hat) / n, atol=1e-8)
    r = y - decomp.u_hat @ fit.beta_hat - decomp.f_hat @ fit.phi_hat - pi.values @ fit.xi_hat
    recomputed = r @ r / (2 * n) + fit.lambda_used * np.sum(np.abs(fit.beta_hat))
    assert abs(fit.objective_value - recomputed) <= 1e-8 * abs(recomputed)
    np.testing.assert_allclose(decomp.f_hat.T @ r, 0, atol=1e-6)
    # xi solves its least-squares normal equations given beta
    partial = y - decomp.u_hat @ fit.beta_hat - decomp.f_hat @ fit.phi_hat
    np.testing.assert_allclose(pi.values.T @ (partial - pi.values @ fit.xi_hat), 0, atol=1e-8)
    np.testing.assert_allclose(fit.g_hat_values, pi.values @ fit.xi_hat)


def test_lambda_max_gives_zero(factor_data):
    y, x, z = factor_data
    decomp, pi = _pieces(y, x, z)
    prob = profiled_design(decomp, pi, y)
    fit = fit_faplm(decomp, pi, y, FitConfig(lam=prob.lambda_max))
    assert np.all(fit.beta_hat == 0)
    # xi is then the spline regression of (I - P) y
    target = decomp.project_out(y)
    coef = np.linalg.lstsq(decomp.project_out(pi.values), target, rcond=None)[0]
    np.testing.assert_allclose(fit.xi_hat, coef, atol=1e-8)
    below = fit_faplm(decomp, pi, y, FitConfig(lam=0.99 * prob.lambda_max))
    assert np.count_nonzero(below.beta_hat) >= 1


def test_ols_oracle_k0_lambda0(rng):
    n, p = 50, 5
    x = rng.standard_normal((n, p))
    z = rng.uniform(size=n)
    y = x @ rng.standard_normal(p) + rng.standard_normal(n)
    decomp, pi = _pieces(y, x, z, k=0)
    fit = fit_faplm(decomp, pi, y, FitConfig(lam=0.0, tol=1e-12, max_iter=100000))
    coef = normal_equations(np.hstack([x, pi.values]), y)
    np.testing.assert_allclose(fit.beta_hat, coef[:p], atol=1e-6)
    np.testing.assert_allclose(fit.xi_hat, coef[p:], atol=1e-6)


@given(st.floats(0.01, 100.0), st.integers(0, 1000))
def test_scaling_homogeneity(c, seed):
    r = np.random.default_rng(seed)
    n, p = 40, 12
    x = r.standard_normal((n, p))
    z = r.uniform(size=n)
    y = x[:, 0] * 2 + z + r.standard_normal(n)
    decomp, pi = _pieces(y, x, z, k=1)
    a = fit_faplm(decomp, pi, y, FitConfig(lam=0.1, tol=1e-10))
    b = fit_faplm(decomp, pi, c * y, FitConfig(lam=0.1 * c, tol=1e-10))
    np.testing.assert_array_equal(a.active_set, b.active_set)
    for u, v in ((a.beta_hat, b.beta_hat), (a.xi_hat, b.xi_hat), (a.phi_hat, b.phi_hat)):
        np.testing.assert_allclose(c * u, v, rtol=1e-6, atol=1e-8 * c)


def test_rank_deficient_basis(rng):
    n = 8
    x = rng.standard_normal((n, 3))
    z = rng.uniform(size=n)
    decomp, pi = _pieces(np.zeros(n), x, z, k=1, order=4, k_n=5)
    with pytest.raises(RankDeficientError):
        fit_faplm(decomp, pi, rng.standard_normal(n), FitConfig(lam=0.1))


def test_dimension_mismatch(factor_data):
    y, x, z = factor_data
    decomp, pi = _pieces(y, x, z)
    with pytest.raises(DimensionError):
        fit_faplm(decomp, pi, y[:-1], FitConfig(lam=0.1))


def test_nonconvergence_flagged(factor_data):
    y, x, z = factor_data
    decomp, pi = _pieces(y, x, z)
    fit = fit_faplm(decomp, pi, y, FitConfig(lam=0.01, max_iter=1, tol=1e-12))
    assert not fit.converged and fit.n_iterations == 1


def test_lambda_anchor_n200_p200():
    grid = default_lambda_grid(200, 200)
    assert math.isclose(grid[4], math.sqrt(math.log(200) / 200))
    assert abs(grid[4] - 0.1628) < 1e-4
    np.testing.assert_allclose(grid, grid[4] * 2.0 ** np.arange(-4, 3))


def test_cv_single_value_grid(factor_data):
    y, x, z = factor_data
    decomp, pi = _pieces(y, x, z)
    lam, _ = select_lambda_cv(decomp, pi, y, FitConfig(lambda_grid=(0.37,)))
    assert lam == 0.37


def test_cv_too_few_samples(rng):
    x = rng.standard_normal((9, 3))
    y = rng.standard_normal(9)
    decomp, pi = _pieces(y, x, rng.uniform(size=9), k=0, order=2, k_n=0)
    with pytest.raises(ValueError):
        select_lambda_cv(decomp, pi, y, FitConfig())


def test_cv_deterministic_and_curve(factor_data):
    y, x, z = factor_data
    decomp, pi = _pieces(y, x, z)
    a = fit_faplm(decomp, pi, y, FitConfig(rng=RngSpec(3, 3)))
    b = fit_faplm(decomp, pi, y, FitConfig(rng=RngSpec(3, 3)))
    assert a.lambda_used == b.lambda_used
    np.testing.assert_array_equal(a.cv_curve, b.cv_curve)
    assert a.cv_curve.shape == (7, 2)
    assert a.lambda_used == a.cv_curve[np.argmin(a.cv_curve[:, 1]), 0]


def test_cv_prefers_large_lambda_under_pure_noise():
    wins = 0
    for seed in range(50):
        r = np.random.default_rng(seed)
        n, p = 100, 50
        x = r.standard_normal((n, p))
        y = r.standard_normal(n)
        decomp, pi = _pieces(y, x, r.uniform(size=n), k=0)
        lam, _ = select_lambda_cv(decomp, pi, y, FitConfig(rng=RngSpec(seed, 3)))
        wins += lam == default_lambda_grid(n, p)[-1]
    assert wins >= 30


def test_predict_training_rows_reproduce_fit(factor_data):
    y, x, z = factor_data
    model = fit_model(Dataset(y, x, 3 * z - 1), k=2, cfg=FitConfig(lam=0.05))
    np.testing.assert_allclose(predict(model.fit, model, x, 3 * z - 1), model.fit.fitted_values, atol=1e-8)


def test_predict_zero_row_uses_spline_only(factor_data):
    y, x, z = factor_data
    model = fit_model(Dataset(y, x, z), k=2, cfg=FitConfig(lam=0.05))
    z_orig = model.zmap.inverse(0.0)
    yhat = predict(model.fit, model, np.zeros((1, x.shape[1])), [z_orig])
    np.testing.assert_allclose(yhat, model.g_hat([0.0]), atol=1e-12)


def test_predict_clamps_and_flags(factor_data):
    y, x, z = factor_data
    model = fit_model(Dataset(y, x, z), k=2, cfg=FitConfig(lam=0.05))
    hi = model.zmap.inverse(1.0)
    yhat, flag = predict(model.fit, model, x[:2], [hi + 5.0, hi], return_clamped=True)
    assert flag.tolist() == [True, False]
    assert yhat[0] == pytest.approx(predict(model.fit, model, x[:1], [hi])[0], abs=1e-12)


def test_predict_dimension_mismatch(factor_data):
    y, x, z = factor_data
    model = fit_model(Dataset(y, x, z), k=2, cfg=FitConfig(lam=0.05))
    with pytest.raises(DimensionError):
        predict(model.fit, model, x[:, :-1], z)


def test_tiny_sample_default_knots(rng):
    n = 5
    x = rng.standard_normal((n, 3))
    model = fit_model(Dataset(rng.standard_normal(n), x, rng.uniform(size=n)), k=1, cfg=FitConfig(lam=10.0))
    assert model.basis.n_internal_knots == 0
    assert np.all(model.fit.beta_hat == 0)
