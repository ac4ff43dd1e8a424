import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from faplm.factors import (
    default_k_max,
    estimate_factors,
    factor_scores,
    gram_eigenvalues,
    no_factors,
    select_num_factors,
)


def check_invariants(x, d):
    n = x.shape[0]
    scale = np.linalg.norm(x)
    np.testing.assert_allclose(d.f_hat.T @ d.f_hat / n, np.eye(d.k), atol=1e-8)
    assert np.max(np.abs(d.f_hat.T @ d.u_hat)) <= 1e-8 * scale
    assert np.max(np.abs(d.f_hat @ d.b_hat.T + d.u_hat - x)) <= 1e-10 * scale
    btb = d.b_hat.T @ d.b_hat
    off = btb - np.diag(np.diag(btb))
    assert np.max(np.abs(off)) <= 1e-8 * np.max(np.abs(btb))
    np.testing.assert_allclose(d.project_out(d.u_hat), d.u_hat, atol=1e-8 * scale)


@pytest.mark.parametrize("shape", [(40, 15), (15, 40), (30, 30)])
def test_invariants_both_routes(rng, shape):
    x = rng.standard_normal(shape)
    for k in (1, 3):
        check_invariants(x, estimate_factors(x, k))


@given(st.integers(5, 25), st.integers(5, 25), st.integers(0, 2**32 - 1))
def test_invariants_property(n, p, seed):
    x = np.random.default_rng(seed).standard_normal((n, p))
    k = min(n, p) // 2
    check_invariants(x, estimate_factors(x, k))


def test_exact_low_rank_reproduced(rng):
    f = rng.standard_normal((20, 2))
    b = rng.standard_normal((10, 2))
    x = f @ b.T
    d = estimate_factors(x, 2)
    assert np.max(np.abs(d.u_hat)) < 1e-8
    np.testing.assert_allclose(d.f_hat @ d.b_hat.T, x, atol=1e-10)


def test_spiked_eigenvalues_vs_dense_oracle():
    x = np.random.default_rng(2024).standard_normal((6, 4))
    d = estimate_factors(x, 2)
    oracle = np.sort(np.linalg.eigh(x @ x.T)[0])[::-1][:2]
    np.testing.assert_allclose(d.spiked_eigenvalues, oracle, rtol=1e-9)


def test_sign_convention(rng):
    d = estimate_factors(rng.standard_normal((30, 12)), 3)
    for col in d.f_hat.T:
        assert col[np.argmax(np.abs(col))] > 0


def test_k_out_of_range(rng):
    x = rng.standard_normal((10, 5))
    with pytest.raises(ValueError):
        estimate_factors(x, 0)
    with pytest.raises(ValueError):
        estimate_factors(x, 6)


def test_nonfinite_rejected():
    x = np.ones((5, 3))
    x[1, 1] = np.nan
    with pytest.raises(ValueError):
        estimate_factors(x, 1)


def test_rotation_consistency(rng):
    x = rng.standard_normal((25, 8))
    q, _ = np.linalg.qr(rng.standard_normal((8, 8)))
    a, b = estimate_factors(x, 2), estimate_factors(x @ q, 2)
    np.testing.assert_allclose(a.spiked_eigenvalues, b.spiked_eigenvalues, rtol=1e-9)
    signs = np.sign(np.sum(a.f_hat * b.f_hat, axis=0))
    np.testing.assert_allclose(a.f_hat, b.f_hat * signs, atol=1e-8)


def _prescribed_spectrum(eigs, n=8, p=7, seed=5):
    rng = np.random.default_rng(seed)
    q1, _ = np.linalg.qr(rng.standard_normal((n, n)))
    q2, _ = np.linalg.qr(rng.standard_normal((p, p)))
    s = np.zeros((n, p))
    s[np.arange(len(eigs)), np.arange(len(eigs))] = np.sqrt(eigs)
    return q1 @ s @ q2.T


def test_ratio_selection_prescribed_spectrum():
    x = _prescribed_spectrum([100, 90, 1, 0.9, 0.8, 0.7])
    np.testing.assert_allclose(gram_eigenvalues(x)[:5], [100, 90, 1, 0.9, 0.8], rtol=1e-9)
    res = select_num_factors(x, k_max=4)
    assert res.k == 2 and not res.low_rank
    np.testing.assert_allclose(res.ratios, [100 / 90, 90, 1 / 0.9, 0.9 / 0.8], rtol=1e-9)


def test_ratio_tie_goes_to_smallest_k():
    x = _prescribed_spectrum([8, 4, 2, 1, 0.5, 0.25])
    assert select_num_factors(x, k_max=4).k == 1


def test_rank_one_low_rank_path(rng):
    x = np.outer(rng.standard_normal(12), rng.standard_normal(9))
    res = select_num_factors(x, k_max=3)
    assert res.low_rank and res.k == 1


def test_k_max_range(rng):
    x = rng.standard_normal((10, 6))
    with pytest.raises(ValueError):
        select_num_factors(x, k_max=6)
    with pytest.raises(ValueError):
        select_num_factors(x, k_max=0)


def test_default_k_max():
    assert default_k_max(200, 200) == 15
    assert default_k_max(10, 20) == 5


def test_selection_scale_invariant(rng):
    x = rng.standard_normal((30, 20)) + np.outer(rng.standard_normal(30), rng.standard_normal(20)) * 3
    assert select_num_factors(x).k == select_num_factors(1e4 * x).k


def test_factor_scores_reproduce_training(rng):
    x = rng.standard_normal((30, 12))
    d = estimate_factors(x, 2)
    f, u = factor_scores(d.b_hat, x)
    np.testing.assert_allclose(f, d.f_hat, atol=1e-10)
    np.testing.assert_allclose(u, d.u_hat, atol=1e-10)


def test_no_factors(rng):
    x = rng.standard_normal((8, 3))
    d = no_factors(x)
    assert d.k == 0 and d.f_hat.shape == (8, 0)
    np.testing.assert_array_equal(d.u_hat, x)
