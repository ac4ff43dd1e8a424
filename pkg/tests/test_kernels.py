import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from faplm import _kernels_py

try:
    from faplm import _kernels_c
except ImportError:
    _kernels_c = None

needs_ext = pytest.mark.skipif(_kernels_c is None, reason="compiled extension not built")


def lasso_problem(seed, n=60, p=25):
    r = np.random.default_rng(seed)
    w = r.standard_normal((n, p))
    y = w[:, :3] @ np.array([1.0, -2.0, 0.5]) + r.standard_normal(n)
    return np.asfortranarray(w.T @ w / n), w.T @ y / n


def run(mod, g, c, lam, tol=1e-10):
    beta = np.zeros(len(c))
    sweeps, ok = mod.cd_lasso_gram(g, c, lam, beta, 10000, tol)
    return beta, sweeps, ok


@pytest.mark.parametrize("mod", [_kernels_py, _kernels_c], ids=["python", "cython"])
def test_cd_lasso_kkt(mod):
    if mod is None:
        pytest.skip("compiled extension not built")
    g, c = lasso_problem(0)
    lam = 0.1
    beta, _, ok = run(mod, g, c, lam)
    assert ok
    grad = c - g @ beta
    act = beta != 0
    np.testing.assert_allclose(grad[act], lam * np.sign(beta[act]), atol=1e-8)
    assert np.all(np.abs(grad[~act]) <= lam + 1e-8)


@needs_ext
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 0.5))
def test_cd_lasso_backends_agree(seed, lam):
    g, c = lasso_problem(seed)
    a, sa, oa = run(_kernels_py, g, c, lam)
    b, sb, ob = run(_kernels_c, g, c, lam)
    assert (sa, oa) == (sb, ob)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


@needs_ext
@given(st.lists(st.floats(0, 1), min_size=1, max_size=40), st.integers(2, 6), st.integers(0, 6))
def test_bspline_backends_agree(z, order, k_n):
    knots = np.r_[np.zeros(order), np.arange(1, k_n + 1) / (k_n + 1), np.ones(order)]
    z = np.asarray(z)
    np.testing.assert_allclose(_kernels_py.bspline_values(knots, order, z),
                               _kernels_c.bspline_values(knots, order, z), rtol=0, atol=1e-14)


def test_cd_lasso_zero_column_skipped():
    g = np.asfortranarray(np.diag([1.0, 0.0, 2.0]))
    c = np.array([1.0, 5.0, -1.0])
    beta, _, ok = run(_kernels_py, g, c, 0.5)
    assert ok
    np.testing.assert_allclose(beta, [0.5, 0.0, -0.25])


def test_pure_python_switch():
    env = dict(os.environ, FAPLM_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import faplm.kernels as k; print(k.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_pipeline_identical_across_backends(tmp_path):
    code = (
        "import numpy as np, faplm;"
        "from faplm.simulation import SimulationConfig, run_estimation_study;"
        "r = run_estimation_study(SimulationConfig(n=60, p=30, n_reps=2));"
        "print(faplm.BACKEND, repr(r.l1_errors.tolist()))"
    )
    outs = {}
    for flag in ("", "1"):
        env = dict(os.environ, FAPLM_PURE_PYTHON=flag)
        res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        backend, values = res.stdout.strip().split(" ", 1)
        outs[backend] = eval(values)
    if len(outs) == 2:
        np.testing.assert_allclose(outs["python"], outs["cython"], rtol=1e-10)
