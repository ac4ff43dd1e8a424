"""Compare the compiled and pure-Python kernels.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Both backends are imported directly, so the environment switch does not
matter here. Each case checks that the two backends agree before timing.
"""
import argparse
import json
import sys
import timeit

import numpy as np

from faplm import _kernels_py

try:
    from faplm import _kernels_c
except ImportError:
    _kernels_c = None


def lasso_case(n, p, seed=0):
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((n, p))
    beta0 = np.zeros(p)
    beta0[:5] = 2.0
    y = w @ beta0 + rng.standard_normal(n)
    g = np.asfortranarray(w.T @ w / n)
    c = w.T @ y / n
    lam = np.sqrt(np.log(p) / n)

    def run(mod):
        beta = np.zeros(p)
        mod.cd_lasso_gram(g, c, lam, beta, 10000, 1e-9)
        return beta

    return run


def spline_case(m, seed=0):
    rng = np.random.default_rng(seed)
    order = 4
    knots = np.r_[np.zeros(order), np.linspace(0, 1, 7)[1:-1], np.ones(order)]
    z = rng.uniform(size=m)

    def run(mod):
        return mod.bspline_values(knots, order, z)

    return run


CASES = {
    "cd_lasso n=200 p=200": lambda: lasso_case(200, 200),
    "cd_lasso n=400 p=1000": lambda: lasso_case(400, 1000),
    "bspline m=10000": lambda: spline_case(10000),
    "bspline m=100000": lambda: spline_case(100000),
}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", default=None)
    args = ap.parse_args(argv)
    if _kernels_c is None:
        print("compiled extension not built; run `pip install -e . --no-build-isolation`", file=sys.stderr)
        return 1

    rows = []
    print(f"{'case':<24}{'python [s]':>12}{'cython [s]':>12}{'speedup':>10}")
    for name, make in CASES.items():
        run = make()
        a, b = run(_kernels_py), run(_kernels_c)
        if not np.allclose(a, b, rtol=0, atol=1e-12):
            print(f"{name}: backends disagree", file=sys.stderr)
            return 1
        t_py = min(timeit.repeat(lambda: run(_kernels_py), number=1, repeat=args.repeat))
        t_c = min(timeit.repeat(lambda: run(_kernels_c), number=1, repeat=args.repeat))
        rows.append({"case": name, "python_s": t_py, "cython_s": t_c, "speedup": t_py / t_c})
        print(f"{name:<24}{t_py:>12.4f}{t_c:>12.5f}{t_py / t_c:>9.1f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
