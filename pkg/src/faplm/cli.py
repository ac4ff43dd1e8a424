"""Command-line front end: ``faplm fit | test | predict | simulate``.

Exit codes: 0 success, 2 malformed input or invalid configuration,
3 failure inside the estimation pipeline.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np

from . import kernels
from .core import (
    STREAM_BOOTSTRAP,
    STREAM_CV,
    STREAM_SIMULATION,
    AffineMap,
    Dataset,
    FaplmError,
    RngSpec,
    validate_dataset,
)
from .factors import FactorDecomposition
from .inference import DEFAULT_N_BOOT, InferenceConfig, run_test
from .regression import FitConfig, FittedModel, FitResult, default_lambda_grid, fit_model, predict
from .simulation import METHODS, SimulationConfig, run_estimation_study, run_power_study
from .splines import SplineBasis

EXIT_INPUT = 2
EXIT_PIPELINE = 3
G_GRID_POINTS = 201


class InputError(Exception):
    pass


def software_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def read_matrix(path, header=False) -> np.ndarray:
    """Read a numeric CSV, reporting the line and column of the first bad cell."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"input file not found: {path}")
    rows = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if header and lineno == 1:
                continue
            if not row or all(not c.strip() for c in row):
                continue
            vals = []
            for col, cell in enumerate(row, start=1):
                try:
                    v = float(cell)
                except ValueError:
                    raise InputError(f"{path}: line {lineno}, column {col}: not a number: {cell!r}") from None
                if not math.isfinite(v):
                    raise InputError(f"{path}: line {lineno}, column {col}: non-finite value {cell!r}")
                vals.append(v)
            if rows and len(vals) != len(rows[0]):
                raise InputError(
                    f"{path}: line {lineno}: expected {len(rows[0])} columns, found {len(vals)}"
                )
            rows.append(vals)
    if not rows:
        raise InputError(f"{path}: no data rows")
    return np.array(rows, dtype=float)


def read_vector(path, header=False) -> np.ndarray:
    m = read_matrix(path, header)
    if m.shape[1] != 1:
        raise InputError(f"{path}: expected a single column, found {m.shape[1]}")
    return m[:, 0]


def resolve_seed(seed) -> int:
    if seed is not None:
        return int(seed)
    env = os.environ.get("FAPLM_SEED")
    if env:
        try:
            return int(env)
        except ValueError:
            raise InputError(f"FAPLM_SEED is not an integer: {env!r}") from None
    return 0


def _json_safe(obj):
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _json_safe(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path, payload):
    Path(path).write_text(json.dumps(_json_safe(payload), indent=2) + "\n")


def _parse_k(value):
    if value == "auto":
        return "auto"
    try:
        k = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"--k must be 'auto' or an integer, got {value!r}") from None
    if k < 0:
        raise argparse.ArgumentTypeError("--k must be nonnegative")
    return k


def _parse_lambda(value):
    if value in ("auto", "rate"):
        return value
    return _parse_auto_float(value)


def _parse_auto_float(value):
    if value == "auto":
        return "auto"
    try:
        v = float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'auto' or a number, got {value!r}") from None
    if not (v >= 0 and math.isfinite(v)):
        raise argparse.ArgumentTypeError("value must be nonnegative")
    return v


def _parse_floats(value):
    try:
        return [float(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {value!r}") from None


def _load_dataset(args) -> Dataset:
    x = read_matrix(args.x, args.header)
    y = read_vector(args.y, args.header)
    z = read_vector(args.z, args.header)
    try:
        return validate_dataset(Dataset(y, x, z))
    except FaplmError as exc:
        raise InputError(str(exc)) from None


def _fit_config(args, seed, default_lam) -> FitConfig:
    return FitConfig(
        lam=default_lam if args.lam is None else args.lam,
        cv_folds=args.cv_folds,
        max_iter=args.max_iter,
        tol=args.tol,
        rng=RngSpec(seed, STREAM_CV),
    )


def _resolved_config(args, model: FittedModel, fit_cfg: FitConfig, n, p) -> dict:
    snap = {
        "k_requested": args.k,
        "k_used": model.decomp.k,
        "k_max": args.k_max if model.factor_count is None else len(model.factor_count.ratios),
        "order": model.basis.order,
        "n_internal_knots": model.basis.n_internal_knots,
        "basis_dim": model.basis.basis_dim,
        "knots": args.knots,
        "fit": fit_cfg.snapshot(),
        "lambda_grid": (
            list(default_lambda_grid(n, p)) if fit_cfg.lam == "auto" and fit_cfg.lambda_grid is None
            else fit_cfg.lambda_grid
        ),
        "lambda_used": model.fit.lambda_used,
        "header": args.header,
        "threads": args.threads,
    }
    return snap


def _manifest(command, config, seed, timings) -> dict:
    return {
        "command": command,
        "config_snapshot": config,
        "software_version": software_version(),
        "kernel_backend": kernels.BACKEND,
        "seeds": {"seed": seed, "cv_stream": STREAM_CV, "bootstrap_stream": STREAM_BOOTSTRAP,
                  "simulation_stream": STREAM_SIMULATION},
        "timings": timings,
    }


def _fit_payload(model: FittedModel, n, p) -> dict:
    fit = model.fit
    grid = np.linspace(0.0, 1.0, G_GRID_POINTS)
    active = fit.active_set
    return {
        "n": n,
        "p": p,
        "beta_hat": {"p": p, "active": {str(int(j)): float(fit.beta_hat[j]) for j in active}},
        "xi_hat": fit.xi_hat,
        "phi_hat": fit.phi_hat,
        "lambda_used": fit.lambda_used,
        "k": model.decomp.k,
        "factor_selection": None if model.factor_count is None else {
            "k_hat": model.factor_count.k,
            "ratios": model.factor_count.ratios,
            "low_rank": model.factor_count.low_rank,
        },
        "converged": fit.converged,
        "n_iterations": fit.n_iterations,
        "objective_value": fit.objective_value,
        "cv_curve": None if fit.cv_curve is None else [
            {"lambda": row[0], "cv_error": row[1]} for row in fit.cv_curve
        ],
        "g_hat_grid": {
            "z_unit": grid,
            "z": model.zmap.inverse(grid),
            "g_hat": model.g_hat(grid),
        },
        "fitted_values": fit.fitted_values,
        "basis": model.basis.to_dict(),
        "z_map": {"offset": model.zmap.offset, "scale": model.zmap.scale},
        "loadings": model.decomp.b_hat,
    }


def cmd_fit(args) -> int:
    seed = resolve_seed(args.seed)
    data = _load_dataset(args)
    cfg = _fit_config(args, seed, "auto")
    t0 = time.perf_counter()
    model = fit_model(data, args.k, args.order, args.knots_count, args.knots, cfg, args.k_max)
    timings = {"fit": time.perf_counter() - t0}
    payload = _fit_payload(model, data.n, data.p)
    payload["manifest"] = _manifest("fit", _resolved_config(args, model, cfg, data.n, data.p), seed, timings)
    write_json(args.out, payload)
    return 0


def load_fit(path) -> tuple[FitResult, FittedModel]:
    d = json.loads(Path(path).read_text())
    p = int(d["beta_hat"]["p"])
    beta = np.zeros(p)
    for j, v in d["beta_hat"]["active"].items():
        beta[int(j)] = v
    k = int(d["k"])
    b_hat = np.asarray(d["loadings"], dtype=float).reshape(p, k)
    fit = FitResult(
        beta_hat=beta,
        xi_hat=np.asarray(d["xi_hat"], dtype=float),
        phi_hat=np.asarray(d["phi_hat"], dtype=float),
        lambda_used=float(d["lambda_used"]),
        n_iterations=int(d["n_iterations"]),
        converged=bool(d["converged"]),
        g_hat_values=np.zeros(0),
        objective_value=float(d["objective_value"]),
        fitted_values=np.asarray(d.get("fitted_values", []), dtype=float),
        response_scale=float("nan"),
    )
    decomp = FactorDecomposition(np.zeros((0, k)), b_hat, np.zeros((0, p)), k, np.zeros(k))
    basis = SplineBasis.from_dict(d["basis"])
    zmap = AffineMap(float(d["z_map"]["offset"]), float(d["z_map"]["scale"]))
    return fit, FittedModel(decomp, basis, None, zmap, fit)


def cmd_predict(args) -> int:
    try:
        fit, ctx = load_fit(args.fit)
    except (OSError, KeyError, ValueError) as exc:
        raise InputError(f"cannot read fit file {args.fit}: {exc}") from None
    x = read_matrix(args.x, args.header)
    z = read_vector(args.z, args.header)
    if x.shape[0] != z.shape[0] or x.shape[1] != fit.beta_hat.shape[0]:
        raise InputError(
            f"x is {x.shape[0]}x{x.shape[1]} and z has {z.shape[0]} rows; the fit expects p={fit.beta_hat.shape[0]}"
        )
    yhat, clamped = predict(fit, ctx, x, z, return_clamped=True)
    lines = ["y_hat,z_clamped"] + [f"{v!r},{int(c)}" for v, c in zip(yhat.tolist(), clamped)]
    Path(args.out).write_text("\n".join(lines) + "\n")
    if clamped.any():
        print(f"warning: {int(clamped.sum())} z values outside the training range were clamped",
              file=sys.stderr)
    return 0


def cmd_test(args) -> int:
    seed = resolve_seed(args.seed)
    data = _load_dataset(args)
    fit_cfg = _fit_config(args, seed, "rate")
    icfg = InferenceConfig(
        k=args.k,
        k_max=args.k_max,
        order=args.order,
        k_n=args.knots_count,
        knots=args.knots,
        fit=fit_cfg,
        delta_n=args.delta,
        n_boot=args.boot,
        alpha=args.alpha,
        rng=RngSpec(seed, STREAM_BOOTSTRAP),
        n_jobs=args.threads,
    )
    res = run_test(data, icfg)
    prov = dict(res.provenance)
    timings = prov.pop("timings")
    config = icfg.snapshot()
    config.update({"resolved": prov, "header": args.header, "threads": args.threads})
    payload = {
        "n": data.n,
        "p": data.p,
        "t_n": res.t_n,
        "c_hat": res.c_hat,
        "p_value": res.p_value,
        "reject": res.reject,
        "alpha": res.alpha,
        "sigma_eps_hat2": res.sigma_eps_hat2,
        "n_boot": res.n_boot,
        "beta_tilde_max_abs": float(np.max(np.abs(res.beta_tilde))),
        "manifest": _manifest("test", config, seed, timings),
    }
    write_json(args.out, payload)
    return 0


def _simulation_config(args, seed) -> SimulationConfig:
    overrides = {}
    if args.config:
        try:
            overrides = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read config {args.config}: {exc}") from None
    params = {
        "n": args.n, "p": args.p, "k_true": args.k, "s": args.s, "signal": args.signal,
        "link": args.link, "sigma_eps2": args.sigma2, "n_reps": args.reps,
        "method": args.method, "estimate_k": args.estimate_k, "n_jobs": args.threads,
    }
    unknown = set(overrides) - set(params) - {"lambda", "omega", "alpha", "boot", "delta", "study"}
    if unknown:
        raise InputError(f"unknown config keys: {sorted(unknown)}")
    for key in params:
        if key in overrides:
            params[key] = overrides[key]
    lam = overrides.get("lambda", args.lam)
    solver = {"cv_folds": args.cv_folds, "max_iter": args.max_iter, "tol": args.tol}
    try:
        return SimulationConfig(
            rng=RngSpec(seed, STREAM_SIMULATION),
            fit=FitConfig(lam="auto" if lam is None else lam, **solver),
            test_fit=FitConfig(lam="rate" if lam is None else lam, **solver),
            **params,
        )
    except (TypeError, ValueError) as exc:
        raise InputError(f"invalid simulation config: {exc}") from None


def cmd_simulate(args) -> int:
    seed = resolve_seed(args.seed)
    cfg = _simulation_config(args, seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    if args.study == "estimation":
        report = run_estimation_study(cfg)
        body = {"study": "estimation", "summary": report.summary}
        config = cfg.snapshot()
    else:
        omegas = args.omega if args.omega is not None else [0.0, 0.25, 0.5, 1.0]
        try:
            report = run_power_study(cfg, omegas, args.alpha, args.boot, args.delta)
        except ValueError as exc:
            raise InputError(str(exc)) from None
        body = {"study": "power", "table": report.table}
        config = report.config
    timings = {"total": time.perf_counter() - t0}
    body["manifest"] = _manifest("simulate", config, seed, timings)
    write_json(out / "report.json", body)
    (out / "replications.csv").write_text(report.to_csv())
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_INPUT)


def _add_data_args(p):
    p.add_argument("--x", required=True, help="n-by-p covariate CSV")
    p.add_argument("--y", required=True, help="response CSV (one column)")
    p.add_argument("--z", required=True, help="nonparametric covariate CSV (one column)")
    p.add_argument("--header", action="store_true", help="skip the first line of each CSV")


def _add_model_args(p):
    p.add_argument("--k", type=_parse_k, default="auto", help="number of factors or 'auto'")
    p.add_argument("--k-max", type=int, default=None, help="upper bound for the ratio estimator")
    p.add_argument("--order", type=int, default=None, help="spline order (default 4)")
    p.add_argument("--knots-count", type=int, default=None,
                   help="number of internal knots (default ceil(n^(1/9)))")
    p.add_argument("--knots", choices=("uniform", "quantile"), default="uniform")
    p.add_argument("--lambda", dest="lam", type=_parse_lambda, default=None,
                   help="penalty, 'auto' (cross-validation) or 'rate' (sqrt(log p / n)); "
                        "default auto for fit, rate for test")
    _add_solver_args(p)


def _add_solver_args(p):
    p.add_argument("--cv-folds", type=int, default=5)
    p.add_argument("--max-iter", type=int, default=10000)
    p.add_argument("--tol", type=float, default=1e-7)
    p.add_argument("--seed", type=int, default=None, help="random seed (fallback: $FAPLM_SEED, then 0)")
    p.add_argument("--threads", type=int, default=1, help="worker cap; results do not depend on it")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="faplm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=software_version())
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="estimate the model and write fit.json")
    _add_data_args(p)
    _add_model_args(p)
    p.add_argument("--out", default="fit.json")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("test", help="test H0: beta = 0 and write test.json")
    _add_data_args(p)
    _add_model_args(p)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--boot", type=int, default=DEFAULT_N_BOOT)
    p.add_argument("--delta", type=_parse_auto_float, default="auto", help="CLIME radius or 'auto'")
    p.add_argument("--out", default="test.json")
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("predict", help="predict from a fit.json")
    p.add_argument("--fit", required=True)
    p.add_argument("--x", required=True)
    p.add_argument("--z", required=True)
    p.add_argument("--header", action="store_true")
    p.add_argument("--out", default="predictions.csv")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("simulate", help="run a Monte Carlo study")
    p.add_argument("--study", choices=("estimation", "power"), default="estimation")
    p.add_argument("--method", type=str.upper, choices=METHODS, default="FAPLM")
    p.add_argument("--link", choices=("linear", "sine"), default="linear")
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--p", type=int, default=200)
    p.add_argument("--k", type=int, default=2, help="true number of factors")
    p.add_argument("--estimate-k", action="store_true", help="select K by the eigenvalue ratio")
    p.add_argument("--s", type=int, default=5)
    p.add_argument("--signal", type=float, default=2.0)
    p.add_argument("--sigma2", type=float, default=0.25)
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--omega", type=_parse_floats, default=None, help="power grid, e.g. 0,0.5,1")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--boot", type=int, default=500)
    p.add_argument("--delta", type=_parse_auto_float, default="auto")
    p.add_argument("--lambda", dest="lam", type=_parse_lambda, default=None,
                   help="penalty rule; default auto for estimation, rate for power")
    p.add_argument("--config", default=None, help="JSON file overriding design knobs")
    p.add_argument("--out-dir", default=".")
    _add_solver_args(p)
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"faplm: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (FaplmError, np.linalg.LinAlgError, ValueError) as exc:
        stage = type(exc).__name__
        print(f"faplm: pipeline error in {args.command} ({stage}): {exc}", file=sys.stderr)
        return EXIT_PIPELINE


if __name__ == "__main__":
    sys.exit(main())
