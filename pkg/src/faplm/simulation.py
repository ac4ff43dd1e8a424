"""Monte Carlo designs with known ground truth, estimation studies and power studies.

Data follow ``X = F B' + U`` and ``Y = U beta + F B' beta + g(Z) + eps`` with
standard normal ``F`` and ``U``, ``B ~ Unif(-1, 1)`` redrawn per replication,
``Z ~ Unif(0, 1)`` and ``eps ~ N(0, sigma_eps2)``. Replication ``i`` draws from
Philox substream ``i``, so any subset of replications reproduces the
corresponding entries of a full run.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import (
    STREAM_BOOTSTRAP,
    STREAM_CV,
    STREAM_SIMULATION,
    Dataset,
    GroundTruth,
    RngSpec,
)
from .inference import InferenceConfig, run_test
from .regression import FitConfig, fit_model

LINKS = {
    "linear": lambda z: z,
    "sine": lambda z: np.sin(2 * np.pi * z),
}
METHODS = ("FAPLM", "PLM", "FALM")


@dataclass(frozen=True)
class SimulationConfig:
    n: int = 200
    p: int = 200
    k_true: int = 2
    s: int = 5
    signal: float = 2.0
    link: str = "linear"
    sigma_eps2: float = 0.25
    n_reps: int = 100
    method: str = "FAPLM"
    rng: RngSpec = field(default_factory=lambda: RngSpec(0, STREAM_SIMULATION))
    fit: FitConfig = field(default_factory=FitConfig)
    test_fit: FitConfig = field(default_factory=lambda: FitConfig(lam="rate"))
    estimate_k: bool = False
    n_jobs: int = 1

    def __post_init__(self):
        method = self.method.upper()
        object.__setattr__(self, "method", method)
        if method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.link not in LINKS:
            raise ValueError(f"link must be one of {tuple(LINKS)}, got {self.link!r}")
        if not 0 <= self.s <= self.p:
            raise ValueError("need 0 <= s <= p")
        if self.n_reps < 1:
            raise ValueError("n_reps must be at least 1")
        if self.n < 2 or self.p < 1 or self.k_true < 0:
            raise ValueError("invalid dimensions")
        if not self.sigma_eps2 > 0:
            raise ValueError("sigma_eps2 must be positive")

    def snapshot(self) -> dict:
        d = dataclasses.asdict(self)
        d["rng"] = {"seed": self.rng.seed, "stream_id": self.rng.stream_id}
        d["fit"] = self.fit.snapshot()
        d["test_fit"] = self.test_fit.snapshot()
        return d


def simulate_dataset(cfg: SimulationConfig, rep_index: int) -> tuple[Dataset, GroundTruth]:
    gen = cfg.rng.generator(rep_index)
    n, p, k = cfg.n, cfg.p, cfg.k_true
    f = gen.standard_normal((n, k))
    u = gen.standard_normal((n, p))
    b = gen.uniform(-1.0, 1.0, size=(p, k))
    z = gen.uniform(0.0, 1.0, size=n)
    eps = gen.normal(0.0, math.sqrt(cfg.sigma_eps2), size=n)
    beta0 = np.zeros(p)
    beta0[: cfg.s] = cfg.signal
    truth = GroundTruth(beta0=beta0, g0_values=LINKS[cfg.link](z), varepsilon=eps, f=f, u=u,
                        loading_b=b, sigma_eps2=cfg.sigma_eps2)
    x = f @ b.T + u
    return Dataset(truth.response(), x, z), truth


def _method_args(cfg: SimulationConfig):
    k = "auto" if cfg.estimate_k else cfg.k_true
    if cfg.method == "PLM":
        return {"k": 0}
    if cfg.method == "FALM":
        # intercept plus linear term in z: order-2 B-splines without internal knots
        return {"k": k, "order": 2, "k_n": 0}
    return {"k": k}


def _rep_fit_config(fit: FitConfig, seed: int, rep: int) -> FitConfig:
    return dataclasses.replace(fit, rng=RngSpec(seed, STREAM_CV), cv_substream=rep)


def _estimation_rep(cfg: SimulationConfig, rep: int) -> dict:
    data, truth = simulate_dataset(cfg, rep)
    model = fit_model(data, cfg=_rep_fit_config(cfg.fit, cfg.rng.seed, rep), **_method_args(cfg))
    diff = model.fit.beta_hat - truth.beta0
    return {
        "rep": rep,
        "l1_error": float(np.sum(np.abs(diff))),
        "l2_error": float(np.sqrt(np.sum(diff**2))),
        "g_rmse": float(np.sqrt(np.mean((model.fit.g_hat_values - truth.g0_values) ** 2))),
        "lambda_used": model.fit.lambda_used,
        "k": model.decomp.k,
        "converged": model.fit.converged,
    }


def _map(fn, cfg, items, n_jobs):
    if n_jobs and n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as ex:
            return list(ex.map(fn, [cfg] * len(items), items))
    return [fn(cfg, i) for i in items]


def _mean_se(v):
    v = np.asarray(v, dtype=float)
    se = float(np.std(v, ddof=1) / math.sqrt(len(v))) if len(v) > 1 else float("nan")
    return float(np.mean(v)), se


@dataclass
class SimulationReport:
    config: dict
    replications: list
    l1_errors: np.ndarray
    l2_errors: np.ndarray
    g_rmse: np.ndarray
    rejection_rate: float | None = None
    summary: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {"study": "estimation", "config": self.config, "summary": self.summary,
             "rejection_rate": self.rejection_rate},
            indent=2,
        )

    def to_csv(self) -> str:
        return _rows_to_csv(self.replications)


def _rows_to_csv(rows) -> str:
    buf = io.StringIO()
    if not rows:
        return ""
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def run_estimation_study(cfg: SimulationConfig, reps=None) -> SimulationReport:
    """Simulate and fit ``cfg.n_reps`` replications (or the given replication indices)."""
    reps = list(range(cfg.n_reps)) if reps is None else list(reps)
    rows = _map(_estimation_rep, cfg, reps, cfg.n_jobs)
    l1 = np.array([r["l1_error"] for r in rows])
    l2 = np.array([r["l2_error"] for r in rows])
    rmse = np.array([r["g_rmse"] for r in rows])
    summary = {}
    for name, v in (("l1_error", l1), ("l2_error", l2), ("g_rmse", rmse)):
        summary[name + "_mean"], summary[name + "_se"] = _mean_se(v)
    return SimulationReport(cfg.snapshot(), rows, l1, l2, rmse, None, summary)


@dataclass
class PowerReport:
    config: dict
    table: list
    replications: list

    def rates(self) -> dict:
        return {row["omega"]: row["rejection_rate"] for row in self.table}

    def to_json(self) -> str:
        return json.dumps({"study": "power", "config": self.config, "table": self.table}, indent=2)

    def to_csv(self) -> str:
        return _rows_to_csv(self.replications)


def _power_rep(args, rep):
    cfg, omega, omega_index, alpha, n_boot, delta_n = args
    # fresh data for every omega: replication keys are disjoint across the grid
    key = omega_index * (1 << 32) + rep
    data, _ = simulate_dataset(dataclasses.replace(cfg, signal=omega), key)
    method = _method_args(cfg)
    icfg = InferenceConfig(
        k=method["k"],
        order=method.get("order"),
        k_n=method.get("k_n"),
        fit=_rep_fit_config(cfg.test_fit, cfg.rng.seed, key),
        delta_n=delta_n,
        n_boot=n_boot,
        alpha=alpha,
        rng=RngSpec(cfg.rng.seed, ((key + 1) << 8) | STREAM_BOOTSTRAP),
    )
    res = run_test(data, icfg)
    return {
        "omega": float(omega),
        "rep": rep,
        "t_n": res.t_n,
        "c_hat": res.c_hat,
        "p_value": res.p_value,
        "reject": int(res.reject),
        "sigma_eps_hat2": res.sigma_eps_hat2,
        "lambda_used": res.provenance["lambda_used"],
    }


def run_power_study(cfg: SimulationConfig, omegas=(0.0, 0.25, 0.5, 1.0), alpha: float = 0.05,
                    n_boot: int = 500, delta_n: float | str = "auto", reps=None) -> PowerReport:
    """Rejection rate of the max-type test at each signal level ``omega`` (``omega = 0`` gives size)."""
    omegas = [float(w) for w in omegas]
    if 0.0 not in omegas:
        raise ValueError("the omega grid must include 0 (the size row)")
    reps = list(range(cfg.n_reps)) if reps is None else list(reps)
    table, all_rows = [], []
    for i, omega in enumerate(omegas):
        args = (cfg, omega, i, alpha, n_boot, delta_n)
        rows = _map(_power_rep, args, reps, cfg.n_jobs)
        rate = float(np.mean([r["reject"] for r in rows]))
        se = math.sqrt(rate * (1 - rate) / len(rows))
        table.append({"omega": omega, "rejection_rate": rate, "se": se, "n_reps": len(rows)})
        all_rows.extend(rows)
    snap = cfg.snapshot()
    snap.update({"omegas": omegas, "alpha": alpha, "n_boot": n_boot, "delta_n": delta_n})
    return PowerReport(snap, table, all_rows)
