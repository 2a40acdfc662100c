"""Simulation study: data generation, baselines, metrics, replication runner.

Synthetic designs have AR-correlated covariates and one of four error laws;
methods under comparison are the smoothed-likelihood sampler, the
asymmetric-Laplace random-walk baseline, and the frequentist point fit.
Replication results are averaged into one row per method and can be emitted
as CSV plus a JSON run manifest.
"""
from __future__ import annotations

import csv
import json
import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import t as student_t

from . import __version__ as _pkg_version
from .bandwidth import BandwidthGrid, cv_select, pilot_residuals, silverman_base
from .diagnostics import credible_interval, summarize_chains
from .kernels import Kernel, QuantileSpec, check_loss
from .model import Dataset, Priors
from .optimize import ConvergenceError, minimize_bb
from .samplers import run_ald_baseline, run_block_sampler
from .utils import chain_rng

__all__ = [
    "Scenario",
    "MetricsRow",
    "ReplicationSummary",
    "gen_design",
    "gen_errors",
    "make_datasets",
    "true_beta_at_tau",
    "std_qr_fit",
    "evaluate_metrics",
    "run_replications",
    "write_metrics_csv",
    "write_manifest",
]

ERROR_KINDS = ("normal", "student_t3", "normal_mixture", "heteroscedastic")

# mixture component spreads: the 0.2 N(0, 3) + 0.8 N(0, 4) weights read the
# second parameter as a variance
_MIX_W = (0.2, 0.8)
_MIX_SD = (math.sqrt(3.0), 2.0)


@dataclass(frozen=True)
class Scenario:
    """One synthetic design: sizes, covariate correlation, truth, error law."""

    n_train: int
    n_test: int
    d: int
    rho: float
    beta0: tuple[float, ...]
    error_kind: str
    tau: float

    def __post_init__(self) -> None:
        if self.n_train < 1 or self.n_test < 1:
            raise ValueError("sizes must be >= 1")
        if not abs(self.rho) < 1:
            raise ValueError("need |rho| < 1")
        if len(self.beta0) != self.d:
            raise ValueError("beta0 must have d entries")
        if self.error_kind not in ERROR_KINDS:
            raise ValueError(f"unknown error kind {self.error_kind!r}")
        if not 0.0 < self.tau < 1.0:
            raise ValueError("tau must be in (0, 1)")

    @classmethod
    def dense(cls, tau: float, error_kind: str = "normal", n_train: int = 200,
              n_test: int = 1000, d: int = 8) -> "Scenario":
        return cls(n_train, n_test, d, 0.5, (0.85,) * d, error_kind, tau)

    @classmethod
    def sparse(cls, tau: float, error_kind: str = "normal", n_train: int = 200,
               n_test: int = 1000, d: int = 20) -> "Scenario":
        base = [3.0, 1.5, 0.0, 0.0, 2.0] + [0.0] * 15
        return cls(n_train, n_test, d, 0.5, tuple(base[:d]), error_kind, tau)


def design_cov(d: int, rho: float) -> np.ndarray:
    idx = np.arange(d)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def gen_design(n: int, d: int, rho: float, rng: np.random.Generator) -> np.ndarray:
    """Covariate rows from N(0, Sigma) with Sigma_jk = rho^|j-k| (via Cholesky)."""
    if not abs(rho) < 1:
        raise ValueError("need |rho| < 1")
    chol = np.linalg.cholesky(design_cov(d, rho))
    return rng.standard_normal((n, d)) @ chol.T


def gen_errors(kind: str, n: int, x_first_column=None,
               rng: np.random.Generator | None = None) -> np.ndarray:
    """Error draws for one scenario; heteroscedastic needs the first covariate."""
    if kind == "normal":
        return rng.standard_normal(n)
    if kind == "student_t3":
        return rng.standard_t(3, size=n)
    if kind == "normal_mixture":
        comp = rng.random(n) < _MIX_W[0]
        return rng.standard_normal(n) * np.where(comp, _MIX_SD[0], _MIX_SD[1])
    if kind == "heteroscedastic":
        if x_first_column is None:
            raise ValueError("heteroscedastic errors need the first covariate column")
        sigma = np.exp(-0.25 + 0.5 * np.asarray(x_first_column))
        return rng.standard_normal(n) * sigma
    raise ValueError(f"unknown error kind {kind!r}")


def make_datasets(scenario: Scenario, rng: np.random.Generator) -> tuple[Dataset, Dataset]:
    """Fresh train and test datasets for one replication."""
    beta0 = np.asarray(scenario.beta0)
    out = []
    for n in (scenario.n_train, scenario.n_test):
        cov = gen_design(n, scenario.d, scenario.rho, rng)
        u = gen_errors(scenario.error_kind, n, cov[:, 0], rng)
        y = cov @ beta0 + u
        out.append(Dataset.with_intercept(y, cov))
    return out[0], out[1]


def _mixture_ppf(tau: float) -> float:
    from scipy.special import ndtr

    lo, hi = -50.0, 50.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        cdf = _MIX_W[0] * ndtr(mid / _MIX_SD[0]) + _MIX_W[1] * ndtr(mid / _MIX_SD[1])
        if cdf < tau:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


_HETERO_TRUTH_MEMO: dict[tuple, np.ndarray] = {}


def true_beta_at_tau(scenario: Scenario) -> np.ndarray:
    """Quantile-consistent truth, intercept first.

    Homoscedastic errors shift the intercept by the error's tau-quantile.
    The heteroscedastic design is not linear in the covariates, so its truth
    is the best linear predictor from a brute-force fit on 10^6 draws.
    """
    beta0 = np.asarray(scenario.beta0)
    tau = scenario.tau
    kind = scenario.error_kind
    if kind == "normal":
        from scipy.special import ndtri

        shift = float(ndtri(tau))
    elif kind == "student_t3":
        shift = float(student_t.ppf(tau, 3))
    elif kind == "normal_mixture":
        shift = _mixture_ppf(tau)
    else:
        key = (scenario.d, scenario.rho, scenario.beta0, tau)
        hit = _HETERO_TRUTH_MEMO.get(key)
        if hit is not None:
            return hit.copy()
        rng = chain_rng(987654321, 0)
        n = 1_000_000
        cov = gen_design(n, scenario.d, scenario.rho, rng)
        u = gen_errors(kind, n, cov[:, 0], rng)
        data = Dataset.with_intercept(cov @ beta0 + u, cov)
        truth = std_qr_fit(data, tau)
        _HETERO_TRUTH_MEMO[key] = truth
        return truth.copy()
    return np.concatenate([[shift], beta0])


def std_qr_fit(data: Dataset, tau: float) -> np.ndarray:
    """Frequentist point fit: minimize the check loss via a tiny-h surrogate.

    Uses the uniform-kernel smoothed objective at h = 1e-4 times the response
    scale, which coincides with the check loss outside a vanishing band, and
    runs backtracking gradient descent to gradient norm 1e-8.
    """
    scale = max(float(np.std(data.y)), 1e-12)
    spec = QuantileSpec(tau, 1e-4 * scale, Kernel.UNIFORM)
    X, y, n = data.X, data.y, data.n

    def value_and_grad(b):
        from .kernels import smoothed_loss, smoothed_score

        e = y - X @ b
        val = float(np.sum(np.asarray(smoothed_loss(spec, e)))) / n
        grad = -(X.T @ np.asarray(smoothed_score(spec, e))) / n
        return val, grad

    init, *_ = np.linalg.lstsq(X, y, rcond=None)
    x, _ = minimize_bb(value_and_grad, init, grad_tol=1e-8, max_iter=20000)
    return x


@dataclass
class MetricsRow:
    """One method's metrics on one replication."""

    method: str
    mse: float
    mae: float
    wmse: float
    test_check_loss: float
    coverage: float = float("nan")
    width: float = float("nan")
    rhat_max: float = float("nan")
    ess_min: float = float("nan")
    divergences: float = float("nan")
    wall_time: float = float("nan")
    selected_h: float = float("nan")


def evaluate_metrics(beta_hat, scenario: Scenario, test_data: Dataset,
                     draws: np.ndarray | None = None, method: str = "",
                     level: float = 0.95) -> MetricsRow:
    """Estimation and prediction metrics against the scenario's truth.

    WMSE weights the full coefficient vector by blockdiag(1, Sigma_X) since
    the intercept column is not part of the AR covariate covariance.
    Coverage and width come from per-coefficient equal-tailed intervals when
    posterior draws are supplied.
    """
    beta_hat = np.asarray(beta_hat, dtype=float)
    truth = true_beta_at_tau(scenario)
    if beta_hat.shape != truth.shape:
        raise ValueError(f"beta_hat shape {beta_hat.shape} != truth {truth.shape}")
    err = beta_hat - truth
    sigma_full = np.zeros((scenario.d + 1, scenario.d + 1))
    sigma_full[0, 0] = 1.0
    sigma_full[1:, 1:] = design_cov(scenario.d, scenario.rho)

    e_test = test_data.y - test_data.X @ beta_hat
    row = MetricsRow(
        method=method,
        mse=float(err @ err),
        mae=float(np.sum(np.abs(err))) / err.size,
        wmse=float(err @ sigma_full @ err),
        test_check_loss=float(np.mean(np.asarray(check_loss(scenario.tau, e_test)))),
    )
    if draws is not None:
        lo = np.empty(err.size)
        hi = np.empty(err.size)
        for j in range(err.size):
            lo[j], hi[j] = credible_interval(draws[:, j], level)
        row.coverage = float(np.mean((truth >= lo) & (truth <= hi)))
        row.width = float(np.mean(hi - lo))
    return row


def _method_seed(seed: int, rep: int, method_index: int) -> int:
    return (seed * 1_000_003 + rep * 1009 + method_index * 101) % 2**63


def _fit_method(method: str, train: Dataset, scenario: Scenario, seed: int,
                chains: int, iters: int, warmup: int):
    """Returns (beta_hat, draws, diag dict)."""
    tau = scenario.tau
    priors = Priors.default(train.d)
    if method == "stdqr":
        t0 = time.perf_counter()
        beta = std_qr_fit(train, tau)
        return beta, None, {"wall_time": time.perf_counter() - t0}
    if method == "ald":
        results = run_ald_baseline(train, tau, priors, n_chains=chains,
                                   n_iters=iters, n_warmup=warmup, seed=seed)
        summary = summarize_chains(results)
    elif method.startswith("bsqr-"):
        kernel = Kernel.parse(method.split("-", 1)[1])
        h0 = silverman_base(pilot_residuals(train))
        h_star, _ = cv_select(train, tau, kernel, BandwidthGrid(h0), seed=seed)
        spec = QuantileSpec(tau, h_star, kernel)
        results = run_block_sampler(train, spec, priors, n_chains=chains,
                                    n_iters=iters, n_warmup=warmup, seed=seed)
        summary = summarize_chains(results, selected_h=h_star)
    else:
        raise ValueError(f"unknown method {method!r}")

    draws = np.hstack([
        np.vstack([r.beta_draws for r in results]),
        np.concatenate([r.theta_draws for r in results])[:, None],
    ])
    beta_hat = draws[:, :-1].mean(axis=0)
    diag = {
        "rhat_max": summary.rhat_max if summary.rhat_max is not None else float("nan"),
        "ess_min": summary.ess_min,
        "divergences": summary.divergence_total / len(results),
        "wall_time": summary.wall_time,
        "selected_h": summary.selected_h if summary.selected_h is not None else float("nan"),
    }
    return beta_hat, draws[:, :-1], diag


@dataclass
class ReplicationSummary:
    """Averaged metrics over M replications, one aggregate per method."""

    scenario: Scenario
    methods: list[str]
    m_requested: int
    seed: int
    rows: dict[str, list[MetricsRow]] = field(default_factory=dict)
    failures: dict[str, int] = field(default_factory=dict)

    def mean_metric(self, method: str, name: str) -> float:
        values = [getattr(r, name) for r in self.rows.get(method, [])]
        values = [v for v in values if not (isinstance(v, float) and math.isnan(v))]
        return float(np.mean(values)) if values else float("nan")

    def aggregate(self) -> list[dict]:
        fields = ("mse", "mae", "wmse", "test_check_loss", "coverage", "width",
                  "rhat_max", "ess_min", "divergences", "wall_time", "selected_h")
        out = []
        for method in self.methods:
            row = {"method": method,
                   "m_ok": len(self.rows.get(method, [])),
                   "failures": self.failures.get(method, 0)}
            row.update({name: self.mean_metric(method, name) for name in fields})
            out.append(row)
        return out


def run_replications(scenario: Scenario, methods, M: int, seed: int = 0,
                     chains: int = 2, iters: int = 2000, warmup: int = 1000
                     ) -> ReplicationSummary:
    """Run M independent replications and average the metrics per method.

    Each replication draws fresh data from its own stream; individual method
    failures are recorded and excluded from the averages.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    methods = list(methods)
    summary = ReplicationSummary(scenario=scenario, methods=methods,
                                 m_requested=M, seed=seed)
    for method in methods:
        summary.rows[method] = []
        summary.failures[method] = 0

    for rep in range(M):
        train, test = make_datasets(scenario, chain_rng(seed, 1_000_000 + rep))
        for mi, method in enumerate(methods):
            try:
                beta_hat, draws, diag = _fit_method(
                    method, train, scenario, _method_seed(seed, rep, mi),
                    chains, iters, warmup,
                )
                row = evaluate_metrics(beta_hat, scenario, test, draws, method=method)
                for key, value in diag.items():
                    setattr(row, key, value)
                summary.rows[method].append(row)
            except (ConvergenceError, RuntimeError, np.linalg.LinAlgError) as exc:
                warnings.warn(f"rep {rep}, method {method} failed: {exc}")
                summary.failures[method] += 1
    return summary


def write_metrics_csv(summary: ReplicationSummary, path) -> None:
    rows = summary.aggregate()
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(v) for k, v in row.items()})


def write_manifest(summary: ReplicationSummary, path, extra: dict | None = None) -> None:
    manifest = {
        "seed": summary.seed,
        "m_requested": summary.m_requested,
        "methods": summary.methods,
        "scenario": {
            "n_train": summary.scenario.n_train,
            "n_test": summary.scenario.n_test,
            "d": summary.scenario.d,
            "rho": summary.scenario.rho,
            "beta0": list(summary.scenario.beta0),
            "error_kind": summary.scenario.error_kind,
            "tau": summary.scenario.tau,
        },
        "versions": _versions(),
    }
    if extra:
        manifest.update(extra)
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2)


def _versions() -> dict:
    import scipy

    return {"bsqr": _pkg_version, "numpy": np.__version__, "scipy": scipy.__version__}


def _fmt(value):
    if isinstance(value, float):
        return f"{value:.17g}"
    return value
