"""Command-line surface and I/O.

Subcommands: ``fit`` (one dataset, one quantile), ``simulate`` (replication
study), ``cv`` (bandwidth selection), ``rolling`` (windowed financial
estimation with one-step-ahead forecast losses), ``sweep`` (bandwidth
sensitivity on one window), ``diagnose`` (re-read draws and summarize).
Outputs are plain CSV/JSON written under --out; exit codes: 0 success,
1 user error, 2 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import datetime as dt
import json
import math
import subprocess
import sys
import time
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .bandwidth import BandwidthGrid, cv_select, pilot_residuals, silverman_base
from .diagnostics import credible_interval, ess, split_rhat, summarize_chains
from .experiments import Scenario, run_replications, write_manifest, write_metrics_csv
from .kernels import Kernel, QuantileSpec, check_loss
from .model import Dataset, Priors, propriety_report
from .optimize import ConvergenceError
from .quadrature import QuadratureError
from .samplers import run_ald_baseline, run_block_sampler
from .utils import chain_rng, thread_map

__all__ = [
    "ReturnSeries",
    "RollingConfig",
    "AlignedPair",
    "WindowRecord",
    "load_prices",
    "align_series",
    "rolling_fit",
    "sensitivity_sweep",
    "cli_main",
    "main",
    "bundled_path",
]

DATA_DIR = Path(__file__).parent / "data"


class UserError(Exception):
    """Invalid input or flags; maps to exit code 1."""


def bundled_path(name: str) -> Path:
    """Path of a bundled CSV snapshot (jpm, gspc, toy)."""
    path = DATA_DIR / f"{name}.csv"
    if not path.exists():
        raise UserError(f"no bundled dataset named {name!r}")
    return path


@dataclass(frozen=True)
class ReturnSeries:
    """Aligned calendar dates and log-returns."""

    dates: np.ndarray
    log_returns: np.ndarray

    def __post_init__(self) -> None:
        if self.dates.shape != self.log_returns.shape:
            raise ValueError("dates and returns lengths differ")
        if self.dates.size and not np.all(self.dates[1:] > self.dates[:-1]):
            raise ValueError("dates must be strictly increasing")
        if not np.all(np.isfinite(self.log_returns)):
            raise ValueError("returns must be finite")


def load_prices(path) -> ReturnSeries:
    """Read a date,adj_close CSV into log-returns.

    Rows are sorted by date and de-duplicated (first occurrence wins); the
    first price is consumed by the differencing r_t = ln(P_t / P_{t-1}).
    """
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"date", "adj_close"} <= set(reader.fieldnames):
            raise UserError(f"{path}: expected a CSV with 'date' and 'adj_close' columns")
        for i, row in enumerate(reader, start=2):
            raw_date, raw_price = row["date"], row["adj_close"]
            try:
                date = dt.date.fromisoformat(raw_date.strip())
            except ValueError:
                raise UserError(f"{path}: unparseable date {raw_date!r} at row {i}") from None
            try:
                price = float(raw_price)
            except ValueError:
                raise UserError(f"{path}: unparseable price {raw_price!r} at row {i}") from None
            if not price > 0:
                raise UserError(f"{path}: non-positive price {price} at row {i} ({date})")
            rows.append((np.datetime64(date, "D"), price, i))

    rows.sort(key=lambda r: (r[0], r[2]))
    dates, prices = [], []
    for date, price, _ in rows:
        if dates and date == dates[-1]:
            continue
        dates.append(date)
        prices.append(price)
    if len(prices) < 2:
        raise UserError(f"{path}: need at least 2 price rows, got {len(prices)}")
    prices = np.asarray(prices)
    returns = np.diff(np.log(prices))
    return ReturnSeries(dates=np.asarray(dates[1:]), log_returns=returns)


@dataclass(frozen=True)
class AlignedPair:
    """Inner join of two return series: response y regressed on one regressor."""

    dates: np.ndarray
    dataset: Dataset
    dropped_a: int
    dropped_b: int


def align_series(a: ReturnSeries, b: ReturnSeries) -> AlignedPair:
    """Pair two series on common dates; y comes from ``a``, the regressor from ``b``."""
    common, ia, ib = np.intersect1d(a.dates, b.dates, return_indices=True)
    if common.size == 0:
        raise UserError("the two series share no dates")
    dataset = Dataset.with_intercept(a.log_returns[ia], b.log_returns[ib])
    return AlignedPair(
        dates=common,
        dataset=dataset,
        dropped_a=a.dates.size - common.size,
        dropped_b=b.dates.size - common.size,
    )


@dataclass(frozen=True)
class RollingConfig:
    """Windowed estimation settings: one year stepped monthly by default."""

    window: int = 252
    step: int = 21
    taus: tuple[float, ...] = (0.05, 0.95)
    kernel: Kernel = Kernel.UNIFORM
    h_policy: str = "cv"
    h_fixed: float | None = None

    def __post_init__(self) -> None:
        if not self.window > self.step >= 1:
            raise ValueError(f"need window > step >= 1, got {self.window}, {self.step}")
        if not self.taus or any(not 0.0 < t < 1.0 for t in self.taus):
            raise ValueError("every tau must be in (0, 1)")
        if self.h_policy not in ("cv", "fixed"):
            raise ValueError("h_policy must be 'cv' or 'fixed'")
        if self.h_policy == "fixed" and not (self.h_fixed and self.h_fixed > 0):
            raise ValueError("fixed h policy needs a positive h_fixed")


@dataclass
class WindowRecord:
    """One fitted window at one quantile for one method."""

    window: int
    start_date: str
    end_date: str
    tau: float
    method: str
    h: float
    alpha_mean: float
    alpha_lo: float
    alpha_hi: float
    beta_mean: float
    beta_lo: float
    beta_hi: float
    theta_mean: float
    ess_min: float
    rhat_max: float
    divergences: int
    wall_time: float
    forecast_date: str
    forecast_loss: float


def _fit_window(sub: Dataset, tau: float, config: RollingConfig, chains, iters, warmup,
                seed: int, method: str):
    """Returns (summary, h) for one window fit."""
    if method == "ald":
        results = run_ald_baseline(sub, tau, n_chains=chains, n_iters=iters,
                                   n_warmup=warmup, seed=seed)
        return summarize_chains(results), float("nan")
    if config.h_policy == "fixed":
        h = float(config.h_fixed)
    else:
        h0 = silverman_base(pilot_residuals(sub))
        h, _ = cv_select(sub, tau, config.kernel, BandwidthGrid(h0), seed=seed)
    spec = QuantileSpec(tau, h, config.kernel)
    results = run_block_sampler(sub, spec, n_chains=chains, n_iters=iters,
                                n_warmup=warmup, seed=seed)
    return summarize_chains(results, selected_h=h), h


def rolling_fit(pair: AlignedPair, config: RollingConfig, chains: int = 2,
                iters: int = 1000, warmup: int = 500, seed: int = 0,
                include_baseline: bool = False) -> list[WindowRecord]:
    """Fit every full window; window k covers indices [k*step, k*step + window).

    Each window records the posterior mean and 95% interval of the intercept
    and the slope, the selected bandwidth, sampler diagnostics, and the
    one-step-ahead forecast check loss at the posterior means.
    """
    n = pair.dataset.n
    if n < config.window + 1:
        raise UserError(f"need at least window+1 = {config.window + 1} aligned points, have {n}")
    n_windows = (n - config.window) // config.step + 1
    methods = ["bsqr-" + config.kernel.value] + (["ald"] if include_baseline else [])

    def one_window(k: int) -> list[WindowRecord]:
        start = k * config.step
        stop = start + config.window
        y_w = pair.dataset.y[start:stop]
        x_w = pair.dataset.X[start:stop, 1]
        if float(np.var(x_w)) == 0.0:
            warnings.warn(f"window {k}: zero market variance, skipped")
            return []
        sub = Dataset.with_intercept(y_w, x_w)
        records = []
        for ti, tau in enumerate(config.taus):
            for mi, method in enumerate(methods):
                t0 = time.perf_counter()
                summary, h = _fit_window(
                    sub, tau, config, chains, iters, warmup,
                    seed=(seed * 1_000_003 + k * 64 + ti * 8 + mi) % 2**63,
                    method=method,
                )
                alpha_mean, beta_mean = summary.mean[0], summary.mean[1]
                if stop < n:
                    y_next = pair.dataset.y[stop]
                    x_next = pair.dataset.X[stop, 1]
                    floss = float(np.asarray(
                        check_loss(tau, y_next - alpha_mean - beta_mean * x_next)))
                    fdate = str(pair.dates[stop])
                else:
                    floss, fdate = float("nan"), ""
                records.append(WindowRecord(
                    window=k,
                    start_date=str(pair.dates[start]),
                    end_date=str(pair.dates[stop - 1]),
                    tau=tau,
                    method=method,
                    h=h,
                    alpha_mean=float(alpha_mean),
                    alpha_lo=float(summary.lo[0]),
                    alpha_hi=float(summary.hi[0]),
                    beta_mean=float(beta_mean),
                    beta_lo=float(summary.lo[1]),
                    beta_hi=float(summary.hi[1]),
                    theta_mean=float(summary.mean[-1]),
                    ess_min=float(summary.ess_min),
                    rhat_max=float("nan") if summary.rhat_max is None else float(summary.rhat_max),
                    divergences=int(summary.divergence_total),
                    wall_time=time.perf_counter() - t0,
                    forecast_date=fdate,
                    forecast_loss=floss,
                ))
        return records

    nested = thread_map(one_window, range(n_windows))
    return [rec for batch in nested for rec in batch]


def sensitivity_sweep(pair: AlignedPair, window_end_date, taus,
                      multipliers=(0.5, 1.0, 2.0), window: int = 252,
                      kernel: Kernel = Kernel.UNIFORM, chains: int = 2,
                      iters: int = 1000, warmup: int = 500, seed: int = 0) -> list[dict]:
    """Re-fit one fixed window at scaled bandwidths around the CV choice.

    The window is the ``window`` observations ending at the last date not
    after ``window_end_date``; multiplier 1.0 is the cross-validated h.
    """
    end_date = np.datetime64(window_end_date, "D")
    eligible = np.nonzero(pair.dates <= end_date)[0]
    if eligible.size == 0:
        raise UserError(f"no observations on or before {window_end_date}")
    end = int(eligible[-1])
    if end + 1 < window:
        raise UserError(f"only {end + 1} observations before {window_end_date}, need {window}")
    sub = Dataset.with_intercept(
        pair.dataset.y[end + 1 - window: end + 1],
        pair.dataset.X[end + 1 - window: end + 1, 1],
    )

    rows = []
    for ti, tau in enumerate(taus):
        h0 = silverman_base(pilot_residuals(sub))
        h_cv, _ = cv_select(sub, tau, kernel, BandwidthGrid(h0), seed=seed)
        for mi, mult in enumerate(multipliers):
            spec = QuantileSpec(tau, mult * h_cv, kernel)
            results = run_block_sampler(
                sub, spec, n_chains=chains, n_iters=iters, n_warmup=warmup,
                seed=(seed * 1_000_003 + ti * 16 + mi) % 2**63,
            )
            summary = summarize_chains(results, selected_h=mult * h_cv)
            rows.append({
                "tau": tau,
                "multiplier": mult,
                "h": mult * h_cv,
                "h_cv": h_cv,
                "alpha_mean": float(summary.mean[0]),
                "alpha_lo": float(summary.lo[0]),
                "alpha_hi": float(summary.hi[0]),
                "beta_mean": float(summary.mean[1]),
                "beta_lo": float(summary.lo[1]),
                "beta_hi": float(summary.hi[1]),
                "ess_min": float(summary.ess_min),
                "divergences": int(summary.divergence_total),
                "end_date": str(pair.dates[end]),
            })
    return rows


# ---------------------------------------------------------------------------
# command-line plumbing


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def _write_csv(path, fieldnames, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(fieldnames)
        for row in rows:
            writer.writerow([_fmt(row[name]) for name in fieldnames])


def version_string() -> str:
    try:
        described = subprocess.run(
            ["git", "describe", "--tags", "--always", "--dirty"],
            cwd=Path(__file__).parent, capture_output=True, text=True, timeout=5,
        )
        if described.returncode == 0 and described.stdout.strip():
            return described.stdout.strip()
    except OSError:
        pass
    return f"v{__version__}"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UserError(f"{message}\n{self.format_usage()}")


_CONFIG_TYPES = {
    "seed": int, "kernel": str, "tau": float, "h": float,
    "chains": int, "iters": int, "warmup": int, "out": str,
}
_DEFAULTS = {"seed": 0, "kernel": "uniform", "tau": 0.5, "h": None,
             "chains": 2, "iters": 2000, "warmup": 1000, "out": "."}


def _global_flags() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--seed", type=int, default=None)
    parent.add_argument("--config", type=str, default=None,
                        help="flat key=value file; flags override it")
    parent.add_argument("--out", type=str, default=None, help="output directory")
    parent.add_argument("--kernel", type=str, default=None,
                        choices=[k.value for k in Kernel])
    parent.add_argument("--tau", type=float, default=None)
    parent.add_argument("--h", type=float, default=None)
    parent.add_argument("--chains", type=int, default=None)
    parent.add_argument("--iters", type=int, default=None)
    parent.add_argument("--warmup", type=int, default=None)
    return parent


def _read_config_file(path) -> dict:
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UserError(f"{path}:{lineno}: expected key=value, got {raw.strip()!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in _CONFIG_TYPES:
                raise UserError(f"{path}:{lineno}: unknown config key {key!r}")
            try:
                values[key] = _CONFIG_TYPES[key](value)
            except ValueError:
                raise UserError(f"{path}:{lineno}: bad value for {key}: {value!r}") from None
    return values


def _merge_config(args: argparse.Namespace) -> argparse.Namespace:
    file_values = _read_config_file(args.config) if args.config else {}
    for key, default in _DEFAULTS.items():
        if getattr(args, key, None) is None:
            setattr(args, key, file_values.get(key, default))
    return args


def _config_echo(args: argparse.Namespace) -> dict:
    return {key: getattr(args, key) for key in _DEFAULTS}


def _validate_tau(tau: float) -> float:
    if not 0.0 < tau < 1.0:
        raise UserError(f"tau must be in the open interval (0, 1), got {tau}")
    return tau


def _load_design_csv(path) -> Dataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "y":
            raise UserError(f"{path}: expected header starting with 'y,x1,...'")
        body = [[float(cell) for cell in row] for row in reader if row]
    if not body:
        raise UserError(f"{path}: no data rows")
    arr = np.asarray(body)
    covs = arr[:, 1:] if arr.shape[1] > 1 else None
    return Dataset.with_intercept(arr[:, 0], covs)


def _write_draws_csv(path, results, names) -> None:
    fieldnames = ["chain", "draw"] + list(names)
    rows = []
    for r in results:
        for i in range(r.beta_draws.shape[0]):
            row = {"chain": r.chain_index, "draw": i}
            for j, name in enumerate(names[:-1]):
                row[name] = r.beta_draws[i, j]
            row[names[-1]] = r.theta_draws[i]
            rows.append(row)
    _write_csv(path, fieldnames, rows)


def _cmd_fit(args) -> int:
    tau = _validate_tau(args.tau)
    kernel = Kernel.parse(args.kernel)
    data = _load_design_csv(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    cv_losses = None
    if args.h is not None:
        h = args.h
        if not h > 0:
            raise UserError(f"h must be positive, got {h}")
    else:
        h0 = silverman_base(pilot_residuals(data))
        grid = BandwidthGrid(h0)
        h, cv_losses = cv_select(data, tau, kernel, grid, seed=args.seed)
        _write_csv(out / "cv.csv", ["h", "mean_check_loss"],
                   [{"h": hc, "mean_check_loss": loss}
                    for hc, loss in zip(grid.candidates, cv_losses)])

    spec = QuantileSpec(tau, h, kernel)
    results = run_block_sampler(data, spec, n_chains=args.chains,
                                n_iters=args.iters, n_warmup=args.warmup,
                                seed=args.seed)
    names = [f"beta_{j}" for j in range(data.d)] + ["theta"]
    summary = summarize_chains(results, names=names[:-1], selected_h=h)
    report = propriety_report(data, spec, Priors.default(data.d))

    _write_draws_csv(out / "draws.csv", results, names)
    payload = {
        "command": "fit",
        "seed": args.seed,
        "config": _config_echo(args),
        "version": version_string(),
        "data": {"n": data.n, "d": data.d, "path": str(args.data)},
        "selected_h": h,
        "fit": summary.to_dict(),
        "propriety": report.to_dict(),
    }
    with open(out / "summary.json", "w") as fh:
        json.dump(payload, fh, indent=2)
    print(f"fit: n={data.n} d={data.d} tau={tau} kernel={kernel.value} h={h:.6g} "
          f"ess_min={summary.ess_min:.1f} divergences={summary.divergence_total}")
    return 0


def _cmd_simulate(args) -> int:
    tau = _validate_tau(args.tau)
    factory = Scenario.dense if args.scenario == "dense" else Scenario.sparse
    scenario = factory(tau, error_kind=args.error)
    if args.full:
        m, iters, warmup = 200, 4000, 2000
    else:
        m, iters, warmup = args.m, args.iters, args.warmup
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    summary = run_replications(scenario, methods, M=m, seed=args.seed,
                               chains=args.chains, iters=iters, warmup=warmup)
    write_metrics_csv(summary, out / "metrics.csv")
    write_manifest(summary, out / "manifest.json",
                   extra={"version": version_string(), "config": _config_echo(args)})
    for row in summary.aggregate():
        print(f"{row['method']}: test_check_loss={row['test_check_loss']:.6g} "
              f"wmse={row['wmse']:.6g} m_ok={row['m_ok']}")
    return 0


def _cmd_cv(args) -> int:
    tau = _validate_tau(args.tau)
    kernel = Kernel.parse(args.kernel)
    data = _load_design_csv(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    h0 = silverman_base(pilot_residuals(data))
    grid = BandwidthGrid(h0)
    h_star, losses = cv_select(data, tau, kernel, grid, seed=args.seed)
    _write_csv(out / "cv.csv", ["h", "mean_check_loss"],
               [{"h": h, "mean_check_loss": loss}
                for h, loss in zip(grid.candidates, losses)])
    print(f"cv: base_h={h0:.6g} selected h={h_star:.6g}")
    return 0


def _parse_taus(raw: str) -> tuple[float, ...]:
    try:
        taus = tuple(float(part) for part in raw.split(",") if part.strip())
    except ValueError:
        raise UserError(f"bad tau list {raw!r}") from None
    if not taus:
        raise UserError("empty tau list")
    for tau in taus:
        _validate_tau(tau)
    return taus


def _cmd_rolling(args) -> int:
    asset = load_prices(args.asset if args.asset else bundled_path("jpm"))
    market = load_prices(args.market if args.market else bundled_path("gspc"))
    pair = align_series(asset, market)
    config = RollingConfig(
        window=args.window,
        step=args.step,
        taus=_parse_taus(args.taus),
        kernel=Kernel.parse(args.kernel),
        h_policy="fixed" if args.h is not None else "cv",
        h_fixed=args.h,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records = rolling_fit(pair, config, chains=args.chains, iters=args.iters,
                          warmup=args.warmup, seed=args.seed,
                          include_baseline=args.baseline)
    fieldnames = list(WindowRecord.__dataclass_fields__)
    _write_csv(out / "windows.csv", fieldnames,
               [rec.__dict__ for rec in records])
    for tau in config.taus:
        for method in sorted({r.method for r in records}):
            losses = [r.forecast_loss for r in records
                      if r.method == method and r.tau == tau and not math.isnan(r.forecast_loss)]
            if losses:
                print(f"tau={tau} {method}: mean forecast check loss "
                      f"{float(np.mean(losses)):.8f} over {len(losses)} windows")
    print(f"rolling: {len(records)} records "
          f"({pair.dataset.n} aligned observations, dropped {pair.dropped_a}+{pair.dropped_b})")
    return 0


def _cmd_sweep(args) -> int:
    asset = load_prices(args.asset if args.asset else bundled_path("jpm"))
    market = load_prices(args.market if args.market else bundled_path("gspc"))
    pair = align_series(asset, market)
    try:
        multipliers = tuple(float(m) for m in args.multipliers.split(",") if m.strip())
    except ValueError:
        raise UserError(f"bad multiplier list {args.multipliers!r}") from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = sensitivity_sweep(
        pair, args.end_date, _parse_taus(args.taus), multipliers=multipliers,
        window=args.window, kernel=Kernel.parse(args.kernel),
        chains=args.chains, iters=args.iters, warmup=args.warmup, seed=args.seed,
    )
    _write_csv(out / "sweep.csv", list(rows[0].keys()), rows)
    for row in rows:
        print(f"tau={row['tau']} h={row['h']:.6g} (x{row['multiplier']}): "
              f"beta mean {row['beta_mean']:.4f} [{row['beta_lo']:.4f}, {row['beta_hi']:.4f}]")
    return 0


def _cmd_diagnose(args) -> int:
    with open(args.draws, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "chain" not in reader.fieldnames:
            raise UserError(f"{args.draws}: expected a draws.csv with a 'chain' column")
        params = [name for name in reader.fieldnames if name not in ("chain", "draw")]
        by_chain: dict[str, dict[str, list[float]]] = {}
        for row in reader:
            store = by_chain.setdefault(row["chain"], {p: [] for p in params})
            for p in params:
                store[p].append(float(row[p]))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = {}
    for p in params:
        chains = [np.asarray(store[p]) for store in by_chain.values()]
        pooled = np.concatenate(chains)
        lo, hi = credible_interval(pooled, 0.95)
        report[p] = {
            "mean": float(pooled.mean()),
            "sd": float(pooled.std(ddof=1)),
            "q2.5": lo,
            "q97.5": hi,
            "ess": ess(chains),
            "rhat": split_rhat(chains) if len(chains) >= 2 else None,
        }
        rhat_txt = f"{report[p]['rhat']:.4f}" if report[p]["rhat"] is not None else "n/a"
        print(f"{p}: mean={report[p]['mean']:.6g} sd={report[p]['sd']:.6g} "
              f"ess={report[p]['ess']:.1f} rhat={rhat_txt}")
    with open(out / "diagnostics.json", "w") as fh:
        json.dump({"version": version_string(), "draws": str(args.draws),
                   "parameters": report}, fh, indent=2)
    return 0


def _build_parser() -> _Parser:
    parent = _global_flags()
    parser = _Parser(prog="bsqr", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", parents=[parent], help="fit one dataset at one quantile")
    p_fit.add_argument("--data", required=True, help="CSV with header y,x1,...,xd")
    p_fit.set_defaults(func=_cmd_fit)

    p_sim = sub.add_parser("simulate", parents=[parent], help="replication study")
    p_sim.add_argument("--scenario", choices=("dense", "sparse"), default="dense")
    p_sim.add_argument("--error", choices=("normal", "student_t3", "normal_mixture",
                                           "heteroscedastic"), default="normal")
    p_sim.add_argument("--m", type=int, default=20, help="number of replications")
    p_sim.add_argument("--methods", default="bsqr-uniform,ald,stdqr")
    p_sim.add_argument("--full", action="store_true",
                       help="full-scale settings: M=200, 4000 iterations")
    p_sim.set_defaults(func=_cmd_simulate)

    p_cv = sub.add_parser("cv", parents=[parent], help="bandwidth cross-validation")
    p_cv.add_argument("--data", required=True)
    p_cv.set_defaults(func=_cmd_cv)

    p_roll = sub.add_parser("rolling", parents=[parent], help="rolling-window estimation")
    p_roll.add_argument("--asset", default=None, help="asset price CSV (default: bundled JPM)")
    p_roll.add_argument("--market", default=None, help="market price CSV (default: bundled GSPC)")
    p_roll.add_argument("--window", type=int, default=252)
    p_roll.add_argument("--step", type=int, default=21)
    p_roll.add_argument("--taus", default="0.05,0.95")
    p_roll.add_argument("--baseline", action="store_true",
                        help="also fit the unsmoothed ALD baseline per window")
    p_roll.set_defaults(func=_cmd_rolling)

    p_sweep = sub.add_parser("sweep", parents=[parent], help="bandwidth sensitivity on one window")
    p_sweep.add_argument("--asset", default=None)
    p_sweep.add_argument("--market", default=None)
    p_sweep.add_argument("--end-date", required=True, help="window end date (ISO)")
    p_sweep.add_argument("--taus", default="0.05")
    p_sweep.add_argument("--multipliers", default="0.5,1.0,2.0")
    p_sweep.add_argument("--window", type=int, default=252)
    p_sweep.set_defaults(func=_cmd_sweep)

    p_diag = sub.add_parser("diagnose", parents=[parent], help="summarize a draws.csv")
    p_diag.add_argument("--draws", required=True)
    p_diag.set_defaults(func=_cmd_diagnose)
    return parser


def cli_main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        args = _merge_config(args)
        if args.iters <= args.warmup:
            raise UserError(f"--iters ({args.iters}) must exceed --warmup ({args.warmup})")
        return args.func(args)
    except UserError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (QuadratureError, ConvergenceError, FloatingPointError,
            np.linalg.LinAlgError, RuntimeError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
