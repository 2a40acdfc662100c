"""Convergence diagnostics and posterior summaries.

Split potential scale reduction, autocorrelation-based effective sample
size with the initial-positive-sequence truncation, equal-tailed credible
intervals, and the per-fit summary record.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

__all__ = ["split_rhat", "ess", "credible_interval", "FitSummary", "summarize_chains"]


def _autocovariance(x: np.ndarray) -> np.ndarray:
    """Biased autocovariance of a 1-d array via FFT."""
    x = np.asarray(x, dtype=float)
    n = x.size
    centered = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    fx = np.fft.rfft(centered, size)
    acov = np.fft.irfft(fx * np.conj(fx), size)[:n].real
    return acov / n


def split_rhat(chains) -> float:
    """Split-chain potential scale reduction factor.

    Each chain is halved (dropping the middle draw of odd-length chains) and
    the classic between/within variance ratio is computed on the halves.
    Returns NaN for constant chains (zero within-chain variance).
    """
    chains = [np.asarray(c, dtype=float) for c in chains]
    if len(chains) < 2:
        raise ValueError("split_rhat needs at least 2 chains")
    if any(c.ndim != 1 or c.size < 4 for c in chains):
        raise ValueError("each chain must be 1-d with at least 4 draws")

    half = min(c.size for c in chains) // 2
    halves = []
    for c in chains:
        halves.append(c[:half])
        halves.append(c[c.size - half:])
    draws = np.vstack(halves)

    within = draws.var(axis=1, ddof=1).mean()
    if within == 0.0:
        return float("nan")
    between = half * draws.mean(axis=1).var(ddof=1)
    var_hat = (half - 1) / half * within + between / half
    return float(np.sqrt(var_hat / within))


def ess(chains) -> float:
    """Effective sample size from pooled autocorrelations.

    Pair sums of autocorrelations are truncated at the first negative pair
    and forced monotone non-increasing; the result is capped at the total
    draw count.  Zero-variance input returns 0 with a warning.
    """
    chains = [np.asarray(c, dtype=float) for c in chains]
    if not chains:
        raise ValueError("ess needs at least one chain")
    if any(c.ndim != 1 or c.size < 8 for c in chains):
        raise ValueError("each chain must be 1-d with at least 8 draws")

    n_total = sum(c.size for c in chains)
    n_min = min(c.size for c in chains)
    acov = np.mean([_autocovariance(c)[:n_min] for c in chains], axis=0)
    if acov[0] <= 0.0:
        warnings.warn("zero-variance draws; effective sample size is 0")
        return 0.0
    rho = acov / acov[0]

    n_pairs = n_min // 2
    pair_sums = rho[: 2 * n_pairs].reshape(n_pairs, 2).sum(axis=1)
    positive = np.nonzero(pair_sums <= 0.0)[0]
    cutoff = positive[0] if positive.size else n_pairs
    if cutoff == 0:
        return float(n_total)
    kept = np.minimum.accumulate(pair_sums[:cutoff])
    tau = max(2.0 * float(kept.sum()) - 1.0, np.finfo(float).eps)
    return float(min(n_total / tau, n_total))


def credible_interval(draws, level: float) -> tuple[float, float]:
    """Equal-tailed interval from empirical quantiles (linear interpolation)."""
    draws = np.asarray(draws, dtype=float)
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must be in (0, 1), got {level}")
    if draws.size < 2:
        raise ValueError("need at least 2 draws")
    alpha = 0.5 * (1.0 - level)
    lo, hi = np.quantile(draws, [alpha, 1.0 - alpha])
    return float(lo), float(hi)


@dataclass
class FitSummary:
    """Posterior summary of one fit."""

    names: list[str]
    mean: np.ndarray
    sd: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    rhat_max: float | None
    ess_min: float
    divergence_total: int
    wall_time: float
    selected_h: float | None = None
    accept_rate_beta: float = float("nan")
    accept_rate_theta: float = float("nan")

    def __post_init__(self) -> None:
        if np.any(self.lo > self.hi):
            raise ValueError("interval lower bounds exceed upper bounds")
        if self.ess_min < 0:
            raise ValueError("ess_min must be non-negative")

    def to_dict(self) -> dict:
        return {
            "parameters": [
                {
                    "name": name,
                    "mean": float(m),
                    "sd": float(s),
                    "q2.5": float(lo),
                    "q97.5": float(hi),
                }
                for name, m, s, lo, hi in zip(self.names, self.mean, self.sd, self.lo, self.hi)
            ],
            "rhat_max": None if self.rhat_max is None else float(self.rhat_max),
            "ess_min": float(self.ess_min),
            "divergence_total": int(self.divergence_total),
            "wall_time": float(self.wall_time),
            "selected_h": None if self.selected_h is None else float(self.selected_h),
            "accept_rate_beta": float(self.accept_rate_beta),
            "accept_rate_theta": float(self.accept_rate_theta),
        }


def summarize_chains(results, names=None, level: float = 0.95,
                     selected_h: float | None = None) -> FitSummary:
    """Build a FitSummary from a list of ChainResult.

    R-hat is reported only when at least two chains are present; ESS pools
    all chains.  theta is summarized alongside the coefficients.
    """
    if not results:
        raise ValueError("no chains to summarize")
    d = results[0].beta_draws.shape[1]
    if names is None:
        names = [f"beta_{j}" for j in range(d)]
    names = list(names) + ["theta"]

    per_param = [[r.beta_draws[:, j] for r in results] for j in range(d)]
    per_param.append([r.theta_draws for r in results])

    means, sds, los, his, rhats, esss = [], [], [], [], [], []
    for chains in per_param:
        pooled = np.concatenate(chains)
        means.append(pooled.mean())
        sds.append(pooled.std(ddof=1) if pooled.size > 1 else 0.0)
        lo, hi = credible_interval(pooled, level)
        los.append(lo)
        his.append(hi)
        esss.append(ess(chains))
        if len(chains) >= 2:
            rhats.append(split_rhat(chains))

    rhat_max = float(np.nanmax(rhats)) if rhats else None
    return FitSummary(
        names=names,
        mean=np.array(means),
        sd=np.array(sds),
        lo=np.array(los),
        hi=np.array(his),
        rhat_max=rhat_max,
        ess_min=float(np.min(esss)),
        divergence_total=int(sum(r.divergences for r in results)),
        wall_time=float(sum(r.wall_time for r in results)),
        selected_h=selected_h,
        accept_rate_beta=float(np.mean([r.accept_rate_beta for r in results])),
        accept_rate_theta=float(np.mean([r.accept_rate_theta for r in results])),
    )
