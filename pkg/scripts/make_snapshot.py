"""Regenerate the bundled price snapshots under src/bsqr/data/.

Builds a synthetic daily asset/market pair (2017-2025 business days) whose
log-return sample moments are pinned to the reference descriptive targets:
2011 returns each, exact sample mean and standard deviation, and skewness
and kurtosis matched by monotone moment-matching transforms.  A shared
volatility bump around March 2020 gives the rolling pipeline a crisis
segment.  Deterministic: rerunning reproduces the same CSVs bit for bit.

Usage: python3 scripts/make_snapshot.py
"""
from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

OUT_DIR = Path(__file__).resolve().parent.parent / "src" / "bsqr" / "data"

N_RETURNS = 2011

# target sample moments of the daily log-returns
ASSET = dict(mean=0.0006, sd=0.0178, skew=-0.0240, kurt=14.3309, p0=86.27, name="jpm")
MARKET = dict(mean=0.0005, sd=0.0118, skew=-0.8614, kurt=16.2964, p0=2251.57, name="gspc")
BETA = 1.15  # market loading of the asset

SEED = 20170103


def business_days(n_prices: int) -> np.ndarray:
    days = np.arange(np.datetime64("2017-01-03"), np.datetime64("2025-01-01"),
                     dtype="datetime64[D]")
    weekdays = days[np.is_busday(days)]
    extra = weekdays.size - n_prices
    if extra < 0:
        raise SystemExit(f"calendar too short: {weekdays.size} weekdays < {n_prices}")
    # drop evenly spaced pseudo-holidays to hit the target count exactly
    drop = np.linspace(10, weekdays.size - 10, extra).astype(int)
    keep = np.ones(weekdays.size, dtype=bool)
    keep[drop] = False
    return weekdays[keep][:n_prices]


def vol_profile(dates: np.ndarray) -> np.ndarray:
    """Deterministic volatility path: calm baseline plus a 2020 crisis bump."""
    t = (dates - np.datetime64("2020-03-16")).astype(float)
    bump = 1.0 + 6.0 * np.exp(-0.5 * (t / 22.0) ** 2)
    t2 = (dates - np.datetime64("2022-05-10")).astype(float)
    bump += 1.2 * np.exp(-0.5 * (t2 / 45.0) ** 2)
    p = np.sqrt(bump)
    return p / np.sqrt(np.mean(p**2))


def scale_mixture(n: int, p_tail: float, ratio: float, rng) -> np.ndarray:
    """Symmetric two-component normal scale mixture, unit variance."""
    wide = rng.random(n) < p_tail
    sd = np.where(wide, np.sqrt(ratio), 1.0)
    z = rng.standard_normal(n) * sd
    return z / np.sqrt((1 - p_tail) + p_tail * ratio)


def standardize(z: np.ndarray) -> np.ndarray:
    return (z - z.mean()) / z.std()


def sample_skew(z: np.ndarray) -> float:
    z = standardize(z)
    return float(np.mean(z**3))


def sample_kurt(z: np.ndarray) -> float:
    z = standardize(z)
    return float(np.mean(z**4))


def match_moments(z: np.ndarray, skew_t: float, kurt_t: float) -> np.ndarray:
    """Monotone two-knob transform pinning sample skewness and kurtosis.

    Alternates a tail-power map (kurtosis) with a quadratic bend (skewness);
    couplings are weak, so a few sweeps converge to near machine precision.
    """
    z = standardize(z)
    for _ in range(40):
        def kurt_gap(d):
            w = np.sign(z) * np.abs(z) ** (1.0 + d)
            return sample_kurt(w) - kurt_t

        d = brentq(kurt_gap, -0.4, 0.8, xtol=1e-14)
        z = standardize(np.sign(z) * np.abs(z) ** (1.0 + d))

        def skew_gap(g):
            return sample_skew(z + g * (z * z - 1.0)) - skew_t

        g = brentq(skew_gap, -0.6, 0.6, xtol=1e-15)
        z = standardize(z + g * (z * z - 1.0))
        if abs(sample_skew(z) - skew_t) < 1e-10 and abs(sample_kurt(z) - kurt_t) < 1e-8:
            break
    return z


def ratio_for_kurt(kurt_target: float, p_tail: float) -> float:
    """Scale-mixture variance ratio giving the requested base kurtosis."""
    def gap(r):
        return 3.0 * ((1 - p_tail) + p_tail * r * r) / ((1 - p_tail) + p_tail * r) ** 2 - kurt_target
    return brentq(gap, 1.0 + 1e-9, 1e6)


def build_returns() -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    dates = business_days(N_RETURNS + 1)
    ret_dates = dates[1:]
    profile = vol_profile(ret_dates)
    q4 = float(np.mean(profile**4) / np.mean(profile**2) ** 2)

    rng = np.random.Generator(np.random.Philox(key=[SEED, 0]))

    # market: inner kurtosis deflated by the profile's amplification factor
    k_market_inner = MARKET["kurt"] / q4
    g0 = scale_mixture(N_RETURNS, 0.05, ratio_for_kurt(k_market_inner, 0.05), rng)
    zg = match_moments(profile * g0, MARKET["skew"], MARKET["kurt"])
    market = MARKET["mean"] + MARKET["sd"] * zg

    # asset: beta exposure to the market plus idiosyncratic noise sharing the
    # same volatility profile; the knobs pin the final moments afterwards
    c1 = BETA * MARKET["sd"]
    s_eps = float(np.sqrt(ASSET["sd"] ** 2 - c1**2))
    c = c1**2 + s_eps**2
    k_inner_target = ASSET["kurt"] / q4
    k_g_inner = sample_kurt(g0)
    k_eps_inner = (k_inner_target * c**2 - c1**4 * k_g_inner - 6 * c1**2 * s_eps**2) / s_eps**4
    k_eps_inner = max(k_eps_inner, 3.1)
    e0 = scale_mixture(N_RETURNS, 0.04, ratio_for_kurt(k_eps_inner, 0.04), rng)
    j0 = c1 * standardize(profile * g0) + s_eps * standardize(profile * e0)
    zj = match_moments(j0, ASSET["skew"], ASSET["kurt"])
    asset = ASSET["mean"] + ASSET["sd"] * zj

    return ret_dates, asset, market


def write_prices(path: Path, dates: np.ndarray, returns: np.ndarray, p0: float) -> None:
    prices = p0 * np.exp(np.concatenate([[0.0], np.cumsum(returns)]))
    all_dates = np.concatenate([[dates[0] - np.timedelta64(1, "D")], dates])
    # the synthetic day before the first return must be a weekday too
    while not np.is_busday(all_dates[0]):
        all_dates[0] -= np.timedelta64(1, "D")
    with open(path, "w") as fh:
        fh.write("date,adj_close\n")
        for d, p in zip(all_dates, prices):
            fh.write(f"{d},{p:.6f}\n")


def write_toy(path: Path) -> None:
    rng = np.random.Generator(np.random.Philox(key=[SEED, 99]))
    x = np.round(rng.uniform(-2, 2, 10), 4)
    y = np.round(1.5 + 0.8 * x + 0.3 * rng.standard_normal(10), 4)
    with open(path, "w") as fh:
        fh.write("y,x1\n")
        for yi, xi in zip(y, x):
            fh.write(f"{yi},{xi}\n")


def describe(name: str, r: np.ndarray) -> None:
    print(f"{name}: n={r.size} mean={r.mean():.6f} sd={r.std(ddof=1):.6f} "
          f"skew={sample_skew(r):.4f} kurt={sample_kurt(r):.4f}")


def main() -> int:
    OUT_DIR.mkdir(parents=True, exist_ok=True)
    dates, asset, market = build_returns()
    write_prices(OUT_DIR / "jpm.csv", dates, asset, ASSET["p0"])
    write_prices(OUT_DIR / "gspc.csv", dates, market, MARKET["p0"])
    write_toy(OUT_DIR / "toy.csv")

    # verify from the files, through the same rounding the package will see
    for name, targets in (("jpm", ASSET), ("gspc", MARKET)):
        raw = np.loadtxt(OUT_DIR / f"{name}.csv", delimiter=",", skiprows=1,
                         usecols=1)
        r = np.diff(np.log(raw))
        describe(name, r)
        for key, got in (("mean", r.mean()), ("sd", r.std(ddof=1)),
                         ("skew", sample_skew(r)), ("kurt", sample_kurt(r))):
            rel = abs(got - targets[key]) / abs(targets[key])
            if rel > 0.02:
                print(f"  WARNING {name} {key}: {got:.6g} vs {targets[key]:.6g} "
                      f"({rel:.2%} off)")
                return 1
    corr = np.corrcoef(asset, market)[0, 1]
    print(f"asset/market correlation: {corr:.3f} (beta ~ {corr * ASSET['sd'] / MARKET['sd']:.3f})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
