"""Block MCMC for the smoothed quantile model.

One sweep alternates a Hamiltonian Monte Carlo update of the coefficient
vector (leapfrog trajectories on the potential theta*S(beta) - log prior)
with a log-normal-proposal Metropolis-Hastings update of the scale theta,
whose acceptance ratio carries the normalizing constant Z(theta).  A
random-walk sampler on the asymmetric-Laplace likelihood provides the
baseline the smoothed model is compared against.
"""
from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .kernels import QuantileSpec, check_loss, smoothed_loss, smoothed_score
from .model import (
    Dataset,
    NormConstCache,
    Priors,
    hessian_potential_beta,
    log_normalizing_constant,
    loss_sum,
)
from .quadrature import QuadratureError
from .utils import chain_rng, thread_map

__all__ = [
    "HMCConfig",
    "MHThetaConfig",
    "ChainResult",
    "DualAveraging",
    "RobbinsMonroScale",
    "leapfrog",
    "hmc_update",
    "mh_theta_update",
    "mh_theta_log_ratio",
    "warmup_adapt",
    "run_block_sampler",
    "run_ald_baseline",
]

DIVERGENCE_THRESHOLD = 1000.0


@dataclass
class HMCConfig:
    """Leapfrog settings; step size and mass default to curvature-based values."""

    step_size: float | None = None
    leapfrog_steps: int = 32
    mass_diag: np.ndarray | None = None
    target_accept: float = 0.8
    adapt_iters: int | None = None
    path_jitter: float = 0.2

    def __post_init__(self) -> None:
        if self.step_size is not None and not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.leapfrog_steps < 1 or self.leapfrog_steps != int(self.leapfrog_steps):
            raise ValueError("leapfrog_steps must be a positive integer")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must be in (0, 1)")
        if self.adapt_iters is not None and self.adapt_iters < 0:
            raise ValueError("adapt_iters must be >= 0")
        if self.mass_diag is not None:
            m = np.asarray(self.mass_diag, dtype=float)
            if np.any(m <= 0):
                raise ValueError("mass_diag entries must be positive")
            self.mass_diag = m


@dataclass
class MHThetaConfig:
    """Log-normal proposal for theta, adapted toward the acceptance band."""

    proposal_sd: float = 0.5
    adapt: bool = True
    accept_band: tuple[float, float] = (0.2, 0.6)

    def __post_init__(self) -> None:
        if not self.proposal_sd > 0:
            raise ValueError("proposal_sd must be positive")


@dataclass
class ChainResult:
    """Post-warmup draws and bookkeeping for one chain."""

    beta_draws: np.ndarray
    theta_draws: np.ndarray
    accept_rate_beta: float
    accept_rate_theta: float
    divergences: int
    energies: np.ndarray
    seed: int
    chain_index: int = 0
    wall_time: float = 0.0
    step_size: float = float("nan")
    mass_diag: np.ndarray | None = None
    proposal_sd: float = float("nan")
    z_failures: int = 0

    def __post_init__(self) -> None:
        if self.beta_draws.shape[0] != self.theta_draws.shape[0]:
            raise ValueError("beta and theta draw counts differ")
        if np.any(self.theta_draws <= 0):
            raise ValueError("theta draws must stay positive")
        for rate in (self.accept_rate_beta, self.accept_rate_theta):
            if not 0.0 <= rate <= 1.0:
                raise ValueError("acceptance rates must lie in [0, 1]")


def leapfrog(beta, momentum, step_size, n_steps, mass_diag, grad_fn):
    """Run ``n_steps`` leapfrog steps; volume preserving and reversible.

    Returns (beta, momentum, ok); ok is False when a non-finite gradient or
    state is hit, flagging the trajectory as divergent.
    """
    beta = np.array(beta, dtype=float)
    momentum = np.array(momentum, dtype=float)
    mass_diag = np.asarray(mass_diag, dtype=float)
    n_steps = int(n_steps)
    if n_steps == 0:
        return beta, momentum, True
    g = grad_fn(beta)
    if not math.isfinite(float(g.sum())):
        return beta, momentum, False
    for _ in range(n_steps):
        momentum = momentum - 0.5 * step_size * g
        beta = beta + step_size * momentum / mass_diag
        g = grad_fn(beta)
        # non-finite entries poison the sums (inf - inf gives nan)
        if not math.isfinite(float(g.sum()) + float(beta.sum())):
            return beta, momentum, False
        momentum = momentum - 0.5 * step_size * g
    return beta, momentum, True


def _hmc_step(beta, u_val, u_fn, grad_fn, step_size, n_steps, mass_diag, rng):
    """One HMC transition.  Returns (beta, u_val, accepted, delta_h, divergent, energy)."""
    d = beta.shape[0]
    p = rng.standard_normal(d) * np.sqrt(mass_diag)
    t_cur = 0.5 * float(p @ (p / mass_diag))
    energy = u_val + t_cur

    beta_new, p_new, ok = leapfrog(beta, p, step_size, n_steps, mass_diag, grad_fn)
    if not ok:
        return beta, u_val, False, math.inf, True, energy
    u_new = u_fn(beta_new)
    t_new = 0.5 * float(p_new @ (p_new / mass_diag))
    delta_h = (u_new + t_new) - energy
    if not math.isfinite(delta_h) or delta_h > DIVERGENCE_THRESHOLD:
        return beta, u_val, False, delta_h, True, energy
    if math.log(rng.uniform()) < -delta_h:
        return beta_new, u_new, True, delta_h, False, energy
    return beta, u_val, False, delta_h, False, energy


def hmc_update(beta, data: Dataset, theta: float, spec: QuantileSpec, priors: Priors,
               config: HMCConfig, rng: np.random.Generator):
    """Single HMC update of beta at fixed theta: (new beta, accepted, delta_h)."""
    beta = np.asarray(beta, dtype=float)
    mass = config.mass_diag if config.mass_diag is not None else np.ones(data.d)
    eps = config.step_size if config.step_size is not None else 0.1

    def u_fn(b):
        diff = b - priors.beta_mean
        return theta * loss_sum(data, b, spec) + 0.5 * float(diff @ diff) / priors.beta_var

    def grad_fn(b):
        score = np.asarray(smoothed_score(spec, data.y - data.X @ b))
        return -theta * (data.X.T @ score) + (b - priors.beta_mean) / priors.beta_var

    new_beta, _, accepted, delta_h, _, _ = _hmc_step(
        beta, u_fn(beta), u_fn, grad_fn, eps, config.leapfrog_steps, mass, rng
    )
    return new_beta, accepted, delta_h


def mh_theta_log_ratio(theta_c: float, theta_p: float, s_value: float, n: int,
                       priors: Priors, log_z_c: float, log_z_p: float) -> float:
    """Log acceptance ratio of the log-normal-proposal theta update.

    Combines the potential difference with the Hastings correction
    theta_p/theta_c, which turns the (a-1) prior exponent into a.
    """
    return (
        -(theta_p - theta_c) * s_value
        - n * (log_z_p - log_z_c)
        + priors.theta_shape * (math.log(theta_p) - math.log(theta_c))
        - priors.theta_rate * (theta_p - theta_c)
    )


def _mh_theta_step(theta_c, log_z_c, s_value, n, spec, priors, sd, rng, cache):
    """Returns (theta, log_z, accepted, z_failed)."""
    theta_p = theta_c * math.exp(sd * rng.standard_normal())
    try:
        log_z_p = log_normalizing_constant(theta_p, spec, cache=cache)
    except QuadratureError:
        return theta_c, log_z_c, False, True
    log_r = mh_theta_log_ratio(theta_c, theta_p, s_value, n, priors, log_z_c, log_z_p)
    if math.log(rng.uniform()) < log_r:
        return theta_p, log_z_p, True, False
    return theta_c, log_z_c, False, False


def mh_theta_update(theta_c: float, data: Dataset, beta_c, spec: QuantileSpec,
                    priors: Priors, config: MHThetaConfig, rng: np.random.Generator,
                    cache: NormConstCache | None = None):
    """Single Metropolis-Hastings update of theta: (new theta, accepted)."""
    if not theta_c > 0:
        raise ValueError("theta must be positive")
    s_value = loss_sum(data, beta_c, spec)
    log_z_c = log_normalizing_constant(theta_c, spec, cache=cache)
    theta, _, accepted, failed = _mh_theta_step(
        theta_c, log_z_c, s_value, data.n, spec, priors, config.proposal_sd, rng, cache
    )
    if failed:
        warnings.warn("Z evaluation failed for proposed theta; proposal rejected")
    return theta, accepted


class DualAveraging:
    """Dual averaging of log step size toward a target acceptance probability."""

    def __init__(self, initial_step: float, target: float = 0.8,
                 gamma: float = 0.05, t0: float = 10.0, kappa: float = 0.75):
        self.target = target
        self.gamma = gamma
        self.t0 = t0
        self.kappa = kappa
        self.restart(initial_step)

    def restart(self, step: float) -> None:
        self.mu = math.log(10.0 * step)
        self.log_step = math.log(step)
        self.log_step_bar = math.log(step)
        self.h_bar = 0.0
        self.t = 0

    def update(self, accept_prob: float) -> float:
        """Feed one acceptance probability; returns the step for the next iteration."""
        self.t += 1
        eta = 1.0 / (self.t + self.t0)
        self.h_bar = (1.0 - eta) * self.h_bar + eta * (self.target - accept_prob)
        self.log_step = self.mu - math.sqrt(self.t) / self.gamma * self.h_bar
        w = self.t ** (-self.kappa)
        self.log_step_bar = w * self.log_step + (1.0 - w) * self.log_step_bar
        return math.exp(self.log_step)

    @property
    def adapted(self) -> float:
        """Averaged step size to freeze after warmup."""
        return math.exp(self.log_step_bar)


class RobbinsMonroScale:
    """Stochastic approximation keeping an MH proposal sd in an acceptance band."""

    def __init__(self, sd: float, band: tuple[float, float] = (0.2, 0.6), rate: float = 0.66):
        self.log_sd = math.log(sd)
        self.center = 0.5 * (band[0] + band[1])
        self.rate = rate
        self.t = 0

    def update(self, accepted: bool) -> float:
        self.t += 1
        step = self.t ** (-self.rate)
        self.log_sd += step * ((1.0 if accepted else 0.0) - self.center)
        return math.exp(self.log_sd)

    @property
    def sd(self) -> float:
        return math.exp(self.log_sd)


def warmup_adapt(accept_probs, warmup_draws, theta_accepts,
                 initial_step: float = 0.1, initial_sd: float = 0.5,
                 target_accept: float = 0.8):
    """Replay warmup statistics through the adapters.

    Returns (step_size, mass_diag, proposal_sd): the dual-averaged step size,
    a diagonal mass from the variances of the second half of the warmup
    draws, and the Robbins-Monro-adjusted theta proposal sd.
    """
    da = DualAveraging(initial_step, target=target_accept)
    for a in accept_probs:
        da.update(a)
    draws = np.atleast_2d(np.asarray(warmup_draws, dtype=float))
    second_half = draws[draws.shape[0] // 2:]
    var = second_half.var(axis=0)
    mass = 1.0 / np.clip(var, 1e-12, None)
    rm = RobbinsMonroScale(initial_sd)
    for acc in theta_accepts:
        rm.update(bool(acc))
    return da.adapted, mass, rm.sd


def _init_state(data: Dataset, spec: QuantileSpec):
    beta0, *_ = np.linalg.lstsq(data.X, data.y, rcond=None)
    s0 = loss_sum(data, beta0, spec)
    theta0 = data.n / max(s0, 1e-12)
    return beta0, theta0, s0


def _init_kinetics(data, beta0, theta0, spec, priors, config):
    if config.mass_diag is not None:
        mass = np.asarray(config.mass_diag, dtype=float).copy()
    else:
        hess = hessian_potential_beta(data, beta0, theta0, spec, priors)
        mass = np.clip(np.diag(hess), 1.0 / priors.beta_var, None)
    if config.step_size is not None:
        eps = config.step_size
    else:
        # curvature is ~1 per coordinate in the mass-conditioned space
        eps = 0.25 * data.d ** (-0.25)
    return eps, mass


def _run_bsqr_chain(data, spec, priors, hmc_config, mh_config,
                    n_iters, n_warmup, seed, chain, cache):
    t_start = time.perf_counter()
    rng = chain_rng(seed, chain)
    d = data.d
    X, y = data.X, data.y
    jitter = hmc_config.path_jitter
    steps = hmc_config.leapfrog_steps
    adapt_until = n_warmup if hmc_config.adapt_iters is None else min(hmc_config.adapt_iters, n_warmup)
    mass_refresh_at = int(0.9 * adapt_until)

    beta, theta, s_val = _init_state(data, spec)
    eps, mass = _init_kinetics(data, beta, theta, spec, priors, hmc_config)
    log_z = log_normalizing_constant(theta, spec, cache=cache)

    da = DualAveraging(eps, target=hmc_config.target_accept)
    rm = RobbinsMonroScale(mh_config.proposal_sd, band=mh_config.accept_band)
    mh_sd = mh_config.proposal_sd

    def prior_quad(b):
        diff = b - priors.beta_mean
        return 0.5 * float(diff @ diff) / priors.beta_var

    def grad_fn(b):
        score = np.asarray(smoothed_score(spec, y - X @ b))
        return -theta * (X.T @ score) + (b - priors.beta_mean) / priors.beta_var

    def u_fn(b):
        return theta * float(np.sum(smoothed_loss(spec, y - X @ b))) + prior_quad(b)

    u_val = theta * s_val + prior_quad(beta)

    n_keep = n_iters - n_warmup
    beta_draws = np.empty((n_keep, d))
    theta_draws = np.empty(n_keep)
    energies = np.empty(n_keep)
    warmup_betas = np.empty((n_warmup, d)) if n_warmup else None

    acc_beta = acc_theta = 0
    divergences = 0
    z_failures = 0
    warmup_ok = 0

    for it in range(n_iters):
        if jitter > 0.0:
            j_eff = max(1, int(round(steps * (1.0 + jitter * (2.0 * rng.random() - 1.0)))))
        else:
            j_eff = steps
        beta_new, u_new, accepted, delta_h, divergent, energy = _hmc_step(
            beta, u_val, u_fn, grad_fn, eps, j_eff, mass, rng
        )
        if accepted:
            beta, u_val = beta_new, u_new
            s_val = (u_val - prior_quad(beta)) / theta
        alpha = 0.0 if divergent else math.exp(min(0.0, -delta_h))

        theta_new, log_z, theta_accepted, z_failed = _mh_theta_step(
            theta, log_z, s_val, data.n, spec, priors, mh_sd, rng, cache
        )
        if theta_accepted:
            theta = theta_new
            u_val = theta * s_val + prior_quad(beta)
        z_failures += z_failed

        if it < n_warmup:
            warmup_betas[it] = beta
            warmup_ok += 0 if divergent else 1
            if it < adapt_until:
                eps = da.update(alpha)
                if mh_config.adapt:
                    mh_sd = rm.update(theta_accepted)
                if it + 1 == mass_refresh_at and mass_refresh_at > adapt_until // 2:
                    window = warmup_betas[adapt_until // 2: mass_refresh_at]
                    var = window.var(axis=0)
                    if np.all(var > 0):
                        mass = 1.0 / var
                    eps = max(da.adapted, 1e-8)
                    da.restart(eps)
            if it + 1 == adapt_until:
                eps = da.adapted
            if it + 1 == n_warmup and warmup_ok == 0:
                raise RuntimeError(
                    f"chain {chain}: every warmup iteration diverged; "
                    f"last step size {eps:.3e}"
                )
        else:
            k = it - n_warmup
            beta_draws[k] = beta
            theta_draws[k] = theta
            energies[k] = math.inf if divergent else energy
            acc_beta += accepted
            acc_theta += theta_accepted
            divergences += divergent

    return ChainResult(
        beta_draws=beta_draws,
        theta_draws=theta_draws,
        accept_rate_beta=acc_beta / max(n_keep, 1),
        accept_rate_theta=acc_theta / max(n_keep, 1),
        divergences=divergences,
        energies=energies,
        seed=seed,
        chain_index=chain,
        wall_time=time.perf_counter() - t_start,
        step_size=eps,
        mass_diag=mass,
        proposal_sd=mh_sd,
        z_failures=z_failures,
    )


def run_block_sampler(data: Dataset, spec: QuantileSpec, priors: Priors | None = None,
                      hmc_config: HMCConfig | None = None,
                      mh_config: MHThetaConfig | None = None,
                      n_chains: int = 2, n_iters: int = 4000, n_warmup: int = 2000,
                      seed: int = 0, cache: NormConstCache | None = None) -> list[ChainResult]:
    """Run the block sampler; one ChainResult per chain.

    Warmup draws are discarded from the stored results; the adapted step
    size, mass diagonal, and proposal sd are retained on each result.
    Chains derive independent streams from (seed, chain_index) and may run
    concurrently (the Z memo table is shared and thread-safe).
    """
    if not n_iters > n_warmup >= 0:
        raise ValueError(f"need n_iters > n_warmup >= 0, got {n_iters}, {n_warmup}")
    if n_chains < 1:
        raise ValueError("need at least one chain")
    priors = priors if priors is not None else Priors.default(data.d)
    hmc_config = hmc_config if hmc_config is not None else HMCConfig()
    mh_config = mh_config if mh_config is not None else MHThetaConfig()
    cache = cache if cache is not None else NormConstCache()

    return thread_map(
        lambda c: _run_bsqr_chain(
            data, spec, priors, hmc_config, mh_config, n_iters, n_warmup, seed, c, cache
        ),
        range(n_chains),
    )


def _ald_log_post(data, tau, priors, z):
    beta, g = z[:-1], z[-1]
    theta = math.exp(g)
    e = data.y - data.X @ beta
    rho = float(np.sum(np.asarray(check_loss(tau, e))))
    diff = beta - priors.beta_mean
    return (
        data.n * (math.log(tau * (1.0 - tau)) + g)
        - theta * rho
        - 0.5 * float(diff @ diff) / priors.beta_var
        + priors.theta_shape * g  # Gamma prior plus the log-scale Jacobian
        - priors.theta_rate * theta
    )


def _run_ald_chain(data, tau, priors, n_iters, n_warmup, seed, chain):
    t_start = time.perf_counter()
    rng = chain_rng(seed, chain)
    d = data.d

    beta0, *_ = np.linalg.lstsq(data.X, data.y, rcond=None)
    rho0 = float(np.sum(np.asarray(check_loss(tau, data.y - data.X @ beta0))))
    z = np.concatenate([beta0, [math.log(data.n / max(rho0, 1e-12))]])
    lp = _ald_log_post(data, tau, priors, z)

    resid_scale = max(float(np.std(data.y - data.X @ beta0)), 1e-8)
    scales = np.full(d + 1, 0.1)
    scales[:d] = resid_scale / math.sqrt(data.n)
    lam = RobbinsMonroScale(2.38 / math.sqrt(d + 1), band=(0.18, 0.3))

    n_keep = n_iters - n_warmup
    beta_draws = np.empty((n_keep, d))
    theta_draws = np.empty(n_keep)
    energies = np.empty(n_keep)
    warmup_z = np.empty((n_warmup, d + 1)) if n_warmup else None
    accepts = 0

    for it in range(n_iters):
        prop = z + lam.sd * scales * rng.standard_normal(d + 1)
        lp_prop = _ald_log_post(data, tau, priors, prop)
        accepted = math.log(rng.uniform()) < lp_prop - lp
        if accepted:
            z, lp = prop, lp_prop

        if it < n_warmup:
            warmup_z[it] = z
            lam.update(accepted)
            # refresh per-coordinate scales twice from the accumulated draws
            if it + 1 in (n_warmup // 2, int(0.9 * n_warmup)):
                window = warmup_z[(it + 1) // 2: it + 1]
                sd = window.std(axis=0)
                if np.all(sd > 0):
                    scales = sd
        else:
            k = it - n_warmup
            beta_draws[k] = z[:d]
            theta_draws[k] = math.exp(z[-1])
            energies[k] = -lp
            accepts += accepted

    return ChainResult(
        beta_draws=beta_draws,
        theta_draws=theta_draws,
        accept_rate_beta=accepts / max(n_keep, 1),
        accept_rate_theta=accepts / max(n_keep, 1),
        divergences=0,
        energies=energies,
        seed=seed,
        chain_index=chain,
        wall_time=time.perf_counter() - t_start,
        proposal_sd=lam.sd,
    )


def run_ald_baseline(data: Dataset, tau: float, priors: Priors | None = None,
                     n_chains: int = 2, n_iters: int = 4000, n_warmup: int = 2000,
                     seed: int = 0) -> list[ChainResult]:
    """Random-walk Metropolis on (beta, log theta) under the ALD likelihood.

    The unsmoothed baseline: same priors and the exact ALD normalizer, with
    per-coordinate proposal scales adapted during warmup.
    """
    if not n_iters > n_warmup >= 0:
        raise ValueError(f"need n_iters > n_warmup >= 0, got {n_iters}, {n_warmup}")
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must be in (0, 1), got {tau}")
    priors = priors if priors is not None else Priors.default(data.d)
    return thread_map(
        lambda c: _run_ald_chain(data, tau, priors, n_iters, n_warmup, seed, c),
        range(n_chains),
    )
