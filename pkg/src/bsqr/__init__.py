"""Bayesian smoothed quantile regression.

A likelihood built from a kernel-smoothed check loss, sampled by a block
scheme (HMC over the coefficients, Metropolis-Hastings over the scale), with
bandwidth selection, MCMC diagnostics, a simulation harness, and a
rolling-window financial pipeline.
"""

__version__ = "0.1.0"

from .kernels import (
    Kernel,
    QuantileSpec,
    check_loss,
    kernel_cdf,
    kernel_pdf,
    loss_curvature,
    loss_minimum,
    smoothed_loss,
    smoothed_score,
)
from .model import (
    Dataset,
    ModelState,
    NormConstCache,
    Priors,
    ald_log_likelihood,
    grad_potential_beta,
    hessian_potential_beta,
    log_likelihood,
    log_normalizing_constant,
    loss_sum,
    normalizing_constant,
    potential_beta,
    potential_theta,
    propriety_report,
    residuals,
)
from .samplers import (
    ChainResult,
    HMCConfig,
    MHThetaConfig,
    hmc_update,
    leapfrog,
    mh_theta_update,
    run_ald_baseline,
    run_block_sampler,
    warmup_adapt,
)
from .diagnostics import FitSummary, credible_interval, ess, split_rhat, summarize_chains
from .bandwidth import BandwidthGrid, cv_select, pilot_residuals, silverman_base
from .experiments import (
    Scenario,
    evaluate_metrics,
    gen_design,
    gen_errors,
    run_replications,
    std_qr_fit,
    true_beta_at_tau,
)

__all__ = [name for name in dir() if not name.startswith("_")]
