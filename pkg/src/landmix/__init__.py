"""Bayesian longitudinal mixed models for country-level landings panels."""

__version__ = "0.1.0"

from .data import DEFAULT_SPAN, load_landings, simulate_dataset, write_landings
from .diagnostics import (
    ConvergenceEntry,
    ParamSummary,
    compute_convergence,
    ess,
    pool_chains,
    render_summary_table,
    split_rhat,
    summarize,
)
from .errors import (
    ConfigError,
    DataFormatError,
    DegenerateCovarianceError,
    DegenerateDataError,
    LandmixError,
    SectorMismatchError,
)
from .model import (
    Cov2,
    Dataset,
    JointEffects,
    JointParams,
    ModelState,
    Observation,
    PriorSpec,
    Sector,
    TotalEffects,
    TotalParams,
    build_covariance,
    linear_predictor,
    log_likelihood,
    log_posterior_unnorm,
    log_prior,
    log_random_effects_density,
)
from .oracle import (
    GridSpec,
    SBCConfig,
    conjugate_posterior_beta0,
    grid_log_posterior,
    sbc_run,
)
from .sampler import (
    ChainConfig,
    ChainDraws,
    chain_rng,
    initial_state,
    run_chain,
    run_chains,
    update_cov_params_joint,
    update_fixed_intercepts,
    update_obs_variance,
    update_random_effects_joint,
    update_random_effects_total,
    update_re_sd_total,
)
