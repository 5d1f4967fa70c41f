"""Exactly computable Bayesian procedures for sparse models: spike-and-slab
posteriors, empirical-Bayes weight selection, l-value multiple testing with
sharp risk boundaries, tempered conjugate series posteriors, and mean-field
variational Bayes for sparse regression, plus a seeded Monte Carlo
experiment runner."""

__version__ = "0.1.0"

from .distributions import (
    ConvolvedMarginal,
    NoiseModel,
    SlabSpec,
    l1_distance_numeric,
    marginal_g,
    oracle_threshold,
    renyi_gaussian,
    renyi_numeric,
)
from .empirical_bayes import (
    MarginalLikelihood,
    MmleResult,
    beta_binomial_dim_prior,
    exp_decrease_check,
    mmle,
    mmle_alpha,
)
from .sas_posterior import (
    CoordinatePosterior,
    SasPrior,
    SlabComponent,
    SubsetSelectionPrior,
    coordinate_moments,
    l_value,
    median_threshold,
    posterior_median,
    posterior_weight,
    sample_coordinate,
    subset_selection_l_values,
)
from .multiple_testing import (
    BhSpec,
    LossReport,
    LValueSpec,
    MmleWeight,
    NeverRejectSpec,
    OracleSpec,
    RiskEstimate,
    SignalConfig,
    bayes_fdr_mc,
    bayes_lower_bound_mrho,
    bh_procedure,
    block_l_values,
    block_prior_sample,
    compute_l_values,
    kappa_tau,
    lambda_boundary,
    losses,
    lvalue_procedure,
    oracle_procedure,
    q_value,
    rho_admissible_max,
    risk_mc,
    sample_sas_theta,
)
from .conjugate_sequence import (
    ConjugatePosterior,
    FunctionalSpec,
    SeriesPrior,
    coverage_mc,
    functional_posterior,
    posterior_moments,
    risk_terms,
    shift_rescale_interval,
    truncation_tail_bias,
)
from .vb_regression import (
    EnumerationResult,
    MeanFieldState,
    RegressionInstance,
    RegressionPrior,
    cavi_fit,
    default_init,
    elbo,
    enumeration_oracle,
    generate_design,
    kl_upper_bound,
    sandwich_condition_holds,
    simulate_instance,
)
