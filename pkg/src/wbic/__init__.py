"""Bayes free energy and RLCT estimation for singular models via WBIC."""

__version__ = "0.1.0"

from .criteria import (
    CriterionReport,
    WaicResult,
    aic,
    baseline_reports,
    bic,
    fit_map_or_mle,
    select_model,
    waic,
    wbic,
    wbic_beta,
)
from .errors import *  # noqa: F401,F403
from .free_energy import (
    CurvePoint,
    FreeEnergyEstimate,
    OptimalBeta,
    TemperatureSchedule,
    expected_nll_curve,
    optimal_beta,
    stepping_stone,
)
from .harness import ExperimentPlan, ExperimentReport, parse_report, render_report, run_experiment
from .mcmc import (
    Chain,
    ChainConfig,
    TemperedTarget,
    batch_means_mcse,
    effective_sample_size,
    posterior_expectation,
    run_chain,
    weight_ess,
)
from .models import (
    ConjugateNormalModel,
    Dataset,
    FixedDensityModel,
    FunctionModel,
    Model,
    NormalTruth,
    ReducedRankModel,
    RrrTruth,
    empirical_entropy,
    empirical_log_loss,
    generate_normal_dataset,
    generate_rrr_dataset,
    make_conjugate_normal_model,
    make_product_mean_model,
    make_reduced_rank_model,
    make_square_mean_model,
    theoretical_rlct_rrr,
)
from .quadrature import GridSpec, GridValue, default_grid, grid_expected_nll, grid_log_partition
from .rlct import RlctEstimate, rlct_regression, rlct_reweighted, rlct_two_chain
