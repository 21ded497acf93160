"""Predictive densities for sparse Poisson count vectors under spike-and-slab priors."""

from .core import (
    BinomialSampling,
    ConstantsReport,
    DomainError,
    GammaSampling,
    GeneralSlab,
    IntegrabilityError,
    MCEstimate,
    PowerSlab,
    SamplingRatios,
    SparsitySpace,
    SpikeSlabPrior,
    constant_c,
    constant_k,
    constants,
    expected_constant_under_g,
    mcar_constants,
    optimal_scale,
)
from .prediction_sets import (
    JointPredictionSet,
    L1BallSet,
    calibrate,
    calibrate_l1_ball,
    contains,
)
from .predictive import (
    PoissonPlugin,
    PredictiveDensity,
    SlabIntegralTable,
    fit,
    posterior_mean,
    posterior_mean_general,
    slab_integral,
    spike_weight,
    tail_robustness_diagnostic,
)
from .risk import (
    TruncationPolicy,
    adaptive_risk_gap,
    coord_estimation_risk,
    coord_risk_rho,
    estimation_risk,
    kl_loss,
    lower_bound_block_prior,
    risk_exact,
    risk_report,
    risk_via_lemma1,
    sup_estimation_risk,
    sup_risk,
)
from .simulation import MethodSpec, ScenarioSpec, compute_metrics, generate_trial, run_table
from .sparsity import (
    estimate_by_method,
    estimate_sparsity,
    estimate_sparsity_per_period,
    estimate_sparsity_two_cluster,
)

__version__ = "0.1.0"
