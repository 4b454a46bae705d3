"""Dynamic Bayesian latent-class regression for repeated cross-sectional
survey data: weighted mixture likelihood, smoothed dynamic class-membership
intercepts, gradient-based posterior sampling, posterior prediction on dense
time grids, and cross-validated selection of the number of profiles.
"""

__version__ = "0.1.0"

from .data import (
    FoldAssignment,
    SurveyDataset,
    encode_covariates,
    load_csv,
    normalize_weights,
    read_dataset,
    simulate,
    split_folds,
    write_dataset,
)
from .gp import KernelParams, gp_logpdf, gp_predict, gram, kernel
from .model import (
    ModelConfig,
    Parameters,
    UnconstrainedVector,
    from_unconstrained,
    log_posterior_and_grad,
    log_prior,
    loglik_subject,
    mixture_weights,
    to_unconstrained,
    weighted_loglik,
)
from .sampler import (
    PosteriorDraws,
    SamplerConfig,
    ess,
    fit,
    label_switch_diagnostic,
    run,
    split_rhat,
)
from .inference import (
    ProfileTable,
    TrajectorySet,
    class_membership,
    covariate_effects,
    population_proportions,
    profile_summaries,
)
from .crossval import AccuracyTable, accuracy, predict_items, run_cv

__all__ = [
    "__version__",
    "AccuracyTable",
    "FoldAssignment",
    "KernelParams",
    "ModelConfig",
    "Parameters",
    "PosteriorDraws",
    "ProfileTable",
    "SamplerConfig",
    "SurveyDataset",
    "TrajectorySet",
    "UnconstrainedVector",
    "accuracy",
    "class_membership",
    "covariate_effects",
    "encode_covariates",
    "ess",
    "fit",
    "from_unconstrained",
    "gp_logpdf",
    "gp_predict",
    "gram",
    "kernel",
    "label_switch_diagnostic",
    "load_csv",
    "log_posterior_and_grad",
    "log_prior",
    "loglik_subject",
    "mixture_weights",
    "normalize_weights",
    "population_proportions",
    "predict_items",
    "profile_summaries",
    "read_dataset",
    "run",
    "run_cv",
    "simulate",
    "split_folds",
    "split_rhat",
    "to_unconstrained",
    "weighted_loglik",
    "write_dataset",
]
