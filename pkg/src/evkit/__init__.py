"""Bayesian evidence estimation: closed forms, Laplace, thermal, nested and variational methods."""

from .core import (
    EvidenceEstimate,
    LogOddsResult,
    ModelSpec,
    RngHandle,
    log_mean_exp,
    log_sum_exp,
    metropolis_step,
)
from .laplace import laplace_log_evidence
from .models import (
    ConjugateGaussianModel,
    GaussianUniformModel,
    build_model,
    conjugate_log_evidence,
    gaussian_uniform_log_evidence,
    make_mixture_problem,
    occam_decomposition,
)
from .nested import nested_sampling, posterior_weights, repeated_runs
from .thermal import (
    ais_log_evidence,
    ais_ti_contrast,
    importance_log_evidence_ratio,
    make_schedule,
    thermodynamic_integration,
)
from .varbayes import NormalGammaModel, vb_lower_bound

__version__ = "0.1.0"
