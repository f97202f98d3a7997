"""Geometry-aware MCMC kernels: manifold Langevin and Hamiltonian samplers,
extended-space samplers for noisy metrics, and quasi-Newton preconditioning."""

from manifold_mcmc.diagnostics import Trace, energy_stats, ess, ks_statistic_1d, moments
from manifold_mcmc.geometry import MetricTensor, cholesky, log_det, sample_gaussian_cov, spd_solve
from manifold_mcmc.samplers import KERNELS, ChainState, SamplerConfig, StepOutcome, run_chain
from manifold_mcmc.targets import (
    LogisticRegressionData,
    TargetModel,
    make_gaussian,
    make_logistic,
    make_quartic,
    synthetic_logistic_data,
    wrap_noisy_metric,
)

__version__ = "0.1.0"

__all__ = [
    "KERNELS",
    "ChainState",
    "LogisticRegressionData",
    "MetricTensor",
    "SamplerConfig",
    "StepOutcome",
    "TargetModel",
    "Trace",
    "cholesky",
    "energy_stats",
    "ess",
    "ks_statistic_1d",
    "log_det",
    "make_gaussian",
    "make_logistic",
    "make_quartic",
    "moments",
    "run_chain",
    "sample_gaussian_cov",
    "spd_solve",
    "synthetic_logistic_data",
    "wrap_noisy_metric",
]
