"""Coupling experiments for interacting particle diffusions.

The package simulates an exchangeable system of diffusing particles
whose drift couples them through the empirical mean of an interaction
kernel, couples every particle to an independent twin driven by the same
noise but steered by a large reference ensemble standing in for the
mean-field limit, and measures the gap in a weighted quadratic metric
designed so the gap stays small uniformly in time.  Around that core it
provides grid certification of the structural conditions the uniform
bound needs, ensemble-size sweeps with rate fits, and self-checks of the
supporting combinatorial and ODE lemmas.

Layers, bottom up:

- models: drift/diffusion triples and weighted metric definitions
- engine: counter-based noise, the coupled stepper, divergence guards
- meanfield: reference-ensemble and exact-mean surrogates, error budget
- analysis: sweeps, rate fits, uniformity tests, bound and lemma checks
- verifier: assumption certificates on refinable grids
- cli: configured runs with manifests and reproducible outputs
"""

from .errors import (AnalysisError, ChaospropError, ConfigurationError,
                     DivergenceError, NumericError)
from .models import (MetricSpec, NeuralFieldParams, ParticleModel,
                     build_linear_model, build_neural_model, constant_kernel,
                     cosine_kernel, flat_quadratic_metric, h_metric,
                     rate_exponent, sigmoid_weighted_metric, zero_kernel)
from .engine import NoiseStreams, RunResult, SimConfig, new_ensemble, run, step
from .meanfield import (EmpiricalMeasure, EnsembleSurrogate, ExactMeanSurrogate,
                        SurrogateBudget, bar_b1, make_surrogate,
                        surrogate_error_budget)
from .analysis import (BoundInputs, HEstimate, MomentRow, RateFit, SweepResult,
                       SweepRow, UniformityReport, classical_gronwall_bound,
                       compute_uniform_bound, estimate_h, fit_rate,
                       joint_marginal_test, log_classical_gronwall_bound,
                       moment_sum_check, ode_comparison, rademacher_exact_fourth,
                       rademacher_moment_brute, run_sweep, uniformity_test,
                       ut_random_suite)
from .verifier import (AssumptionCertificate, CheckRecord, Grid2D,
                       build_certificate, check_convexity_positive,
                       check_f_power, check_tail_domination, compute_margin,
                       estimate_moment_bounds, extract_a0, extract_c0,
                       extract_c1_bounds, extract_c2, resolve_tail_threshold)

__version__ = "0.1.0"

__all__ = [
    "AnalysisError", "AssumptionCertificate", "BoundInputs", "ChaospropError",
    "CheckRecord", "ConfigurationError", "DivergenceError", "EmpiricalMeasure",
    "EnsembleSurrogate", "ExactMeanSurrogate", "Grid2D", "HEstimate",
    "MetricSpec", "MomentRow", "NeuralFieldParams", "NoiseStreams",
    "NumericError", "ParticleModel", "RateFit", "RunResult", "SimConfig",
    "SurrogateBudget", "SweepResult", "SweepRow", "UniformityReport",
    "bar_b1", "build_certificate", "build_linear_model", "build_neural_model",
    "check_convexity_positive", "check_f_power", "check_tail_domination",
    "classical_gronwall_bound", "compute_margin", "compute_uniform_bound",
    "constant_kernel", "cosine_kernel", "estimate_h", "estimate_moment_bounds",
    "extract_a0", "extract_c0", "extract_c1_bounds", "extract_c2",
    "fit_rate", "flat_quadratic_metric", "h_metric", "joint_marginal_test",
    "log_classical_gronwall_bound", "make_surrogate", "moment_sum_check",
    "new_ensemble", "ode_comparison", "rademacher_exact_fourth",
    "rademacher_moment_brute", "rate_exponent", "resolve_tail_threshold",
    "run", "run_sweep", "sigmoid_weighted_metric", "step",
    "surrogate_error_budget", "uniformity_test", "ut_random_suite",
    "zero_kernel",
]
