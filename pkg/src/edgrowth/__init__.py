"""Truncated exchange-driven growth: solver, moment bounds and gelation analysis."""
from .analysis import (
    BoundReport,
    ConvergenceReport,
    GelationEstimate,
    blowup_lower_bound,
    conservation_report,
    convergence_study,
    divergence_oracle,
    estimate_gelation_time,
    instantaneous_blowup_time_bound,
    instantaneous_gelation_probe,
    jensen_lower_bound,
    moment_upper_bound_constants,
    threshold_crossing_time,
    verify_blowup_bound,
    verify_upper_bound,
)
from .dynamics import RateOperator, divergence_form, export_rates, import_rates, rhs
from .integrator import IntegratorConfig, Trajectory, integrate, step
from .kernel import (
    Kernel,
    KernelError,
    KernelSpec,
    classify_regime,
    gelation_lower_bound,
    kernel_eval,
    kernel_from_table,
    make_kernel,
    separable_terms,
)
from .state import DensityState, InitSpec, make_state, moment, moments, tail_moment, weighted_sum

__version__ = "0.1.0"
