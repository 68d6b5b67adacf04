"""Simulation: coupled and regenerative value differences, long-run costs, case study."""
from ._stats import SimStats, ValueDiffSamples, ci_halfwidth
from .coupling import (DEFAULT_T, CoupledEnsemble, admissible, coupled_samples, coupled_step,
                       estimate_value_differences, estimate_value_differences_np,
                       estimate_value_differences_regen, np_coupled_samples,
                       regeneration_state)
from .longrun import simulate_long_run, simulate_wait_dependent, trace_events

__all__ = [
    "DEFAULT_T",
    "CoupledEnsemble",
    "SimStats",
    "ValueDiffSamples",
    "admissible",
    "ci_halfwidth",
    "coupled_samples",
    "coupled_step",
    "estimate_value_differences",
    "estimate_value_differences_np",
    "estimate_value_differences_regen",
    "np_coupled_samples",
    "regeneration_state",
    "simulate_long_run",
    "simulate_wait_dependent",
    "trace_events",
]
