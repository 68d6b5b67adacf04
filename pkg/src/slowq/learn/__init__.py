"""Learning layer: state sampling, adaptive estimation, classifier and the ADP loop."""
from .adaptive import (AdaptiveResult, adaptive_estimate, adaptive_estimate_np,
                       pair_t_statistic, phi_alpha)
from .adp import (ADPNonPreemptive, ADPScheduler, adp_train, adp_train_np, diagnostics_csv,
                  top_labels)
from .classifier import PolynomialLogisticClassifier, featurize, monomial_exponents
from .sampling import (actionable_count, default_iterations, default_np_sample_size,
                       default_sample_size, sample_np_states, sample_states)

__all__ = [
    "ADPNonPreemptive",
    "ADPScheduler",
    "AdaptiveResult",
    "PolynomialLogisticClassifier",
    "actionable_count",
    "adaptive_estimate",
    "adaptive_estimate_np",
    "adp_train",
    "adp_train_np",
    "default_iterations",
    "default_np_sample_size",
    "default_sample_size",
    "diagnostics_csv",
    "featurize",
    "monomial_exponents",
    "pair_t_statistic",
    "phi_alpha",
    "sample_np_states",
    "sample_states",
    "top_labels",
]
