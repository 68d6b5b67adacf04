"""Sampling-based approximate policy iteration.

Each round estimates value differences at a fixed sample of states under
the current policy, labels every state with the class of largest
f_i(x_i) * D_i(x) (largest D~_i for non-preemptive admission), and fits a
polynomial logistic classifier to those labels.  The classifier is the next
policy.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .. import _rng
from ..model import ConfigError, SystemConfig
from ..policy import BenchmarkPolicy, ClassifierPolicy, Policy
from ..sim import DEFAULT_T, simulate_long_run
from .adaptive import (DEFAULT_ALPHA, DEFAULT_N_STEP, DEFAULT_N_TILDE_MAX, adaptive_estimate,
                       adaptive_estimate_np)
from .classifier import PolynomialLogisticClassifier
from .sampling import (default_iterations, default_np_sample_size, default_sample_size,
                       sample_np_states, sample_states)


def top_labels(R: np.ndarray) -> np.ndarray:
    """Index of the largest entry per row, NaN ignored, ties to the smaller index."""
    R = np.where(np.isnan(R), -np.inf, R)
    return np.argmax(R, axis=1).astype(np.int64)


def _initial(cfg, init, N, seed, fluid_iterations):
    if isinstance(init, Policy):
        return init
    if init == "fluid":
        from ..fluid import fluid_policy_iteration

        return fluid_policy_iteration(cfg, N=N, n_max=fluid_iterations, seed=seed)
    return BenchmarkPolicy(init)


def _evaluate(cfg, pol, horizon, reps, seed, it):
    st = simulate_long_run(cfg, pol, horizon=horizon, reps=reps,
                           seed=int(_rng.rep_seeds(seed, "adp-eval", (it,), 0, 1)[0]))
    return st.cost_mean, st.cost_ci


def adp_train(cfg: SystemConfig, pi0=None, N: int | None = None, n_max: int | None = None,
              n_step: int = DEFAULT_N_STEP, n_tilde_max: int = DEFAULT_N_TILDE_MAX,
              alpha: float = DEFAULT_ALPHA, T: int = DEFAULT_T, seed: int = 0,
              adaptive: bool = True, degree: int = 3, classifier_params: dict | None = None,
              init: str = "fluid", fluid_iterations: int = 3, evaluate: bool = True,
              eval_horizon: int = 10**6, eval_reps: int = 4):
    """Run the preemptive learner; returns (policy, per-round diagnostics)."""
    if cfg.mode != "preemptive":
        raise ConfigError("adp_train needs a preemptive config; use adp_train_np")
    N = default_sample_size(cfg) if N is None else int(N)
    n_max = default_iterations(cfg, N) if n_max is None else int(n_max)
    if n_max < 1:
        raise ConfigError("n_max must be >= 1")
    states = sample_states(cfg, N, _rng.generator(seed, "adp-sample"))
    pol = _initial(cfg, pi0 if pi0 is not None else init, N, seed, fluid_iterations)
    I = cfg.n_classes
    f = np.array([[cfg.rates[i, x[i]] for i in range(I)] for x in states])
    scale = tuple(float(k) for k in cfg.kappa)
    diag = []
    for it in range(n_max):
        res = adaptive_estimate(cfg, pol, states, n_step, n_tilde_max, alpha, T, seed,
                                stream=(it,), adaptive=adaptive)
        labels = top_labels(f * res.means())
        clf = PolynomialLogisticClassifier(degree=degree, n_classes=I, coord_scale=scale,
                                           **(classifier_params or {}))
        clf.fit(states.astype(float), labels)
        pol = ClassifierPolicy(clf)
        row = {"iteration": it + 1, "samples": int(res.total_samples), "rounds": res.rounds,
               "truncated": int(sum(s.truncated.sum() for s in res.samples)),
               "train_accuracy": float(np.mean(clf.predict(states.astype(float)) == labels))}
        if evaluate:
            row["cost"], row["cost_ci"] = _evaluate(cfg, pol, eval_horizon, eval_reps, seed, it)
        row["estimates"] = res
        diag.append(row)
    return pol, diag


def adp_train_np(cfg: SystemConfig, pi0=None, N: int | None = None, n_max: int | None = None,
                 n_step: int = DEFAULT_N_STEP, n_tilde_max: int = DEFAULT_N_TILDE_MAX,
                 alpha: float = DEFAULT_ALPHA, T: int = DEFAULT_T, seed: int = 0,
                 adaptive: bool = True, degree: int = 3, classifier_params: dict | None = None,
                 init: str = "cmu_zero", evaluate: bool = True, eval_horizon: int = 10**6,
                 eval_reps: int = 4):
    """Non-preemptive learner over actionable (x, z); returns (policy, diagnostics)."""
    if cfg.mode != "nonpreemptive":
        raise ConfigError("adp_train_np needs a non-preemptive config")
    I = cfg.n_classes
    if I < 2:
        # a single class never needs a decision
        return BenchmarkPolicy("static", order=(0,)), []
    N = default_np_sample_size(cfg) if N is None else int(N)
    n_max = 5 if n_max is None else int(n_max)
    if n_max < 1:
        raise ConfigError("n_max must be >= 1")
    states = sample_np_states(cfg, N, _rng.generator(seed, "adp-np-sample"))
    if pi0 is not None:
        pol = pi0
    elif init == "fluid":
        raise ConfigError("fluid initialization is preemptive only")
    else:
        pol = BenchmarkPolicy(init)
    feats = np.array([np.concatenate([x, z]) for x, z in states], dtype=float)
    scale = tuple(float(k) for k in cfg.kappa) + (float(cfg.servers),) * I
    diag = []
    for it in range(n_max):
        res = adaptive_estimate_np(cfg, pol, states, n_step, n_tilde_max, alpha, T, seed,
                                   stream=(it,), adaptive=adaptive)
        labels = top_labels(res.means())
        clf = PolynomialLogisticClassifier(degree=degree, n_classes=I, coord_scale=scale,
                                           **(classifier_params or {}))
        clf.fit(feats, labels)
        pol = ClassifierPolicy(clf, nonpreemptive=True)
        row = {"iteration": it + 1, "samples": int(res.total_samples), "rounds": res.rounds,
               "truncated": int(sum(s.truncated.sum() for s in res.samples)),
               "train_accuracy": float(np.mean(clf.predict(feats) == labels))}
        if evaluate:
            row["cost"], row["cost_ci"] = _evaluate(cfg, pol, eval_horizon, eval_reps, seed, it)
        row["estimates"] = res
        diag.append(row)
    return pol, diag


def diagnostics_csv(diag) -> str:
    cols = ["iteration", "samples", "rounds", "truncated", "train_accuracy", "cost", "cost_ci"]
    lines = [",".join(cols)]
    for row in diag:
        vals = []
        for c in cols:
            v = row.get(c, "")
            vals.append(f"{v:.6g}" if isinstance(v, float) else str(v))
        lines.append(",".join(vals))
    return "\n".join(lines) + "\n"


class _ADPBase(BaseEstimator):
    def _policy_input(self, X):
        check_is_fitted(self, "policy_")
        return check_array(X, dtype=float)

    def predict(self, X):
        """Top-priority class (0-based) at each row of states."""
        X = self._policy_input(X)
        if isinstance(self.policy_, ClassifierPolicy):
            return self.policy_.model.predict(X)
        return np.array([self.policy_.priority_order(self.cfg_, x)[0] for x in X])

    def rank(self, X):
        X = self._policy_input(X)
        if isinstance(self.policy_, ClassifierPolicy):
            return self.policy_.model.rank(X)
        return np.array([self.policy_.priority_order(self.cfg_, x) for x in X])


class ADPScheduler(_ADPBase):
    """Estimator wrapper around :func:`adp_train`.

    ``fit`` takes a preemptive SystemConfig; ``predict`` maps rows of states
    to the top-priority class and ``rank`` to full priority orders.
    """

    def __init__(self, N=None, n_max=None, n_step=DEFAULT_N_STEP, n_tilde_max=DEFAULT_N_TILDE_MAX,
                 alpha=DEFAULT_ALPHA, T=DEFAULT_T, seed=0, adaptive=True, degree=3,
                 init="fluid", fluid_iterations=3, evaluate=True, eval_horizon=10**6,
                 eval_reps=4):
        self.N = N
        self.n_max = n_max
        self.n_step = n_step
        self.n_tilde_max = n_tilde_max
        self.alpha = alpha
        self.T = T
        self.seed = seed
        self.adaptive = adaptive
        self.degree = degree
        self.init = init
        self.fluid_iterations = fluid_iterations
        self.evaluate = evaluate
        self.eval_horizon = eval_horizon
        self.eval_reps = eval_reps

    def fit(self, cfg: SystemConfig, y=None):
        if not isinstance(cfg, SystemConfig):
            raise ConfigError("fit expects a SystemConfig")
        self.cfg_ = cfg
        self.policy_, self.history_ = adp_train(
            cfg, None, self.N, self.n_max, self.n_step, self.n_tilde_max, self.alpha, self.T,
            self.seed, self.adaptive, self.degree, None, self.init, self.fluid_iterations,
            self.evaluate, self.eval_horizon, self.eval_reps)
        self.samples_used_ = sum(r["samples"] for r in self.history_)
        return self


class ADPNonPreemptive(_ADPBase):
    """Estimator wrapper around :func:`adp_train_np`; rows are (x, z) concatenated."""

    def __init__(self, N=None, n_max=None, n_step=DEFAULT_N_STEP, n_tilde_max=DEFAULT_N_TILDE_MAX,
                 alpha=DEFAULT_ALPHA, T=DEFAULT_T, seed=0, adaptive=True, degree=3,
                 init="cmu_zero", evaluate=True, eval_horizon=10**6, eval_reps=4):
        self.N = N
        self.n_max = n_max
        self.n_step = n_step
        self.n_tilde_max = n_tilde_max
        self.alpha = alpha
        self.T = T
        self.seed = seed
        self.adaptive = adaptive
        self.degree = degree
        self.init = init
        self.evaluate = evaluate
        self.eval_horizon = eval_horizon
        self.eval_reps = eval_reps

    def fit(self, cfg: SystemConfig, y=None):
        if not isinstance(cfg, SystemConfig):
            raise ConfigError("fit expects a SystemConfig")
        self.cfg_ = cfg
        self.policy_, self.history_ = adp_train_np(
            cfg, None, self.N, self.n_max, self.n_step, self.n_tilde_max, self.alpha, self.T,
            self.seed, self.adaptive, self.degree, None, self.init, self.evaluate,
            self.eval_horizon, self.eval_reps)
        self.samples_used_ = sum(r["samples"] for r in self.history_)
        return self
