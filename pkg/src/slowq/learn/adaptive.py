"""Adaptive allocation of coupled replications across sampled states.

A state keeps receiving batches of ``n_step`` replications while some pair
of its scores R_i = f_i(x_i) * mean(D_i) cannot be told apart, i.e. while
the smallest paired t-statistic is at most the normal quantile phi_alpha.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from ..model import ConfigError, SystemConfig
from ..policy import Policy
from ..sim import DEFAULT_T, ValueDiffSamples
from ..sim.coupling import coupled_samples, np_coupled_samples

DEFAULT_N_STEP = 30
DEFAULT_N_TILDE_MAX = 2000
DEFAULT_ALPHA = 0.95


def phi_alpha(alpha: float) -> float:
    """Upper (1 - alpha)/2 point of the standard normal."""
    if not 0.0 < alpha < 1.0:
        raise ConfigError("alpha must lie in (0, 1)")
    return float(norm.ppf(1.0 - (1.0 - alpha) / 2.0))


def pair_t_statistic(S: np.ndarray, cols=None) -> float:
    """Smallest |R_i - R_j| / sqrt(V_ij) over pairs of the given columns.

    S holds weighted samples f_i * D_i, one row per replication.  V_ij is the
    squared deviation sum of the paired differences over (n - 1)^2.  A zero
    difference with zero spread counts as inseparable (0); a nonzero one with
    zero spread as certain (inf).
    """
    S = np.asarray(S, dtype=float)
    n = S.shape[0]
    cols = list(range(S.shape[1])) if cols is None else list(cols)
    if n < 2 or len(cols) < 2:
        return np.inf if len(cols) < 2 else 0.0
    best = np.inf
    for a in range(len(cols)):
        for b in range(a + 1, len(cols)):
            d = S[:, cols[a]] - S[:, cols[b]]
            m = d.mean()
            V = np.sum((d - m) ** 2) / (n - 1) ** 2
            if V > 0:
                t = abs(m) / np.sqrt(V)
            else:
                t = np.inf if m != 0 else 0.0
            best = min(best, t)
    return float(best)


@dataclass
class AdaptiveResult:
    samples: list                        # ValueDiffSamples per input state, same order
    rounds: int
    total_samples: int
    t_stats: np.ndarray                  # final statistic per state
    active_per_round: list = field(default_factory=list)

    def means(self) -> np.ndarray:
        return np.array([s.mean for s in self.samples])

    def to_csv(self) -> str:
        if not self.samples:
            return ""
        I = self.samples[0].samples.shape[1]
        has_z = self.samples[0].z is not None
        head = [f"x_{i + 1}" for i in range(I)]
        if has_z:
            head += [f"z_{i + 1}" for i in range(I)]
        head += [f"D_{i + 1}" for i in range(I)] + ["n", "t_stat", "truncated"]
        lines = [",".join(head)]
        for s, t in zip(self.samples, self.t_stats):
            row = [str(v) for v in s.state]
            if has_z:
                row += [str(v) for v in s.z]
            row += ["" if np.isnan(v) else f"{v:.6g}" for v in s.mean]
            row += [str(s.n), f"{t:.6g}", str(int(s.truncated.sum()))]
            lines.append(",".join(row))
        return "\n".join(lines) + "\n"


def _check(n_step, n_tilde_max):
    if n_step < 2:
        raise ConfigError("n_step must be >= 2")
    if n_tilde_max < n_step:
        raise ConfigError("n_tilde_max must be >= n_step")


def _loop(draw, weights, cols, n_states, I, n_step, n_tilde_max, alpha, adaptive):
    """Shared driver; draw(active_idx, start, count) -> (D (m, count, I), L, tr)."""
    phi = phi_alpha(alpha)
    store = [[np.zeros((0, I)), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=bool)]
             for _ in range(n_states)]
    active = list(range(n_states))
    t_stats = np.full(n_states, np.nan)
    n = 0
    rounds = 0
    history = []
    total = 0
    while active and n < n_tilde_max:
        count = min(n_step, n_tilde_max - n)
        D, L, tr = draw(np.array(active), n, count)
        history.append(len(active))
        total += len(active) * count
        for k, s in enumerate(active):
            st = store[s]
            st[0] = np.concatenate([st[0], D[k]])
            st[1] = np.concatenate([st[1], L[k]])
            st[2] = np.concatenate([st[2], tr[k]])
        n += count
        rounds += 1
        keep = []
        for s in active:
            t = pair_t_statistic(store[s][0] * weights[s], cols[s])
            t_stats[s] = t
            if not adaptive or t <= phi:
                keep.append(s)
        active = keep
    return store, rounds, total, t_stats, history


def adaptive_estimate(cfg: SystemConfig, pol: Policy, states, n_step: int = DEFAULT_N_STEP,
                      n_tilde_max: int = DEFAULT_N_TILDE_MAX, alpha: float = DEFAULT_ALPHA,
                      T: int = DEFAULT_T, seed: int = 0, stream=(),
                      adaptive: bool = True) -> AdaptiveResult:
    """Coupled D-estimates at each state with the adaptive stopping rule.

    With ``adaptive=False`` every state gets exactly ``n_tilde_max`` samples.
    """
    _check(n_step, n_tilde_max)
    X = np.atleast_2d(np.asarray(states, dtype=np.int64))
    I = cfg.n_classes
    weights = np.array([[cfg.rates[i, x[i]] for i in range(I)] for x in X])

    def draw(idx, start, count):
        return coupled_samples(cfg, pol, X[idx], count, T, seed, start, stream)

    cols = [None] * len(X)
    store, rounds, total, t, hist = _loop(draw, weights, cols, len(X), I, n_step, n_tilde_max,
                                          alpha, adaptive)
    samples = [ValueDiffSamples(tuple(int(v) for v in x), s[0], s[1], s[2])
               for x, s in zip(X, store)]
    return AdaptiveResult(samples, rounds, total, t, hist)


def adaptive_estimate_np(cfg: SystemConfig, pol: Policy, states, n_step: int = DEFAULT_N_STEP,
                         n_tilde_max: int = DEFAULT_N_TILDE_MAX,
                         alpha: float = DEFAULT_ALPHA, T: int = DEFAULT_T, seed: int = 0,
                         stream=(), adaptive: bool = True) -> AdaptiveResult:
    """Adaptive estimates of D~ at actionable (x, z) pairs, compared directly."""
    _check(n_step, n_tilde_max)
    states = [(np.asarray(x, dtype=np.int64), np.asarray(z, dtype=np.int64))
              for x, z in states]
    I = cfg.n_classes
    from ..sim.coupling import admissible

    cols = [admissible(cfg, x, z) for x, z in states]

    def draw(idx, start, count):
        D, L, tr, _ = np_coupled_samples(cfg, pol, [states[i] for i in idx], count, T, seed,
                                         start, stream)
        return D, L, tr

    weights = np.ones((len(states), I))
    store, rounds, total, t, hist = _loop(draw, weights, cols, len(states), I, n_step,
                                          n_tilde_max, alpha, adaptive)
    samples = [ValueDiffSamples(tuple(int(v) for v in x), s[0], s[1], s[2],
                                z=tuple(int(v) for v in z))
               for (x, z), s in zip(states, store)]
    return AdaptiveResult(samples, rounds, total, t, hist)
