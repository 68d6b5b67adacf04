"""Coupled value-difference estimation and the regenerative baseline.

The I+1 systems started at x and at each x - e_j share the uniforms that
drive every transition.  Events are thinned against the global
uniformization rate, which dominates every per-step total rate; the surplus
probability becomes a phantom event in each system.  Once a system meets the
one started at x it follows it forever, so the cost difference sum stops.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .. import _rng
from ..model import ConfigError, SystemConfig, greedy_allocation, stage_cost
from ..policy import Policy
from . import _core
from ._stats import ValueDiffSamples

DEFAULT_T = 1000


class _Fixed:
    """Stand-in generator that always returns one uniform."""

    def __init__(self, u):
        self.u = u

    def random(self):
        return self.u


@dataclass(frozen=True)
class CoupledEnsemble:
    systems: np.ndarray      # (I+1, I); row 0 starts at x, row j at x - e_j
    merged: np.ndarray       # (I+1,) bool
    D: np.ndarray            # (I,) running cost differences
    k: int = 0
    T: int = DEFAULT_T

    @classmethod
    def start(cls, cfg: SystemConfig, x, T: int = DEFAULT_T) -> "CoupledEnsemble":
        x = cfg.check_state(x)
        if np.any(x < 1):
            raise ConfigError("coupled estimation needs x_i >= 1 for every class")
        I = cfg.n_classes
        S = np.tile(x, (I + 1, 1))
        S[1:] -= np.eye(I, dtype=np.int64)
        merged = np.zeros(I + 1, dtype=bool)
        merged[0] = True
        return cls(S, merged, np.zeros(I), 0, T)

    @property
    def done(self) -> bool:
        return bool(self.merged.all()) or self.k >= self.T


def _transition(cfg, pol, x, u1, u2, u3):
    """Single-system move under common uniforms (cumulative-ratio rules)."""
    x = x.copy()
    Lam = cfg.Lambda
    order = pol.priority_order(cfg, x, _Fixed(u3))
    z = greedy_allocation(order, x, cfg.servers)
    t = u1 * Lam
    cum = np.cumsum(cfg.lam)
    for i in range(cfg.n_classes):
        if t < cum[i]:
            if x[i] < cfg.kappa[i]:
                x[i] += 1
            return x
    flows = np.array([z[i] * cfg.rates[i, x[i]] for i in range(cfg.n_classes)])
    dep = flows.sum()
    if t < cum[-1] + dep:
        share = np.cumsum(flows)
        hit = np.flatnonzero((u2 * dep < share) & (z > 0))
        i = int(hit[0]) if hit.size else int(np.flatnonzero(z > 0)[-1])
        x[i] -= 1
    return x


def coupled_step(ens: CoupledEnsemble, cfg: SystemConfig, pol: Policy, u1: float, u2: float,
                 u3: float = 0.0) -> CoupledEnsemble:
    """Advance every live system of the ensemble by one uniformized step."""
    if ens.done:
        return ens
    S = ens.systems
    c0 = stage_cost(cfg, S[0])
    D = ens.D.copy()
    for j in range(cfg.n_classes):
        if not ens.merged[j + 1]:
            D[j] += c0 - stage_cost(cfg, S[j + 1])
    new = S.copy()
    for m in range(S.shape[0]):
        if m == 0 or not ens.merged[m]:
            new[m] = _transition(cfg, pol, S[m], u1, u2, u3)
        else:
            new[m] = new[0]
    merged = ens.merged | np.all(new == new[0], axis=1)
    assert np.all(new[merged] == new[0]), "coupled systems separated"
    return replace(ens, systems=new, merged=merged, D=D, k=ens.k + 1)


def _coupled_arrays(cfg: SystemConfig, pol: Policy, X0, seeds, T):
    if cfg.mode != "preemptive":
        raise ConfigError("use the non-preemptive estimator for this config")
    X0 = np.ascontiguousarray(X0, dtype=np.int64)
    if np.any(X0 < 1) or np.any(X0 > cfg.kappa):
        raise ConfigError("coupled estimation needs 1 <= x_i <= kappa_i")
    return _core.coupled_batch(X0, np.ascontiguousarray(seeds, dtype=np.int64), int(T),
                               cfg.lam, cfg.Lambda, cfg.rates, cfg.kappa, cfg.servers, cfg.h,
                               cfg.b, pol.kernel(cfg))


def coupled_samples(cfg, pol, states, n, T=DEFAULT_T, seed=0, start=0, stream=()):
    """Coupled samples for several states at once, replications start..start+n-1.

    Seeds depend only on (seed, stream, state, replication index), so how the
    work is batched never changes the numbers.
    """
    states = np.atleast_2d(np.asarray(states, dtype=np.int64))
    seeds = np.stack([_rng.rep_seeds(seed, "coupled", tuple(stream) + (cfg.encode(x),),
                                     start, n) for x in states])
    return _coupled_arrays(cfg, pol, states, seeds, T)


def estimate_value_differences(cfg: SystemConfig, pol: Policy, x, n: int,
                               T: int = DEFAULT_T, seed: int = 0,
                               stream=()) -> ValueDiffSamples:
    """Coupled estimates of D_i(x) = v(x) - v(x - e_i) for every class i."""
    x = cfg.check_state(x)
    D, L, tr = coupled_samples(cfg, pol, x[None, :], n, T, seed, 0, stream)
    return ValueDiffSamples(tuple(int(v) for v in x), D[0], L[0], tr[0],
                            times=L[0] / cfg.Lambda)


def regeneration_state(cfg: SystemConfig) -> np.ndarray:
    """State nearest lambda_i / f_i(0), halves rounded down."""
    target = cfg.lam / cfg.rates[:, 0]
    return np.clip(np.ceil(target - 0.5), 0, cfg.kappa).astype(np.int64)


def estimate_value_differences_regen(cfg: SystemConfig, pol: Policy, x, n: int,
                                     x0=None, T: int = DEFAULT_T, gain: float | None = None,
                                     seed: int = 0) -> ValueDiffSamples:
    """Regenerative estimates of D_i(x) with common random numbers.

    Each of the I+1 systems runs alone until it first hits ``x0`` (default
    :func:`regeneration_state`) or makes T jumps.  ``gain`` is the long-run
    average cost per unit time of ``pol``; when omitted it is estimated by a
    long simulation.
    """
    x = cfg.check_state(x)
    if np.any(x < 1):
        raise ConfigError("needs x_i >= 1 for every class")
    x0 = regeneration_state(cfg) if x0 is None else cfg.check_state(x0)
    if gain is None:
        from .longrun import simulate_long_run

        gain = simulate_long_run(cfg, pol, horizon=10**6, reps=4, seed=seed).cost_mean
    seeds = _rng.rep_seeds(seed, "regen", (cfg.encode(x),), 0, n)
    D, L, S, tr = _core.regen_batch(x, x0, seeds, int(T), float(gain), cfg.lam, cfg.rates,
                                    cfg.kappa, cfg.servers, cfg.h, cfg.b, pol.kernel(cfg))
    return ValueDiffSamples(tuple(int(v) for v in x), D, L, tr, times=S)


# ------------------------------------------------------------- non-preemptive


def admissible(cfg: SystemConfig, x, z) -> list:
    """Classes with a waiting customer at an actionable state, else []."""
    x = np.asarray(x)
    z = np.asarray(z)
    if z.sum() >= cfg.servers:
        return []
    return [i for i in range(cfg.n_classes) if x[i] > z[i]]


def _np_layout(cfg, states):
    """Start allocations per state: the smallest admissible class first."""
    I = cfg.n_classes
    X0 = np.empty((len(states), I), dtype=np.int64)
    ZL = np.empty((len(states), I, I), dtype=np.int64)
    adm = []
    for s, (x, z) in enumerate(states):
        x = cfg.check_state(x)
        z = np.asarray(z, dtype=np.int64)
        if np.any(z > x) or np.any(z < 0):
            raise ConfigError("need 0 <= z <= x")
        A = admissible(cfg, x, z)
        if not A:
            raise ValueError(f"state x={x.tolist()} z={z.tolist()} is not actionable")
        X0[s] = x
        for m in range(I):
            cls_ = A[m] if m < len(A) else A[0]
            ZL[s, m] = z
            ZL[s, m, cls_] += 1
        adm.append(A)
    return X0, ZL, adm


def np_coupled_samples(cfg, pol, states, n, T=DEFAULT_T, seed=0, start=0, stream=()):
    """D[s, r, i] for class i admissible at state s (NaN elsewhere, 0 for the reference)."""
    if cfg.mode != "nonpreemptive":
        raise ConfigError("config is not in non-preemptive mode")
    X0, ZL, adm = _np_layout(cfg, states)
    I = cfg.n_classes
    _, zstr = _np_strides(cfg)
    seeds = np.stack([
        _rng.rep_seeds(seed, "np-coupled",
                       tuple(stream) + (int(np.dot(np.concatenate([X0[s], ZL[s, 0]]), zstr)),),
                       start, n)
        for s in range(len(adm))
    ])
    Draw, L, tr = _core.np_coupled_batch(X0, ZL, seeds, int(T), cfg.lam, cfg.Lambda,
                                         cfg.rates, cfg.kappa, cfg.servers, cfg.h, cfg.b,
                                         pol.kernel(cfg))
    D = np.full((len(adm), n, I), np.nan)
    for s, A in enumerate(adm):
        for m, i in enumerate(A):
            D[s, :, i] = Draw[s, :, m]
    return D, L, tr, adm


def _np_strides(cfg):
    dims = list(cfg.shape) + [int(cfg.servers) + 2] * cfg.n_classes
    strides = np.ones(len(dims), dtype=np.int64)
    for d in range(len(dims) - 2, -1, -1):
        strides[d] = strides[d + 1] * dims[d + 1]
    return dims, strides


def estimate_value_differences_np(cfg: SystemConfig, pol: Policy, x, z, n: int,
                                  T: int = DEFAULT_T, seed: int = 0,
                                  stream=()) -> ValueDiffSamples:
    """Coupled estimates of D~_i = v(x, z+e_i') - v(x, z+e_i) over admissible classes.

    i' is the smallest admissible class, whose column is identically 0.
    The class to admit is the one with the largest D~.
    """
    D, L, tr, adm = np_coupled_samples(cfg, pol, [(x, z)], n, T, seed, 0, stream)
    return ValueDiffSamples(tuple(int(v) for v in x), D[0], L[0], tr[0],
                            z=tuple(int(v) for v in z))
