"""Exact average-cost solutions on small state spaces.

Relative value iteration on the uniformized chain.  States are stored densely
in mixed-radix order, so neighbours are a stride away.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from itertools import permutations

import numpy as np
from numba import njit

from . import _kernels as K
from .model import (ConfigError, NumericalError, StateSpaceTooLarge, SystemConfig,
                    stage_costs)
from .policy import NpTabularPolicy, Policy, TabularPolicy, action_weights

__all__ = [
    "ValueTable",
    "NpValueTable",
    "solve_optimal",
    "evaluate_policy_exact",
    "value_difference_exact",
    "greedy_policy",
    "bellman_residual",
    "solve_optimal_np",
    "evaluate_policy_np_exact",
    "STATE_CAP",
]

STATE_CAP = 10**7


@dataclass(frozen=True, eq=False)
class ValueTable:
    """Relative values over the state box and the gain per unit time."""

    v: np.ndarray
    gamma: float
    cfg: SystemConfig
    anchor: tuple
    iterations: int = 0

    def value(self, x) -> float:
        return float(self.v[self.cfg.encode(self.cfg.check_state(x))])

    def to_csv(self) -> str:
        I = self.cfg.n_classes
        buf = io.StringIO()
        buf.write(f"# gamma={self.gamma:.6g}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"x_{i + 1}" for i in range(I)] + ["v"])
        for x, val in zip(self.cfg.all_states(), self.v):
            w.writerow([int(t) for t in x] + [f"{val:.6g}"])
        return buf.getvalue()


@dataclass(frozen=True, eq=False)
class NpValueTable:
    """Values over the enlarged (x, z) space; NaN marks impossible pairs."""

    v: np.ndarray
    gamma: float
    cfg: SystemConfig
    strides: np.ndarray
    iterations: int = 0

    def value(self, x, z) -> float:
        return float(self.v[int(np.dot(np.concatenate([x, z]), self.strides))])

    def to_csv(self) -> str:
        I = self.cfg.n_classes
        dims = [int(k) + 1 for k in self.cfg.kappa] + [min(int(self.cfg.servers), int(k)) + 1
                                                       for k in self.cfg.kappa]
        buf = io.StringIO()
        buf.write(f"# gamma={self.gamma:.6g}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"x_{i + 1}" for i in range(I)] + [f"z_{i + 1}" for i in range(I)] + ["v"])
        for idx in np.flatnonzero(~np.isnan(self.v)):
            s = np.unravel_index(int(idx), dims)
            w.writerow([int(t) for t in s] + [f"{self.v[idx]:.6g}"])
        return buf.getvalue()


def _check_cap(n, cap):
    if n > cap:
        raise StateSpaceTooLarge(f"state space has {n} states, cap is {cap}")


@njit(cache=True)
def _rvi(X, c, lam, kappa, rates, servers, strides, Lam, perms, W, optimal, anchor,
         tol, max_iters, v0):
    n, I = X.shape
    A = perms.shape[0]
    v = v0.copy()
    vn = np.empty(n)
    z = np.zeros(I, dtype=np.int64)
    span = np.inf
    mid = 0.0
    for it in range(max_iters):
        for s in range(n):
            base = c[s]
            stay = 1.0
            for i in range(I):
                if X[s, i] < kappa[i]:
                    p = lam[i] / Lam
                    base += p * v[s + strides[i]]
                    stay -= p
            best = np.inf if optimal else 0.0
            for a in range(A):
                if not optimal and W[s, a] == 0.0:
                    continue
                K.allocate_into(perms[a], X[s], servers, z)
                q = 0.0
                st = stay
                for i in range(I):
                    if z[i] > 0:
                        p = z[i] * rates[i, X[s, i]] / Lam
                        q += p * v[s - strides[i]]
                        st -= p
                q += st * v[s]
                if optimal:
                    if q < best:
                        best = q
                else:
                    best += W[s, a] * q
            vn[s] = base + best
        lo = np.inf
        hi = -np.inf
        for s in range(n):
            d = vn[s] - v[s]
            if d < lo:
                lo = d
            if d > hi:
                hi = d
        ref = vn[anchor]
        for s in range(n):
            v[s] = vn[s] - ref
        span = hi - lo
        mid = 0.5 * (hi + lo)
        if span < tol:
            return v, mid, it + 1, span
    return v, mid, -1, span


def _run_rvi(cfg, perms, W, optimal, tol, max_iters, anchor, state_cap):
    if cfg.mode != "preemptive":
        raise ConfigError("this solver handles preemptive systems; use solve_optimal_np")
    _check_cap(cfg.n_states, state_cap)
    anchor = tuple(cfg.check_state(anchor if anchor is not None
                                   else np.zeros(cfg.n_classes, dtype=int)))
    X = cfg.all_states()
    c = stage_costs(cfg)
    v, g, its, span = _rvi(X, c, cfg.lam, cfg.kappa, cfg.rates, cfg.servers, cfg.strides,
                           cfg.Lambda, perms, W, optimal, cfg.encode(anchor), tol,
                           max_iters, np.zeros(cfg.n_states))
    if its < 0 or not np.isfinite(span):
        raise NumericalError(
            f"relative value iteration did not converge in {max_iters} sweeps "
            f"(span {span:.3g})", residual=span)
    return ValueTable(v, float(g * cfg.Lambda), cfg, anchor, int(its))


def greedy_policy(vt: ValueTable) -> TabularPolicy:
    """Rank classes by f_i(x_i) * D_i(x) at every state (empty classes last)."""
    cfg = vt.cfg
    X = cfg.all_states()
    idx = np.arange(cfg.n_states)
    score = np.full(X.shape, -np.inf)
    for i in range(cfg.n_classes):
        ok = X[:, i] > 0
        D = vt.v[idx[ok]] - vt.v[idx[ok] - cfg.strides[i]]
        score[ok, i] = cfg.rates[i, X[ok, i]] * D
    # stable argsort on the negated score: ties go to the smaller index
    orders = np.argsort(-score, axis=1, kind="stable")
    return TabularPolicy(orders)


def solve_optimal(cfg: SystemConfig, tol: float = 1e-8, max_iters: int = 1_000_000,
                  anchor=None, state_cap: int = STATE_CAP):
    """Optimal relative values, gain per unit time and greedy priority table.

    Returns
    -------
    (ValueTable, TabularPolicy)
    """
    perms = np.array(list(permutations(range(cfg.n_classes))), dtype=np.int64)
    W = np.zeros((1, 1))
    vt = _run_rvi(cfg, perms, W, True, tol, max_iters, anchor, state_cap)
    return vt, greedy_policy(vt)


def evaluate_policy_exact(cfg: SystemConfig, pol: Policy, tol: float = 1e-8,
                          max_iters: int = 1_000_000, anchor=None,
                          state_cap: int = STATE_CAP) -> ValueTable:
    """Gain and relative values of a fixed (possibly randomized) policy."""
    _check_cap(cfg.n_states, state_cap)
    perms, W = action_weights(pol, cfg)
    return _run_rvi(cfg, perms, W, False, tol, max_iters, anchor, state_cap)


def value_difference_exact(vt: ValueTable, x, i: int) -> float:
    x = vt.cfg.check_state(x)
    if x[i] < 1:
        raise ConfigError(f"D_{i + 1} undefined at x_{i + 1}=0")
    y = x.copy()
    y[i] -= 1
    return vt.value(x) - vt.value(y)


def bellman_residual(vt: ValueTable, pol: Policy | None = None) -> float:
    """max |c + P v - g/Lambda - v| over states (optimal operator when pol is None)."""
    cfg = vt.cfg
    if pol is None:
        perms = np.array(list(permutations(range(cfg.n_classes))), dtype=np.int64)
        W = np.zeros((1, 1))
        optimal = True
    else:
        perms, W = action_weights(pol, cfg)
        optimal = False
    X = cfg.all_states()
    v1, _, _, _ = _rvi(X, stage_costs(cfg), cfg.lam, cfg.kappa, cfg.rates, cfg.servers,
                       cfg.strides, cfg.Lambda, perms, W, optimal,
                       cfg.encode(vt.anchor), np.inf, 1, vt.v)
    # one sweep returns Tv - (Tv)(anchor); the anchor value equals the gain per step
    return float(np.max(np.abs(v1 - vt.v)))


# ------------------------------------------------------------- non-preemptive


def _np_space(cfg):
    I = cfg.n_classes
    C = cfg.servers
    zdim = [min(C, int(k)) + 1 for k in cfg.kappa]
    dims = list(cfg.shape) + zdim
    strides = np.ones(2 * I, dtype=np.int64)
    for d in range(2 * I - 2, -1, -1):
        strides[d] = strides[d + 1] * dims[d + 1]
    return dims, strides


def _np_structure(cfg, state_cap):
    dims, strides = _np_space(cfg)
    total = int(np.prod(dims))
    _check_cap(total, state_cap)
    I = cfg.n_classes
    C = cfg.servers
    grid = np.array(np.unravel_index(np.arange(total), dims)).T
    x = grid[:, :I]
    z = grid[:, I:]
    valid = np.all(z <= x, axis=1) & (z.sum(axis=1) <= C)
    waiting = np.any(x > z, axis=1)
    free = z.sum(axis=1) < C
    actionable = valid & waiting & free
    stable = valid & ~actionable
    return dims, strides, grid, valid, stable, actionable


@njit(cache=True)
def _np_rvi(grid, stable_idx, act_idx, c, lam, kappa, rates, strides, Lam, act_w,
            optimal, anchor, tol, max_iters, v):
    I = lam.size
    ns = stable_idx.size
    vn = np.empty(ns)
    span = np.inf
    mid = 0.0
    for it in range(max_iters):
        for k in range(ns):
            s = stable_idx[k]
            acc = c[k]
            stay = 1.0
            for i in range(I):
                if grid[s, i] < kappa[i]:
                    p = lam[i] / Lam
                    acc += p * v[s + strides[i]]
                    stay -= p
                zi = grid[s, I + i]
                if zi > 0:
                    p = zi * rates[i, grid[s, i]] / Lam
                    acc += p * v[s - strides[i] - strides[I + i]]
                    stay -= p
            vn[k] = acc + stay * v[s]
        lo = np.inf
        hi = -np.inf
        for k in range(ns):
            d = vn[k] - v[stable_idx[k]]
            if d < lo:
                lo = d
            if d > hi:
                hi = d
        ref = vn[anchor]
        for k in range(ns):
            v[stable_idx[k]] = vn[k] - ref
        # actionable states are resolved instantly, most-occupied servers first
        for a in range(act_idx.size):
            s = act_idx[a]
            best = np.inf if optimal else 0.0
            for i in range(I):
                if grid[s, i] > grid[s, I + i]:
                    q = v[s + strides[I + i]]
                    if optimal:
                        if q < best:
                            best = q
                    elif act_w[a, i] > 0.0:
                        best += act_w[a, i] * q
            v[s] = best
        span = hi - lo
        mid = 0.5 * (hi + lo)
        if span < tol:
            return mid, it + 1, span
    return mid, -1, span


def _np_solve(cfg, act_weights, optimal, tol, max_iters, state_cap):
    if cfg.mode != "nonpreemptive":
        raise ConfigError("config is not in non-preemptive mode")
    dims, strides, grid, valid, stable, actionable = _np_structure(cfg, state_cap)
    I = cfg.n_classes
    stable_idx = np.flatnonzero(stable)
    act_idx = np.flatnonzero(actionable)
    act_idx = act_idx[np.argsort(-grid[act_idx, I:].sum(axis=1), kind="stable")]
    xs = grid[stable_idx, :I]
    c = (xs @ cfg.h + ((xs == cfg.kappa) * (cfg.lam * cfg.b)).sum(axis=1)) / cfg.Lambda
    v = np.zeros(grid.shape[0])
    anchor = int(np.searchsorted(stable_idx, 0))
    W = act_weights(grid[act_idx]) if act_weights is not None else np.zeros((1, I))
    g, its, span = _np_rvi(grid, stable_idx, act_idx, c, cfg.lam, cfg.kappa, cfg.rates,
                           strides, cfg.Lambda, W, optimal, anchor, tol, max_iters, v)
    if its < 0:
        raise NumericalError(f"non-preemptive value iteration did not converge "
                             f"(span {span:.3g})", residual=span)
    v[~valid] = np.nan
    vt = NpValueTable(v, float(g * cfg.Lambda), cfg, strides, int(its))
    return vt, grid, act_idx, strides


def solve_optimal_np(cfg: SystemConfig, tol: float = 1e-8, max_iters: int = 1_000_000,
                     state_cap: int = STATE_CAP):
    """Optimal admission table for a non-preemptive system.

    Returns
    -------
    (NpValueTable, NpTabularPolicy)
    """
    vt, grid, act_idx, strides = _np_solve(cfg, None, True, tol, max_iters, state_cap)
    I = cfg.n_classes
    actions = np.full(grid.shape[0], -1, dtype=np.int64)
    for s in act_idx:
        best, arg = np.inf, -1
        for i in range(I):
            if grid[s, i] > grid[s, I + i]:
                q = vt.v[s + strides[I + i]]
                if q < best - 1e-12:
                    best, arg = q, i
        actions[s] = arg
    return vt, NpTabularPolicy(actions, strides)


def evaluate_policy_np_exact(cfg: SystemConfig, pol: Policy, tol: float = 1e-8,
                             max_iters: int = 1_000_000,
                             state_cap: int = STATE_CAP) -> NpValueTable:
    """Gain of a non-preemptive admission policy (routing handled as a mixture)."""
    I = cfg.n_classes

    def weights(states):
        W = np.zeros((states.shape[0], I))
        for r, s in enumerate(states):
            x, z = s[:I], s[I:]
            if getattr(pol, "rule", None) == "routing" and x[0] > z[0] and x[1] > z[1]:
                W[r, 0], W[r, 1] = pol.p, 1.0 - pol.p
            else:
                W[r, pol.np_admit(cfg, x, z)] = 1.0
        return W

    vt, _, _, _ = _np_solve(cfg, weights, False, tol, max_iters, state_cap)
    return vt
