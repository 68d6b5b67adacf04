"""Compiled building blocks shared by the simulators and solvers.

Policies are flattened into a ``PolicyKernel`` tuple of arrays so that the
jitted loops can evaluate them without Python callbacks.
"""
from typing import NamedTuple

import numpy as np
from numba import njit

# policy kinds
K_TABLE = 0
K_CLASSIFIER = 1
K_SCORE = 2
K_ROUTING = 3
K_FCFS = 4
K_NPTABLE = 5

# index rules for K_SCORE
R_CMU0 = 0
R_CMUX = 1
R_MAXP = 2
R_SQF = 3
R_LQF = 4
R_STATIC = 5

# event codes
EV_PHANTOM = 0
EV_ARRIVAL = 1
EV_BLOCKED = 2
EV_DEPARTURE = 3


class PolicyKernel(NamedTuple):
    kind: int
    rule: int
    table: np.ndarray      # int64 (n, I) orders, or (n, 1) admitted class
    strides: np.ndarray    # int64 strides over the table coordinates
    exps: np.ndarray       # int64 (F, D) monomial exponents
    scale: np.ndarray      # float (D,) coordinate scale
    fmean: np.ndarray      # float (F,)
    fstd: np.ndarray       # float (F,)
    weights: np.ndarray    # float (K, F); K == 1 means binary logistic
    h: np.ndarray
    rate0: np.ndarray
    p: float
    static: np.ndarray     # int64 (I,) fixed order


def empty_kernel(kind, rule, n_classes, h, rate0, p=0.5, static=None):
    i64 = np.zeros((1, 1), dtype=np.int64)
    f1 = np.zeros(1)
    return PolicyKernel(
        int(kind), int(rule), i64, np.zeros(1, dtype=np.int64), i64, f1, f1, f1,
        np.zeros((1, 1)), np.asarray(h, dtype=float), np.asarray(rate0, dtype=float),
        float(p),
        np.arange(n_classes, dtype=np.int64) if static is None
        else np.asarray(static, dtype=np.int64),
    )


@njit(cache=True)
def rank_desc(score, out):
    """Write indices sorted by descending score into out; ties keep the smaller index."""
    n = score.size
    for k in range(n):
        out[k] = k
    for k in range(n):
        best = k
        for j in range(k + 1, n):
            if score[out[j]] > score[out[best]] or (
                score[out[j]] == score[out[best]] and out[j] < out[best]
            ):
                best = j
        tmp = out[k]
        out[k] = out[best]
        out[best] = tmp


@njit(cache=True)
def classifier_logits(pk, x, z, use_z, feat, sc):
    I = x.size
    F = pk.exps.shape[0]
    D = pk.exps.shape[1]
    for f in range(F):
        v = 1.0
        for d in range(D):
            e = pk.exps[f, d]
            if e > 0:
                if d < I:
                    c = x[d] / pk.scale[d]
                elif use_z:
                    c = z[d - I] / pk.scale[d]
                else:
                    c = 0.0
                for _ in range(e):
                    v *= c
        feat[f] = (v - pk.fmean[f]) / pk.fstd[f]
    K = pk.weights.shape[0]
    if K == 1:
        s = 0.0
        for f in range(F):
            s += pk.weights[0, f] * feat[f]
        # binary: positive logit favours class index 1
        sc[0] = 0.0
        sc[1] = s
        for i in range(2, I):
            sc[i] = -np.inf
    else:
        for k in range(K):
            s = 0.0
            for f in range(F):
                s += pk.weights[k, f] * feat[f]
            sc[k] = s


@njit(cache=True)
def order_into(pk, x, z, rx, u, out, sc, feat):
    """Priority order at state x (counts may be real-valued for the fluid model).

    rx holds the current per-class service rates f_i(x_i).
    """
    I = x.size
    kind = pk.kind
    if kind == K_TABLE:
        idx = 0
        for i in range(I):
            idx += int(x[i] + 0.5) * pk.strides[i]
        for i in range(I):
            out[i] = pk.table[idx, i]
        return
    if kind == K_CLASSIFIER:
        classifier_logits(pk, x, z, pk.exps.shape[1] > I, feat, sc)
        rank_desc(sc, out)
        return
    if kind == K_ROUTING:
        # p only matters when both classes have customers
        if x[0] > 0 and x[1] > 0 and u >= pk.p:
            out[0] = 1
            out[1] = 0
        else:
            out[0] = 0
            out[1] = 1
        return
    rule = pk.rule
    if rule == R_STATIC or kind == K_FCFS:
        for i in range(I):
            out[i] = pk.static[i]
        return
    for i in range(I):
        if rule == R_CMU0:
            sc[i] = pk.h[i] * pk.rate0[i]
        elif rule == R_CMUX:
            sc[i] = pk.h[i] * rx[i]
        elif rule == R_MAXP:
            sc[i] = pk.h[i] * x[i] * rx[i]
        elif rule == R_SQF:
            sc[i] = -1.0 * x[i]
        else:
            sc[i] = 1.0 * x[i]
    rank_desc(sc, out)


@njit(cache=True)
def np_admit(pk, x, z, rx, u, heads, out, sc, feat):
    """Class admitted to a free server at an actionable state (x, z)."""
    I = x.size
    kind = pk.kind
    if kind == K_FCFS:
        best = -1
        for i in range(I):
            if x[i] > z[i] and (best < 0 or heads[i] < heads[best]):
                best = i
        return best
    if kind == K_ROUTING:
        w0 = x[0] > z[0]
        w1 = x[1] > z[1]
        if w0 and w1:
            return 0 if u < pk.p else 1
        return 0 if w0 else 1
    if kind == K_NPTABLE:
        idx = 0
        for i in range(I):
            idx += x[i] * pk.strides[i] + z[i] * pk.strides[I + i]
        return pk.table[idx, 0]
    order_into(pk, x, z, rx, u, out, sc, feat)
    for k in range(I):
        i = out[k]
        if x[i] > z[i]:
            return i
    return -1


@njit(cache=True)
def allocate_into(order, x, servers, z):
    rem = servers
    for k in range(order.size):
        i = order[k]
        zi = x[i] if x[i] < rem else rem
        z[i] = zi
        rem -= zi


@njit(cache=True)
def needs_u3(pk):
    return pk.kind == K_ROUTING


@njit(cache=True)
def fill_rates(rates, x, rx):
    for i in range(x.size):
        rx[i] = rates[i, x[i]]


@njit(cache=True)
def pre_step(x, lam, Lam, rates, kappa, servers, pk, u1, u2, u3, order, z, rx, sc, feat):
    """One uniformized transition of a preemptive system, in place.

    Returns (event code, class).  z holds the allocation used for the step.
    """
    I = x.size
    fill_rates(rates, x, rx)
    order_into(pk, x, z, rx, u3, order, sc, feat)
    allocate_into(order, x, servers, z)
    t = u1 * Lam
    acc = 0.0
    for i in range(I):
        acc += lam[i]
        if t < acc:
            if x[i] < kappa[i]:
                x[i] += 1
                return EV_ARRIVAL, i
            return EV_BLOCKED, i
    dep = 0.0
    for i in range(I):
        dep += z[i] * rx[i]
    if t < acc + dep:
        target = u2 * dep
        cum = 0.0
        last = -1
        for i in range(I):
            if z[i] > 0:
                last = i
                cum += z[i] * rx[i]
                if target < cum:
                    x[i] -= 1
                    return EV_DEPARTURE, i
        x[last] -= 1
        return EV_DEPARTURE, last
    return EV_PHANTOM, -1


@njit(cache=True)
def np_resolve(x, z, servers, rates, pk, u3, order, rx, sc, feat, heads):
    """Fill free servers from the queues according to the policy."""
    I = x.size
    busy = 0
    for i in range(I):
        busy += z[i]
    while busy < servers:
        waiting = False
        for i in range(I):
            if x[i] > z[i]:
                waiting = True
        if not waiting:
            return
        fill_rates(rates, x, rx)
        c = np_admit(pk, x, z, rx, u3, heads, order, sc, feat)
        z[c] += 1
        busy += 1


@njit(cache=True)
def np_step(x, z, lam, Lam, rates, kappa, servers, pk, u1, u2, u3, order, rx, sc, feat,
            heads):
    """One uniformized transition of a non-preemptive system, in place."""
    I = x.size
    fill_rates(rates, x, rx)
    t = u1 * Lam
    acc = 0.0
    for i in range(I):
        acc += lam[i]
        if t < acc:
            if x[i] < kappa[i]:
                x[i] += 1
                np_resolve(x, z, servers, rates, pk, u3, order, rx, sc, feat, heads)
                return EV_ARRIVAL, i
            return EV_BLOCKED, i
    dep = 0.0
    for i in range(I):
        dep += z[i] * rx[i]
    if t < acc + dep:
        target = u2 * dep
        cum = 0.0
        c = -1
        for i in range(I):
            if z[i] > 0:
                c = i
                cum += z[i] * rx[i]
                if target < cum:
                    break
        x[c] -= 1
        z[c] -= 1
        np_resolve(x, z, servers, rates, pk, u3, order, rx, sc, feat, heads)
        return EV_DEPARTURE, c
    return EV_PHANTOM, -1


@njit(cache=True)
def cost_of(x, h, lam, b, kappa, Lam):
    c = 0.0
    for i in range(x.size):
        c += h[i] * x[i]
        if x[i] >= kappa[i]:
            c += lam[i] * b[i]
    return c / Lam
