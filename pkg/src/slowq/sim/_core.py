"""Jitted replication loops.

Every replication reseeds numba's generator from its own seed, so results
are identical whatever the thread count or scheduling order.
"""
import numpy as np
from numba import njit, prange

from .. import _kernels as K


@njit(cache=True)
def _same(a, b):
    for i in range(a.size):
        if a[i] != b[i]:
            return False
    return True


@njit(cache=True)
def coupled_rep(x0, seed, T, lam, Lam, rates, kappa, servers, h, b, pk, D):
    """One coupled replication from x0 and every x0 - e_j.  Returns (steps, truncated)."""
    np.random.seed(seed)
    I = x0.size
    S = np.empty((I + 1, I), dtype=np.int64)
    for m in range(I + 1):
        for i in range(I):
            S[m, i] = x0[i]
    for j in range(I):
        S[j + 1, j] -= 1
    merged = np.zeros(I + 1, dtype=np.bool_)
    merged[0] = True
    order = np.empty(I, dtype=np.int64)
    z = np.zeros(I, dtype=np.int64)
    rx = np.empty(I)
    sc = np.empty(I)
    feat = np.empty(max(1, pk.exps.shape[0]))
    draw3 = K.needs_u3(pk)
    for j in range(I):
        D[j] = 0.0
    k = 0
    while True:
        left = 0
        for m in range(1, I + 1):
            if not merged[m]:
                left += 1
        if left == 0:
            return k, False
        if k >= T:
            return k, True
        c0 = K.cost_of(S[0], h, lam, b, kappa, Lam)
        for j in range(I):
            if not merged[j + 1]:
                D[j] += c0 - K.cost_of(S[j + 1], h, lam, b, kappa, Lam)
        u1 = np.random.random()
        u2 = np.random.random()
        u3 = np.random.random() if draw3 else 0.0
        for m in range(I + 1):
            if not merged[m] or m == 0:
                K.pre_step(S[m], lam, Lam, rates, kappa, servers, pk, u1, u2, u3,
                           order, z, rx, sc, feat)
        for m in range(1, I + 1):
            if not merged[m] and _same(S[m], S[0]):
                merged[m] = True
        k += 1


@njit(parallel=True, cache=True)
def coupled_batch(X0, seeds, T, lam, Lam, rates, kappa, servers, h, b, pk):
    """Replications for many states; seeds has shape (states, reps)."""
    m, n = seeds.shape
    I = X0.shape[1]
    D = np.empty((m, n, I))
    L = np.empty((m, n), dtype=np.int64)
    trunc = np.empty((m, n), dtype=np.bool_)
    for task in prange(m * n):
        s = task // n
        r = task % n
        steps, tr = coupled_rep(X0[s], seeds[s, r], T, lam, Lam, rates, kappa, servers,
                                h, b, pk, D[s, r])
        L[s, r] = steps
        trunc[s, r] = tr
    return D, L, trunc


@njit(parallel=True, cache=True)
def regen_batch(x0, target, seeds, T, gain, lam, rates, kappa, servers, h, b, pk):
    """Regenerative estimates, each system simulated on its own clock.

    Every system replays the same uniform stream but draws events from its
    own total rate, so paths decorrelate once the states differ.  Each jump
    accrues (cost rate - gain) times the mean holding time in the state.
    Returns D, jump counts, simulated time and truncation flags.
    """
    n = seeds.size
    I = x0.size
    D = np.empty((n, I))
    L = np.empty(n, dtype=np.int64)
    S = np.empty(n)
    trunc = np.zeros(n, dtype=np.bool_)
    for r in prange(n):
        order = np.empty(I, dtype=np.int64)
        z = np.zeros(I, dtype=np.int64)
        rx = np.empty(I)
        sc = np.empty(I)
        feat = np.empty(max(1, pk.exps.shape[0]))
        acc = np.zeros(I + 1)
        longest = 0
        slowest = 0.0
        draw3 = K.needs_u3(pk)
        x = np.empty(I, dtype=np.int64)
        for m in range(I + 1):
            for i in range(I):
                x[i] = x0[i]
            if m > 0:
                x[m - 1] -= 1
            np.random.seed(seeds[r])
            k = 0
            clock = 0.0
            while not _same(x, target):
                if k >= T:
                    trunc[r] = True
                    break
                u1 = np.random.random()
                u2 = np.random.random()
                u3 = np.random.random() if draw3 else 0.0
                K.fill_rates(rates, x, rx)
                K.order_into(pk, x, z, rx, u3, order, sc, feat)
                K.allocate_into(order, x, servers, z)
                arr = 0.0
                for i in range(I):
                    if x[i] < kappa[i]:
                        arr += lam[i]
                dep = 0.0
                for i in range(I):
                    dep += z[i] * rx[i]
                total = arr + dep
                if total <= 0.0:
                    trunc[r] = True
                    break
                acc[m] += (K.cost_of(x, h, lam, b, kappa, 1.0) - gain) / total
                clock += 1.0 / total
                t = u1 * total
                if t < arr:
                    cum = 0.0
                    for i in range(I):
                        if x[i] < kappa[i]:
                            cum += lam[i]
                            if t < cum:
                                x[i] += 1
                                break
                else:
                    target_d = u2 * dep
                    cum = 0.0
                    last = -1
                    done = False
                    for i in range(I):
                        if z[i] > 0:
                            last = i
                            cum += z[i] * rx[i]
                            if target_d < cum:
                                x[i] -= 1
                                done = True
                                break
                    if not done:
                        x[last] -= 1
                k += 1
            if k > longest:
                longest = k
            if clock > slowest:
                slowest = clock
        for j in range(I):
            D[r, j] = acc[0] - acc[j + 1]
        L[r] = longest
        S[r] = slowest
    return D, L, S, trunc


@njit(cache=True)
def np_coupled_rep(x0, z_list, seed, T, lam, Lam, rates, kappa, servers, h, b, pk, D):
    """Coupled non-preemptive replication; system m starts at (x0, z_list[m])."""
    np.random.seed(seed)
    M = z_list.shape[0]
    I = x0.size
    X = np.empty((M, I), dtype=np.int64)
    Z = np.empty((M, I), dtype=np.int64)
    order = np.empty(I, dtype=np.int64)
    rx = np.empty(I)
    sc = np.empty(I)
    feat = np.empty(max(1, pk.exps.shape[0]))
    heads = np.zeros(I)
    draw3 = K.needs_u3(pk)
    u0 = np.random.random() if draw3 else 0.0
    for m in range(M):
        for i in range(I):
            X[m, i] = x0[i]
            Z[m, i] = z_list[m, i]
        K.np_resolve(X[m], Z[m], servers, rates, pk, u0, order, rx, sc, feat, heads)
    merged = np.zeros(M, dtype=np.bool_)
    merged[0] = True
    for m in range(M):
        D[m] = 0.0
    for m in range(1, M):
        if _same(X[m], X[0]) and _same(Z[m], Z[0]):
            merged[m] = True
    k = 0
    while True:
        left = 0
        for m in range(1, M):
            if not merged[m]:
                left += 1
        if left == 0:
            return k, False
        if k >= T:
            return k, True
        c0 = K.cost_of(X[0], h, lam, b, kappa, Lam)
        for m in range(1, M):
            if not merged[m]:
                D[m] += c0 - K.cost_of(X[m], h, lam, b, kappa, Lam)
        u1 = np.random.random()
        u2 = np.random.random()
        u3 = np.random.random() if draw3 else 0.0
        for m in range(M):
            if m == 0 or not merged[m]:
                K.np_step(X[m], Z[m], lam, Lam, rates, kappa, servers, pk, u1, u2, u3,
                          order, rx, sc, feat, heads)
        for m in range(1, M):
            if not merged[m] and _same(X[m], X[0]) and _same(Z[m], Z[0]):
                merged[m] = True
        k += 1


@njit(parallel=True, cache=True)
def np_coupled_batch(X0, ZL, seeds, T, lam, Lam, rates, kappa, servers, h, b, pk):
    """ZL has shape (states, systems, I); unused system slots repeat slot 0."""
    m, n = seeds.shape
    M = ZL.shape[1]
    D = np.empty((m, n, M))
    L = np.empty((m, n), dtype=np.int64)
    trunc = np.empty((m, n), dtype=np.bool_)
    for task in prange(m * n):
        s = task // n
        r = task % n
        steps, tr = np_coupled_rep(X0[s], ZL[s], seeds[s, r], T, lam, Lam, rates, kappa,
                                   servers, h, b, pk, D[s, r])
        L[s, r] = steps
        trunc[s, r] = tr
    return D, L, trunc


@njit(parallel=True, cache=True)
def longrun_batch(seeds, horizon, warmup, nonpre, lam, Lam, rates, kappa, servers, h, b,
                  pk):
    """Uniformized long-run runs from the empty state.

    Returns per-replication arrays: time-average cost per unit time, mean
    customers present, mean waiting, fraction of steps at kappa, blocked counts.
    """
    n = seeds.size
    I = lam.size
    cost = np.zeros(n)
    xs = np.zeros((n, I))
    qs = np.zeros((n, I))
    full = np.zeros((n, I))
    blocked = np.zeros((n, I), dtype=np.int64)
    for r in prange(n):
        np.random.seed(seeds[r])
        x = np.zeros(I, dtype=np.int64)
        z = np.zeros(I, dtype=np.int64)
        xprev = np.zeros(I, dtype=np.int64)
        order = np.empty(I, dtype=np.int64)
        rx = np.empty(I)
        sc = np.empty(I)
        feat = np.empty(max(1, pk.exps.shape[0]))
        heads = np.zeros(I)
        draw3 = K.needs_u3(pk)
        for k in range(horizon):
            u1 = np.random.random()
            u2 = np.random.random()
            u3 = np.random.random() if draw3 else 0.0
            if nonpre:
                if k >= warmup:
                    for i in range(I):
                        xs[r, i] += x[i]
                        qs[r, i] += x[i] - z[i]
                        if x[i] >= kappa[i]:
                            full[r, i] += 1.0
                    cost[r] += K.cost_of(x, h, lam, b, kappa, 1.0)
                ev, c = K.np_step(x, z, lam, Lam, rates, kappa, servers, pk, u1, u2, u3,
                                  order, rx, sc, feat, heads)
            else:
                for i in range(I):
                    xprev[i] = x[i]
                ev, c = K.pre_step(x, lam, Lam, rates, kappa, servers, pk, u1, u2, u3,
                                   order, z, rx, sc, feat)
                if k >= warmup:
                    # z is the allocation in force at xprev
                    for i in range(I):
                        xs[r, i] += xprev[i]
                        qs[r, i] += xprev[i] - z[i]
                        if xprev[i] >= kappa[i]:
                            full[r, i] += 1.0
                    cost[r] += K.cost_of(xprev, h, lam, b, kappa, 1.0)
            if k >= warmup and ev == K.EV_BLOCKED:
                blocked[r, c] += 1
        m = horizon - warmup
        cost[r] /= m
        for i in range(I):
            xs[r, i] /= m
            qs[r, i] /= m
            full[r, i] /= m
    return cost, xs, qs, full, blocked


@njit(cache=True)
def trace_run(seed, steps, nonpre, lam, Lam, rates, kappa, servers, pk):
    """Event log of a single run from the empty state: (event, class, state after)."""
    np.random.seed(seed)
    I = lam.size
    ev_out = np.empty(steps, dtype=np.int64)
    cls_out = np.empty(steps, dtype=np.int64)
    x_out = np.empty((steps, I), dtype=np.int64)
    z_out = np.empty((steps, I), dtype=np.int64)
    x = np.zeros(I, dtype=np.int64)
    z = np.zeros(I, dtype=np.int64)
    order = np.empty(I, dtype=np.int64)
    rx = np.empty(I)
    sc = np.empty(I)
    feat = np.empty(max(1, pk.exps.shape[0]))
    heads = np.zeros(I)
    draw3 = K.needs_u3(pk)
    for k in range(steps):
        u1 = np.random.random()
        u2 = np.random.random()
        u3 = np.random.random() if draw3 else 0.0
        if nonpre:
            ev, c = K.np_step(x, z, lam, Lam, rates, kappa, servers, pk, u1, u2, u3,
                              order, rx, sc, feat, heads)
        else:
            ev, c = K.pre_step(x, lam, Lam, rates, kappa, servers, pk, u1, u2, u3,
                               order, z, rx, sc, feat)
        ev_out[k] = ev
        cls_out[k] = c
        x_out[k] = x
        z_out[k] = z
    return ev_out, cls_out, x_out, z_out
