"""Event-driven simulation with wait-dependent lognormal lengths of stay."""
import numpy as np
from numba import njit, prange

from .. import _kernels as K


@njit(cache=True)
def _start(c, s, t, warmup, qbuf, qhead, qlen, z, srv_end, srv_cls, alpha, beta, wcap, sd,
           expo, wait_sum, admitted, r):
    cap = qbuf.shape[1]
    a = qbuf[c, qhead[c]]
    qhead[c] = (qhead[c] + 1) % cap
    qlen[c] -= 1
    w = t - a
    m = alpha[c] + beta[c] * min(w, wcap[c])
    if expo:
        dur = np.random.exponential(m)
    else:
        s2 = np.log1p((sd[c] / m) ** 2)
        dur = np.random.lognormal(np.log(m) - 0.5 * s2, np.sqrt(s2))
    srv_end[s] = t + dur
    srv_cls[s] = c
    z[c] += 1
    if t >= warmup:
        wait_sum[r, c] += w
        admitted[r, c] += 1


@njit(parallel=True, cache=True)
def wait_batch(seeds, horizon, warmup, lam, kappa, servers, alpha, beta, wcap, sd, expo,
               rates, pk):
    n = seeds.size
    I = lam.size
    wait_sum = np.zeros((n, I))
    admitted = np.zeros((n, I), dtype=np.int64)
    blocked = np.zeros((n, I), dtype=np.int64)
    arrivals = np.zeros((n, I), dtype=np.int64)
    area_x = np.zeros((n, I))
    area_q = np.zeros((n, I))
    kmax = 0
    for i in range(I):
        if kappa[i] > kmax:
            kmax = kappa[i]
    for r in prange(n):
        np.random.seed(seeds[r])
        qbuf = np.zeros((I, kmax + 1))
        qhead = np.zeros(I, dtype=np.int64)
        qlen = np.zeros(I, dtype=np.int64)
        x = np.zeros(I, dtype=np.int64)
        z = np.zeros(I, dtype=np.int64)
        srv_end = np.full(servers, np.inf)
        srv_cls = np.full(servers, -1, dtype=np.int64)
        next_arr = np.full(I, np.inf)
        heads = np.empty(I)
        order = np.empty(I, dtype=np.int64)
        rx = np.empty(I)
        sc = np.empty(I)
        feat = np.empty(max(1, pk.exps.shape[0]))
        draw3 = K.needs_u3(pk)
        cap = kmax + 1
        for i in range(I):
            if lam[i] > 0:
                next_arr[i] = np.random.exponential(1.0 / lam[i])
        t = 0.0
        while True:
            s_dep = -1
            t_dep = np.inf
            for s in range(servers):
                if srv_end[s] < t_dep:
                    t_dep = srv_end[s]
                    s_dep = s
            c_arr = -1
            t_arr = np.inf
            for i in range(I):
                if next_arr[i] < t_arr:
                    t_arr = next_arr[i]
                    c_arr = i
            tn = min(t_dep, t_arr)
            lo = max(t, warmup)
            hi = min(tn, horizon)
            if hi > lo:
                for i in range(I):
                    area_x[r, i] += (hi - lo) * x[i]
                    area_q[r, i] += (hi - lo) * qlen[i]
            if tn >= horizon:
                break
            t = tn
            if t_arr <= t_dep:
                i = c_arr
                next_arr[i] = t + np.random.exponential(1.0 / lam[i])
                if t >= warmup:
                    arrivals[r, i] += 1
                if x[i] >= kappa[i]:
                    if t >= warmup:
                        blocked[r, i] += 1
                    continue
                x[i] += 1
                qbuf[i, (qhead[i] + qlen[i]) % cap] = t
                qlen[i] += 1
                busy = 0
                for j in range(I):
                    busy += z[j]
                if busy < servers:
                    for s in range(servers):
                        if srv_cls[s] < 0:
                            _start(i, s, t, warmup, qbuf, qhead, qlen, z, srv_end, srv_cls,
                                   alpha, beta, wcap, sd, expo, wait_sum, admitted, r)
                            break
            else:
                s = s_dep
                c = srv_cls[s]
                x[c] -= 1
                z[c] -= 1
                srv_end[s] = np.inf
                srv_cls[s] = -1
                waiting = False
                for j in range(I):
                    if qlen[j] > 0:
                        waiting = True
                if waiting:
                    for j in range(I):
                        heads[j] = qbuf[j, qhead[j]] if qlen[j] > 0 else np.inf
                        rx[j] = rates[j, x[j]]
                    u = np.random.random() if draw3 else 0.0
                    a = K.np_admit(pk, x, z, rx, u, heads, order, sc, feat)
                    _start(a, s, t, warmup, qbuf, qhead, qlen, z, srv_end, srv_cls,
                           alpha, beta, wcap, sd, expo, wait_sum, admitted, r)
    return wait_sum, admitted, blocked, arrivals, area_x, area_q
