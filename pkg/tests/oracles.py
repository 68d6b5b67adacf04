"""Reference computations built without the package's solvers or kernels.

Everything here works on the continuous-time generator directly (dense
linear algebra), so it shares no code path with relative value iteration on
the uniformized chain.
"""
from itertools import product

import numpy as np
from scipy.optimize import brentq, minimize_scalar


def _rate(cfg_dict, i, x_i):
    c = cfg_dict["classes"][i]
    s = c["slowdown"]
    if s["kind"] == "linear":
        return s["mu"] - s.get("a", 0.0) * x_i
    return s["rates"][x_i]


def _states(kappa):
    return list(product(*[range(k + 1) for k in kappa]))


def _greedy(order, x, C):
    z = [0] * len(x)
    left = C
    for i in order:
        z[i] = min(x[i], left)
        left -= z[i]
    return z


def preemptive_generator(d, order_fn):
    """Generator and cost-rate vector for a plain-dict config and a state -> order rule."""
    kappa = [c["kappa"] for c in d["classes"]]
    lam = [c["lambda"] for c in d["classes"]]
    h = [c.get("h", 1.0) for c in d["classes"]]
    b = [c.get("b", 0.0) for c in d["classes"]]
    C = d["servers"]
    S = _states(kappa)
    index = {s: k for k, s in enumerate(S)}
    n = len(S)
    Q = np.zeros((n, n))
    cost = np.zeros(n)
    for k, x in enumerate(S):
        z = _greedy(order_fn(x), x, C)
        for i in range(len(x)):
            cost[k] += h[i] * x[i] + (lam[i] * b[i] if x[i] == kappa[i] else 0.0)
            if x[i] < kappa[i] and lam[i] > 0:
                y = list(x)
                y[i] += 1
                Q[k, index[tuple(y)]] += lam[i]
            if z[i] > 0:
                y = list(x)
                y[i] -= 1
                Q[k, index[tuple(y)]] += z[i] * _rate(d, i, x[i])
        Q[k, k] = -Q[k].sum()
    return S, Q, cost


def stationary(Q):
    n = Q.shape[0]
    A = np.vstack([Q.T, np.ones(n)])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    return pi


def gain_and_values(S, Q, cost):
    """Average cost per unit time and relative values pinned at the first state."""
    pi = stationary(Q)
    g = float(pi @ cost)
    n = len(S)
    # -Q v = cost - g with v[0] = 0
    A = np.vstack([-Q, np.eye(n)[0]])
    rhs = np.concatenate([cost - g, [0.0]])
    v, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    return g, dict(zip(S, v))


def nonpreemptive_gain(d, admit_fn):
    """Gain of a non-preemptive admission rule on the (x, z) chain.

    ``admit_fn(x, z)`` returns the class admitted at a decision point.
    Decisions are instantaneous, so only post-decision states are kept.
    """
    kappa = [c["kappa"] for c in d["classes"]]
    lam = [c["lambda"] for c in d["classes"]]
    h = [c.get("h", 1.0) for c in d["classes"]]
    b = [c.get("b", 0.0) for c in d["classes"]]
    C = d["servers"]
    I = len(kappa)

    def settle(x, z):
        x, z = list(x), list(z)
        while sum(z) < C and any(x[i] > z[i] for i in range(I)):
            j = admit_fn(tuple(x), tuple(z))
            assert x[j] > z[j]
            z[j] += 1
        return tuple(x), tuple(z)

    start = settle((0,) * I, (0,) * I)
    seen = {start: 0}
    todo = [start]
    edges = []
    while todo:
        x, z = todo.pop()
        out = []
        for i in range(I):
            if x[i] < kappa[i] and lam[i] > 0:
                y = list(x)
                y[i] += 1
                out.append((lam[i], settle(y, z)))
            if z[i] > 0:
                y, w = list(x), list(z)
                y[i] -= 1
                w[i] -= 1
                out.append((z[i] * _rate(d, i, x[i]), settle(y, w)))
        for _, s in out:
            if s not in seen:
                seen[s] = len(seen)
                todo.append(s)
        edges.append(((x, z), out))
    n = len(seen)
    Q = np.zeros((n, n))
    cost = np.zeros(n)
    for s, out in edges:
        k = seen[s]
        x = s[0]
        cost[k] = sum(h[i] * x[i] + (lam[i] * b[i] if x[i] == kappa[i] else 0.0)
                      for i in range(I))
        for r, t in out:
            Q[k, seen[t]] += r
        Q[k, k] -= Q[k].sum()
    return float(stationary(Q) @ cost)


def interior_fluid_root(lam, mu, a, C):
    """x with lam = x (mu - a x) on (0, C), found by bracketing."""
    return brentq(lambda x: lam - x * (mu - a * x), 0.0, float(C), xtol=1e-13)


def wait_argmin(base, slope, cap, t):
    """Numerical argmin over w >= 0 of |w + g(w) - t|."""
    def obj(w):
        return abs(w + base + slope * min(w, cap) - t)
    hi = max(t, 1.0)
    return minimize_scalar(obj, bounds=(0.0, hi), method="bounded",
                           options={"xatol": 1e-10}).x


def vhat_loop(S, i, j):
    """Variance estimate of R_i - R_j written out term by term."""
    n = S.shape[0]
    d = [S[k, i] - S[k, j] for k in range(n)]
    m = sum(d) / n
    return sum((v - m) ** 2 for v in d) / (n - 1) ** 2
