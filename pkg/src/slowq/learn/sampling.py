"""State sampling for the learners."""
from __future__ import annotations

import math
from itertools import product

import numpy as np

from ..model import ConfigError, SystemConfig

MAX_DEFAULT_N = 5000


def eligible_count(cfg: SystemConfig) -> int:
    """States with every x_i >= 1."""
    return int(np.prod(cfg.kappa.astype(object)))


def default_sample_size(cfg: SystemConfig, frac: float = 0.05) -> int:
    return int(max(1, min(MAX_DEFAULT_N, math.ceil(frac * eligible_count(cfg)))))


def default_iterations(cfg: SystemConfig, N: int) -> int:
    """5 rounds, or 15 when the sample covers under 0.1% of the state space."""
    return 15 if N < 1e-3 * cfg.n_states else 5


def sample_states(cfg: SystemConfig, N: int, rng: np.random.Generator) -> np.ndarray:
    """N distinct states drawn uniformly from {x : 1 <= x_i <= kappa_i}, in state order."""
    M = eligible_count(cfg)
    N = int(N)
    if N < 1:
        raise ConfigError("need N >= 1")
    if N > M:
        raise ConfigError(f"N={N} exceeds the {M} states with every x_i >= 1")
    shape = tuple(int(k) for k in cfg.kappa)
    if N == M:
        idx = np.arange(M)
    else:
        idx = np.sort(rng.choice(M, size=N, replace=False))
    X = np.stack(np.unravel_index(idx, shape), axis=1).astype(np.int64) + 1
    return X


# ------------------------------------------------------------------ non-preemptive


def _z_vectors(cfg):
    cap = [min(int(cfg.servers), int(k)) for k in cfg.kappa]
    for z in product(*[range(c + 1) for c in cap]):
        if sum(z) < cfg.servers:
            yield np.array(z, dtype=np.int64)


def actionable_count(cfg: SystemConfig) -> int:
    """(x, z) with a free server and at least two classes waiting."""
    total = 0
    for z in _z_vectors(cfg):
        wait = [int(k) - int(v) for k, v in zip(cfg.kappa, z)]   # ways for class i to wait
        # polynomial in t: coefficient of t^m counts states with m waiting classes
        poly = [1]
        for w in wait:
            nxt = [0] * (len(poly) + 1)
            for m, c in enumerate(poly):
                nxt[m] += c
                nxt[m + 1] += c * w
            poly = nxt
        total += sum(poly[2:])
    return total


def default_np_sample_size(cfg: SystemConfig, frac: float = 0.05) -> int:
    return int(max(1, min(MAX_DEFAULT_N, math.ceil(frac * actionable_count(cfg)))))


def sample_np_states(cfg: SystemConfig, N: int, rng: np.random.Generator,
                     max_draws: int | None = None) -> list:
    """N distinct actionable (x, z) pairs with at least two waiting classes.

    Rejection sampling from the (x, z) box keeps the draw uniform over the
    accepted set.  Pairs come back sorted.
    """
    if cfg.n_classes < 2:
        raise ConfigError("non-preemptive learning needs two or more classes")
    M = actionable_count(cfg)
    N = int(N)
    if N < 1 or N > M:
        raise ConfigError(f"need 1 <= N <= {M} actionable states")
    I = cfg.n_classes
    zcap = np.minimum(cfg.servers, cfg.kappa)
    seen = set()
    max_draws = max_draws or 1000 * N + 10**5
    draws = 0
    while len(seen) < N:
        B = 4 * (N - len(seen)) + 64
        x = rng.integers(0, cfg.kappa + 1, size=(B, I))
        z = rng.integers(0, zcap + 1, size=(B, I))
        ok = (np.all(z <= x, axis=1) & (z.sum(axis=1) < cfg.servers)
              & ((x > z).sum(axis=1) >= 2))
        for xi, zi in zip(x[ok], z[ok]):
            seen.add(tuple(int(v) for v in xi) + tuple(int(v) for v in zi))
            if len(seen) == N:
                break
        draws += B
        if draws > max_draws:
            raise ConfigError("too few actionable states for rejection sampling")
    out = sorted(seen)
    return [(np.array(s[:I], dtype=np.int64), np.array(s[I:], dtype=np.int64)) for s in out]
