"""Long-run cost estimation, the wait-dependent simulator and event traces."""
from __future__ import annotations

import csv
import io

import numpy as np

from .. import _rng
from ..model import ConfigError, SystemConfig, WaitDerivedSlowdown
from ..policy import Policy
from . import _core, _wait
from ._stats import SimStats

EVENT_NAMES = {0: "phantom", 1: "arrival", 2: "blocked", 3: "departure"}


def _warmup(horizon, warmup):
    warmup = int(0.2 * horizon) if warmup is None else warmup
    if not 0 <= warmup < horizon:
        raise ConfigError("need 0 <= warmup < horizon")
    return warmup


def simulate_long_run(cfg: SystemConfig, pol: Policy, horizon: int = 10**6,
                      warmup: int | None = None, reps: int = 10, seed: int = 0) -> SimStats:
    """Time-average cost of a policy from independent runs of the uniformized chain.

    ``horizon`` and ``warmup`` count uniformized steps; warmup defaults to
    20% of the horizon.  Waits follow from Little's law with the admitted
    arrival rate.
    """
    warmup = _warmup(horizon, warmup)
    seeds = _rng.rep_seeds(seed, "long-run", (), 0, reps)
    cost, xs, qs, full, blocked = _core.longrun_batch(
        seeds, int(horizon), int(warmup), cfg.mode == "nonpreemptive", cfg.lam, cfg.Lambda,
        cfg.rates, cfg.kappa, cfg.servers, cfg.h, cfg.b, pol.kernel(cfg))
    admitted = cfg.lam * (1.0 - full)
    with np.errstate(divide="ignore", invalid="ignore"):
        waits = np.where(admitted > 0, qs / admitted, 0.0)
        tot = admitted.sum(axis=1)
        overall = np.where(tot > 0, qs.sum(axis=1) / tot, 0.0)
    return SimStats(cost, qs, xs, waits, overall, blocked, full,
                    extra={"horizon": int(horizon), "warmup": int(warmup)})


def _wait_params(cfg):
    specs = []
    for c in cfg.classes:
        if not isinstance(c.slowdown, WaitDerivedSlowdown):
            raise ConfigError("wait-dependent simulation needs wait-derived service for "
                              "every class")
        specs.append(c.slowdown.spec)
    return (np.array([s.base_los for s in specs]), np.array([s.delay_slope for s in specs]),
            np.array([s.wait_cap for s in specs]), np.array([s.los_std for s in specs]))


def simulate_wait_dependent(cfg: SystemConfig, pol: Policy, horizon: float = 20000.0,
                            warmup: float | None = None, reps: int = 10, seed: int = 0,
                            service: str = "lognormal") -> SimStats:
    """Non-preemptive event simulation with service drawn at admission.

    A customer who waited w gets a lognormal length of stay with mean
    ``base_los + delay_slope*min(w, wait_cap)`` and std ``los_std``.
    ``service="exponential"`` swaps in an exponential with the same mean.
    """
    if cfg.mode != "nonpreemptive":
        raise ConfigError("wait-dependent simulation is non-preemptive")
    if service not in ("lognormal", "exponential"):
        raise ConfigError(f"unknown service distribution {service!r}")
    warmup = 0.2 * horizon if warmup is None else float(warmup)
    if not 0 <= warmup < horizon:
        raise ConfigError("need 0 <= warmup < horizon")
    alpha, beta, wcap, sd = _wait_params(cfg)
    seeds = _rng.rep_seeds(seed, "wait-sim", (), 0, reps)
    ws, adm, blocked, arr, ax, aq = _wait.wait_batch(
        seeds, float(horizon), warmup, cfg.lam, cfg.kappa, cfg.servers, alpha, beta, wcap,
        sd, service == "exponential", cfg.rates, pol.kernel(cfg))
    span = horizon - warmup
    with np.errstate(divide="ignore", invalid="ignore"):
        waits = np.where(adm > 0, ws / np.maximum(adm, 1), 0.0)
        overall = ws.sum(axis=1) / np.maximum(adm.sum(axis=1), 1)
        frac = np.where(arr > 0, blocked / np.maximum(arr, 1), 0.0)
    xs = ax / span
    cost = xs @ cfg.h
    return SimStats(cost, aq / span, xs, waits, overall, blocked, frac,
                    extra={"horizon": float(horizon), "warmup": warmup,
                           "admitted": adm, "arrivals": arr})


def trace_events(cfg: SystemConfig, pol: Policy, steps: int, seed: int = 0) -> str:
    """CSV log of one run: step, system, event, class, state (and z when non-preemptive)."""
    seeds = _rng.rep_seeds(seed, "long-run", (), 0, 1)
    nonpre = cfg.mode == "nonpreemptive"
    ev, cls_, X, Z = _core.trace_run(int(seeds[0]), int(steps), nonpre, cfg.lam, cfg.Lambda,
                                     cfg.rates, cfg.kappa, cfg.servers, pol.kernel(cfg))
    I = cfg.n_classes
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    head = ["step", "system", "event", "class"] + [f"x_{i + 1}" for i in range(I)]
    if nonpre:
        head += [f"z_{i + 1}" for i in range(I)]
    w.writerow(head)
    for k in range(int(steps)):
        row = [k, 0, EVENT_NAMES[int(ev[k])], int(cls_[k]) + 1 if cls_[k] >= 0 else ""]
        row += [int(v) for v in X[k]]
        if nonpre:
            row += [int(v) for v in Z[k]]
        w.writerow(row)
    return buf.getvalue()
