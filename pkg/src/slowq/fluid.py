"""Deterministic fluid model of the slowdown queue.

Fluid mass evolves as dx_i/dt = lambda_i 1{x_i < kappa_i} - f_i(x_i) Z_i(x),
integrated by explicit Euler with projection onto the box [0, kappa].  At a
blocking boundary the velocity is min(0, lambda_i - f_i Z_i), which is the
sliding (Filippov) solution there: mass that would cross kappa stays put.

Rates between integer counts are interpolated linearly from the config's
rate table, which is exact for linear slowdown.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit, prange

from . import _kernels as K
from .model import ConfigError, LinearSlowdown, NumericalError, SystemConfig
from .policy import BenchmarkPolicy, ClassifierPolicy, Policy

__all__ = [
    "DT",
    "EQ_TOL",
    "SETTLE_STEPS",
    "HORIZON",
    "SAME_POINT",
    "EqualSplit",
    "Equilibrium",
    "FluidTrajectory",
    "fluid_rhs",
    "integrate",
    "two_class_equilibria",
    "classify_point",
    "is_locally_stable",
    "find_equilibria",
    "fluid_value_difference",
    "fluid_policy_iteration",
    "vector_field_export",
    "fluid_cost",
]

DT = 1e-3
EQ_TOL = 1e-6
SETTLE_STEPS = 1000
HORIZON = 1e4
SAME_POINT = 1e-3
CHATTER_TOL = 1e-4
CALM_WINDOWS = 10

STATIONARY = "stationary"
PSEUDO = "pseudo"
NONCONVERGENT = "nonconvergent"


class EqualSplit:
    """Fluid-only rule: every class gets an equal share of capacity.

    Capacity a class cannot use (its mass is below its share) is passed on
    to the others by water-filling, so no capacity idles while mass waits.
    """

    def describe(self):
        return "equal_split"


# ------------------------------------------------------------------ kernels


@njit(cache=True)
def _rate_at(rates, kappa, i, xi):
    if xi >= kappa[i]:
        return rates[i, kappa[i]]
    if xi <= 0.0:
        return rates[i, 0]
    k = int(xi)
    w = xi - k
    return (1.0 - w) * rates[i, k] + w * rates[i, k + 1]


@njit(cache=True)
def _waterfill(x, servers, z):
    I = x.size
    for i in range(I):
        z[i] = 0.0
    rem = float(servers)
    active = 0
    for i in range(I):
        if x[i] > 0.0:
            active += 1
    # each pass saturates at least one class or spends the remainder
    while rem > 1e-15 and active > 0:
        share = rem / active
        spent = 0.0
        nxt = 0
        for i in range(I):
            need = x[i] - z[i]
            if need <= 0.0:
                continue
            if need <= share:
                z[i] += need
                spent += need
            else:
                z[i] += share
                spent += share
                nxt += 1
        rem -= spent
        if nxt == active:
            break
        active = nxt


@njit(cache=True)
def _velocity(x, lam, kappa, rates, servers, pk, split, v, raw, z, rx, order, sc, feat, zi):
    I = x.size
    for i in range(I):
        rx[i] = _rate_at(rates, kappa, i, x[i])
    if split:
        _waterfill(x, servers, z)
    else:
        K.order_into(pk, x, zi, rx, 0.0, order, sc, feat)
        rem = float(servers)
        for k in range(I):
            i = order[k]
            zk = x[i] if x[i] < rem else rem
            if zk < 0.0:
                zk = 0.0
            z[i] = zk
            rem -= zk
    for i in range(I):
        out = rx[i] * z[i]
        if x[i] < kappa[i]:
            raw[i] = lam[i] - out
            v[i] = raw[i]
        else:
            raw[i] = -out
            d = lam[i] - out
            v[i] = d if d < 0.0 else 0.0


@njit(cache=True)
def _run(x, dt, max_steps, settle, eq_tol, lam, kappa, rates, servers, pk, split, h, Lam,
         state, rec, every):
    """Advance x in place for at most max_steps Euler steps.

    state = [quiet_steps, steps_done, cost_integral, window means (I),
    window sums (I), calm_windows] carries the settle bookkeeping across
    calls.  Returns 1 once settled, 0 otherwise; rows of rec are filled every
    ``every`` steps.

    Besides a small velocity, two consecutive windows of ``settle`` steps
    whose mean positions agree also count as settled, as do CALM_WINDOWS
    windows in a row whose means move less than CHATTER_TOL.  That catches
    chattering on switching surfaces, where the Euler velocity stays O(1)
    but the path is at rest; x is then replaced by the window mean.
    """
    I = x.size
    v = np.empty(I)
    raw = np.empty(I)
    z = np.empty(I)
    rx = np.empty(I)
    order = np.empty(I, dtype=np.int64)
    sc = np.empty(I)
    feat = np.empty(max(1, pk.exps.shape[0]))
    zi = np.zeros(I)
    nrec = 0
    cap = rec.shape[0]
    quiet = int(state[0])
    done = int(state[1])
    for s in range(max_steps):
        if every > 0 and done % every == 0 and nrec < cap:
            for i in range(I):
                rec[nrec, i] = x[i]
            nrec += 1
        _velocity(x, lam, kappa, rates, servers, pk, split, v, raw, z, rx, order, sc,
                  feat, zi)
        c = 0.0
        nv = 0.0
        for i in range(I):
            c += h[i] * x[i]
            nv += v[i] * v[i]
        state[2] += c / Lam * dt
        nv = math.sqrt(nv)
        for i in range(I):
            y = x[i] + dt * v[i]
            if y < 0.0:
                y = 0.0
            elif y > kappa[i]:
                y = kappa[i]
            x[i] = y
            state[3 + I + i] += y
        done += 1
        quiet = quiet + 1 if nv < eq_tol else 0
        settled = quiet >= settle
        if done % settle == 0:
            disp = 0.0
            for i in range(I):
                m = state[3 + I + i] / settle
                state[3 + I + i] = 0.0
                d = abs(m - state[3 + i])
                if d > disp:
                    disp = d
                state[3 + i] = m
            if done > settle:
                calm = state[3 + 2 * I] + 1 if disp < CHATTER_TOL else 0.0
                state[3 + 2 * I] = calm
                if not settled and (disp < eq_tol * settle * dt or calm >= CALM_WINDOWS):
                    settled = True
                    for i in range(I):
                        x[i] = state[3 + i]
        if settled:
            state[0] = quiet
            state[1] = done
            return 1, nrec
    state[0] = quiet
    state[1] = done
    return 0, nrec


@njit(parallel=True, cache=True)
def _limits(X0, dt, max_steps, settle, eq_tol, lam, kappa, rates, servers, pk, split, h,
            Lam):
    m, I = X0.shape
    ends = np.empty((m, I))
    ok = np.zeros(m, dtype=np.bool_)
    area = np.empty(m)
    t_end = np.empty(m)
    for r in prange(m):
        x = X0[r].copy()
        state = np.zeros(4 + 2 * I)
        for i in range(I):
            state[3 + i] = x[i]
        rec = np.empty((0, I))
        flag, _ = _run(x, dt, max_steps, settle, eq_tol, lam, kappa, rates, servers, pk,
                       split, h, Lam, state, rec, 0)
        ends[r] = x
        ok[r] = flag == 1
        area[r] = state[2]
        t_end[r] = state[1] * dt
    return ends, ok, area, t_end


@njit(cache=True)
def _field(P, lam, kappa, rates, servers, pk, split, out):
    m, I = P.shape
    v = np.empty(I)
    raw = np.empty(I)
    z = np.empty(I)
    rx = np.empty(I)
    order = np.empty(I, dtype=np.int64)
    sc = np.empty(I)
    feat = np.empty(max(1, pk.exps.shape[0]))
    zi = np.zeros(I)
    for r in range(m):
        x = P[r].copy()
        _velocity(x, lam, kappa, rates, servers, pk, split, v, raw, z, rx, order, sc,
                  feat, zi)
        for i in range(I):
            out[r, i] = v[i]
            out[r, I + i] = raw[i]


# ------------------------------------------------------------------ helpers


def _pk(cfg, pol):
    if isinstance(pol, EqualSplit):
        return K.empty_kernel(K.K_SCORE, K.R_STATIC, cfg.n_classes, cfg.h, cfg.rates[:, 0]), True
    if not isinstance(pol, Policy):
        raise ConfigError("fluid policy must be a Policy or EqualSplit")
    if isinstance(pol, BenchmarkPolicy) and pol.rule == "fcfs":
        raise ConfigError("FCFS has no fluid counterpart")
    return pol.kernel(cfg), False


def _args(cfg):
    return (cfg.lam, cfg.kappa, cfg.rates, int(cfg.servers))


def _box(cfg, x):
    x = np.asarray(x, dtype=float)
    if x.shape != (cfg.n_classes,):
        raise ConfigError(f"fluid state must have {cfg.n_classes} coordinates")
    if np.any(~np.isfinite(x)) or np.any(x < 0) or np.any(x > cfg.kappa):
        raise ConfigError("fluid state outside [0, kappa]")
    return x


def fluid_cost(cfg: SystemConfig, x) -> float:
    """Holding part of the stage cost on fluid states, per uniformized step."""
    return float(np.dot(cfg.h, x) / cfg.Lambda)


def _field_at(cfg, pol, P):
    pk, split = _pk(cfg, pol)
    P = np.ascontiguousarray(np.atleast_2d(P), dtype=float)
    out = np.empty((P.shape[0], 2 * cfg.n_classes))
    _field(P, *_args(cfg), pk, split, out)
    return out


def fluid_rhs(cfg: SystemConfig, pol, x) -> np.ndarray:
    """Projected fluid velocity at x."""
    x = _box(cfg, x)
    return _field_at(cfg, pol, x)[0, : cfg.n_classes]


# ------------------------------------------------------------------ trajectories


@dataclass
class FluidTrajectory:
    times: np.ndarray
    points: np.ndarray        # (len(times), I)
    settled: bool
    end: np.ndarray
    end_time: float
    cost_integral: float      # int_0^end c(x(t)) dt

    def to_csv(self) -> str:
        I = self.points.shape[1]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + [f"x_{i + 1}" for i in range(I)])
        for t, p in zip(self.times, self.points):
            w.writerow([f"{t:.6g}"] + [f"{v:.6g}" for v in p])
        return buf.getvalue()


def integrate(cfg: SystemConfig, pol, x0, dt: float = DT, horizon: float = HORIZON,
              eq_tol: float = EQ_TOL, settle_steps: int = SETTLE_STEPS,
              sample_every: int = 1, stop_when_settled: bool = True) -> FluidTrajectory:
    """Euler path from x0, recorded every ``sample_every`` steps.

    Stops early once the velocity norm stays below ``eq_tol`` for
    ``settle_steps`` steps (or the mean velocity over such a window does),
    unless ``stop_when_settled`` is false.
    """
    if dt <= 0 or horizon <= 0:
        raise ConfigError("dt and horizon must be positive")
    if sample_every < 1 or settle_steps < 1:
        raise ConfigError("sample_every and settle_steps must be >= 1")
    x = _box(cfg, x0).copy()
    pk, split = _pk(cfg, pol)
    I = cfg.n_classes
    total = int(math.ceil(horizon / dt))
    state = np.zeros(4 + 2 * I)
    state[3:3 + I] = x
    chunks = []
    settled = False
    chunk = 200_000
    while int(state[1]) < total:
        n = min(chunk, total - int(state[1]))
        rec = np.empty((n // sample_every + 1, I))
        flag, nrec = _run(x, float(dt), n, int(settle_steps), float(eq_tol), *_args(cfg), pk,
                          split, cfg.h, cfg.Lambda, state, rec, int(sample_every))
        chunks.append(rec[:nrec])
        if not np.all(np.isfinite(x)):
            raise NumericalError("fluid trajectory diverged")
        if flag:
            settled = True
            if stop_when_settled:
                break
            state[0] = 0
    steps = int(state[1])
    pts = np.concatenate(chunks + [x[None, :]]) if chunks else x[None, :]
    times = np.arange(pts.shape[0] - 1, dtype=float) * sample_every * dt
    times = np.append(times, steps * dt)
    if times.size >= 2 and times[-1] == times[-2]:
        times, pts = times[:-1], pts[:-1]
    return FluidTrajectory(times, pts, settled, x.copy(), steps * dt, float(state[2]))


def _limits_of(cfg, pol, X0, dt=DT, horizon=HORIZON, eq_tol=EQ_TOL,
               settle_steps=SETTLE_STEPS):
    pk, split = _pk(cfg, pol)
    X0 = np.ascontiguousarray(np.atleast_2d(X0), dtype=float)
    return _limits(X0, float(dt), int(math.ceil(horizon / dt)), int(settle_steps),
                   float(eq_tol), *_args(cfg), pk, split, cfg.h, cfg.Lambda)


# ------------------------------------------------------------------ equilibria


@dataclass
class Equilibrium:
    point: np.ndarray
    kind: str                         # stationary, pseudo or nonconvergent
    cost: float
    stable: bool | None = None
    basin: list = field(default_factory=list)    # start points that settled here

    def to_dict(self) -> dict:
        d = {
            "point": [float(f"{v:.6g}") for v in self.point],
            "kind": self.kind,
            "cost": float(f"{self.cost:.6g}"),
            "stable": self.stable,
        }
        if self.basin:
            d["basin_size"] = len(self.basin)
        return d


def classify_point(cfg: SystemConfig, pol, x, eq_tol: float = 1e-4) -> str:
    """Stationary when the raw field vanishes, pseudo when a boundary holds it."""
    x = _box(cfg, x)
    I = cfg.n_classes
    out = _field_at(cfg, pol, x)[0]
    v, raw = out[:I], out[I:]
    if np.linalg.norm(v) >= eq_tol:
        return NONCONVERGENT
    at_cap = np.isclose(x, cfg.kappa, rtol=0, atol=1e-9)
    pushed = at_cap & (raw + cfg.lam > eq_tol)
    return PSEUDO if pushed.any() else STATIONARY


def two_class_equilibria(cfg: SystemConfig) -> list:
    """Closed-form equilibria of the two-class linear model under priority to class 1.

    Returns the interior point (r1, r2) and the boundary points (r1, kappa2)
    and (kappa1, kappa2), with r_i the smaller root of a_i r^2 - mu_i r +
    lambda_i = 0.
    """
    if cfg.n_classes != 2:
        raise ConfigError("closed-form equilibria need exactly two classes")
    if not all(isinstance(c.slowdown, LinearSlowdown) for c in cfg.classes):
        raise ConfigError("closed-form equilibria need linear slowdown")
    C = cfg.servers
    failed = []
    roots = []
    for i, c in enumerate(cfg.classes):
        mu, a, lam, kap = c.slowdown.mu, c.slowdown.a, c.lam, c.kappa
        if mu - a * C <= 0 or lam / (mu - a * C) > C:
            failed.append(f"class {i + 1}: lambda/(mu - a*C) <= C")
        if not mu > a * kap:
            failed.append(f"class {i + 1}: mu > a*kappa")
        if kap < C:
            failed.append(f"class {i + 1}: kappa >= C")
        disc = mu * mu - 4 * a * lam
        if disc < 0:
            failed.append(f"class {i + 1}: mu^2 >= 4*a*lambda")
            continue
        # stable form of the smaller root; equals lambda/mu when a = 0
        roots.append(2 * lam / (mu + math.sqrt(disc)))
    if failed:
        raise ConfigError("assumptions violated: " + "; ".join(failed))
    k1, k2 = float(cfg.kappa[0]), float(cfg.kappa[1])
    pts = [(roots[0], roots[1], STATIONARY), (roots[0], k2, PSEUDO), (k1, k2, PSEUDO)]
    return [Equilibrium(np.array([p, q]), kind, fluid_cost(cfg, (p, q)))
            for p, q, kind in pts]


def is_locally_stable(cfg: SystemConfig, pol, point, eps: float = 0.1,
                      tol: float = SAME_POINT, **kw) -> bool:
    """Every +-eps coordinate perturbation (clipped to the box) flows back to point."""
    point = _box(cfg, point)
    starts = []
    for i in range(cfg.n_classes):
        for s in (-eps, eps):
            y = point.copy()
            y[i] = min(max(y[i] + s, 0.0), cfg.kappa[i])
            starts.append(y)
    ends, ok, _, _ = _limits_of(cfg, pol, np.array(starts), **kw)
    return bool(ok.all() and np.all(np.abs(ends - point).max(axis=1) < tol))


def _cluster(points, tol=SAME_POINT):
    reps, labels = [], []
    for p in points:
        for k, r in enumerate(reps):
            if np.abs(p - r).max() < tol:
                labels.append(k)
                break
        else:
            reps.append(p)
            labels.append(len(reps) - 1)
    return reps, np.array(labels, dtype=int)


def find_equilibria(cfg: SystemConfig, pol, grid_step: float | None = None, starts=None,
                    check_stability: bool = True, **kw) -> list:
    """Limit points of trajectories started on a grid (or at given starts).

    Results are sorted by cost; trajectories that do not settle are gathered
    into a single nonconvergent entry.
    """
    if starts is None:
        if grid_step is None:
            grid_step = max(1.0, float(cfg.kappa.max()) / 10)
        axes = [np.unique(np.append(np.arange(0.0, k, grid_step), float(k)))
                for k in cfg.kappa]
        starts = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, cfg.n_classes)
    starts = np.asarray(starts, dtype=float)
    ends, ok, _, _ = _limits_of(cfg, pol, starts, **kw)
    out = []
    reps, labels = _cluster(ends[ok])
    good = starts[ok]
    for k, r in enumerate(reps):
        kind = classify_point(cfg, pol, r)
        # at rest while the field is not zero: a sliding point on a switching surface
        eq = Equilibrium(r, kind if kind != NONCONVERGENT else PSEUDO, fluid_cost(cfg, r),
                         basin=[tuple(s) for s in good[labels == k]])
        if check_stability:
            eq.stable = is_locally_stable(cfg, pol, r, **kw)
        out.append(eq)
    out.sort(key=lambda e: (e.cost, tuple(e.point)))
    if (~ok).any():
        bad = starts[~ok]
        out.append(Equilibrium(ends[~ok][0], NONCONVERGENT, float("nan"), False,
                               [tuple(s) for s in bad]))
    return out


# ------------------------------------------------------------------ value differences


def fluid_value_difference(cfg: SystemConfig, pol, x, dt: float = DT,
                           horizon: float = HORIZON, eq_tol: float = EQ_TOL,
                           settle_steps: int = SETTLE_STEPS) -> np.ndarray:
    """Fluid approximation of D_i(x) for every class.

    If the paths from x and from every x - e_i settle at one point, D_i is
    the integrated cost gap between the paths from x and x - e_i.  Otherwise
    D_i is 1 for the classes whose x - e_i path reaches the cheapest of the
    limits of the x - e_i paths and 0 for the rest.
    """
    x = _box(cfg, x)
    I = cfg.n_classes
    if np.any(x < 1):
        raise ConfigError("fluid value differences need x_i >= 1")
    X0 = np.vstack([x, x - np.eye(I)])
    ends, ok, area, t_end = _limits_of(cfg, pol, X0, dt, horizon, eq_tol, settle_steps)
    if not ok.all():
        raise NumericalError("fluid trajectory did not settle within the horizon")
    same = np.abs(ends - ends[0]).max(axis=1) < SAME_POINT
    if same.all():
        # cost above the limit, integrated until settling
        excess = area - np.array([fluid_cost(cfg, e) for e in ends]) * t_end
        return excess[0] - excess[1:]
    costs = np.array([fluid_cost(cfg, e) for e in ends[1:]])
    best = costs.min()
    cheapest = [e for e, c in zip(ends[1:], costs) if c <= best + 1e-12]
    D = np.zeros(I)
    for i in range(I):
        if any(np.abs(ends[1 + i] - p).max() < SAME_POINT for p in cheapest):
            D[i] = 1.0
    return D


def fluid_policy_iteration(cfg: SystemConfig, N: int | None = None, n_max: int = 3,
                           seed: int = 0, pi0=None, classifier_params: dict | None = None,
                           return_history: bool = False, **fluid_kw):
    """Policy iteration on fluid value differences, for initializing the learner.

    States whose paths do not settle are left out of the training set.
    """
    from . import _rng
    from .learn.classifier import PolynomialLogisticClassifier
    from .learn.sampling import default_sample_size, sample_states

    if n_max < 1:
        raise ConfigError("n_max must be >= 1")
    N = default_sample_size(cfg) if N is None else int(N)
    states = sample_states(cfg, N, _rng.generator(seed, "fluid-sample"))
    pol = pi0 if pi0 is not None else BenchmarkPolicy("cmu_zero")
    params = dict(classifier_params or {})
    history = []
    for it in range(n_max):
        feats, labels, skipped = [], [], 0
        for x in states:
            try:
                D = fluid_value_difference(cfg, pol, x, **fluid_kw)
            except NumericalError:
                skipped += 1
                continue
            R = np.array([cfg.rates[i, x[i]] * D[i] for i in range(cfg.n_classes)])
            labels.append(_top(R))
            feats.append(x)
        if not feats:
            raise NumericalError("no fluid path settled; cannot train the fluid policy")
        clf = PolynomialLogisticClassifier(n_classes=cfg.n_classes,
                                           coord_scale=tuple(float(k) for k in cfg.kappa),
                                           **params)
        clf.fit(np.array(feats, dtype=float), np.array(labels))
        pol = ClassifierPolicy(clf)
        history.append({"iteration": it + 1, "states": len(feats), "skipped": skipped})
    return (pol, history) if return_history else pol


def _top(R):
    # first index attaining the max: ties go to the smaller class
    return int(np.argmax(R))


# ------------------------------------------------------------------ export


def vector_field_export(cfg: SystemConfig, pol, grid_step: float = 1.0) -> str:
    """CSV of the projected velocity on a grid over the two-class box."""
    if cfg.n_classes != 2:
        raise ConfigError("vector field export needs two classes")
    if grid_step <= 0:
        raise ConfigError("grid_step must be positive")
    a1 = np.unique(np.append(np.arange(0.0, cfg.kappa[0], grid_step), float(cfg.kappa[0])))
    a2 = np.unique(np.append(np.arange(0.0, cfg.kappa[1], grid_step), float(cfg.kappa[1])))
    P = np.stack(np.meshgrid(a1, a2, indexing="ij"), -1).reshape(-1, 2)
    V = _field_at(cfg, pol, P)[:, :2]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x_1", "x_2", "dx_1", "dx_2"])
    for p, v in zip(P, V):
        w.writerow([f"{p[0]:.6g}", f"{p[1]:.6g}", f"{v[0]:.6g}", f"{v[1]:.6g}"])
    return buf.getvalue()

