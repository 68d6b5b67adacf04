"""Scheduling policies.

Three families share one interface: a tabular map from states to priority
orders (produced by the exact solver), a classifier-backed index policy
(produced by the learning layer) and the named benchmark index rules.
Every policy can be compiled into a :class:`~slowq._kernels.PolicyKernel`
for the jitted simulators.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from itertools import permutations
from pathlib import Path

import numpy as np
from numba import njit

from . import _kernels as K
from .model import ConfigError, SystemConfig, greedy_allocation

__all__ = [
    "Policy",
    "TabularPolicy",
    "NpTabularPolicy",
    "ClassifierPolicy",
    "BenchmarkPolicy",
    "BENCHMARKS",
    "priority_order",
    "allocate",
    "np_admit",
    "tabulate",
    "action_weights",
    "load_policy",
    "save_policy",
]

BENCHMARKS = {
    "cmu_zero": K.R_CMU0,
    "cmu_state": K.R_CMUX,
    "max_pressure": K.R_MAXP,
    "sqf": K.R_SQF,
    "lqf": K.R_LQF,
}
_OTHER_RULES = ("routing", "fcfs", "static")


def _ranked(scores) -> tuple:
    # stable sort on negated scores keeps the smaller index first on ties
    return tuple(int(i) for i in sorted(range(len(scores)), key=lambda i: -scores[i]))


class Policy:
    """Base class; subclasses implement ``priority_order`` and ``kernel``."""

    randomized = False

    def priority_order(self, cfg: SystemConfig, x, rng=None) -> tuple:
        raise NotImplementedError

    def np_admit(self, cfg: SystemConfig, x, z, rng=None, heads=None) -> int:
        x = np.asarray(x)
        z = np.asarray(z)
        waiting = [i for i in range(cfg.n_classes) if x[i] > z[i]]
        if z.sum() >= cfg.servers or not waiting:
            raise ValueError(f"state x={x.tolist()} z={z.tolist()} is not actionable")
        if len(waiting) == 1:
            return waiting[0]
        order = self._admission_order(cfg, x, z, rng)
        return next(i for i in order if x[i] > z[i])

    def _admission_order(self, cfg, x, z, rng):
        return self.priority_order(cfg, x, rng)

    def kernel(self, cfg: SystemConfig) -> K.PolicyKernel:
        raise NotImplementedError

    def describe(self) -> str:
        return type(self).__name__


@dataclass(frozen=True, eq=False)
class BenchmarkPolicy(Policy):
    """Named index rule.

    ``rule`` is one of cmu_zero, cmu_state, max_pressure, sqf, lqf, routing,
    fcfs or static.  ``p`` is the routing probability of class 1 and
    ``order`` the fixed order of the static rule.
    """

    rule: str
    p: float = 0.5
    order: tuple | None = None

    def __post_init__(self):
        if self.rule not in BENCHMARKS and self.rule not in _OTHER_RULES:
            raise ConfigError(f"unknown benchmark rule {self.rule!r}")
        if not 0.0 <= self.p <= 1.0:
            raise ConfigError("routing probability must lie in [0, 1]")
        if self.rule == "static" and self.order is None:
            raise ConfigError("static rule needs an order")

    @property
    def randomized(self):
        return self.rule == "routing"

    def _check(self, cfg):
        if self.rule == "fcfs" and cfg.mode != "nonpreemptive":
            raise ConfigError("FCFS needs arrival order and is non-preemptive only")
        if self.rule == "routing" and cfg.n_classes != 2:
            raise ConfigError("probabilistic routing is defined for two classes only")
        if self.rule == "static" and sorted(self.order) != list(range(cfg.n_classes)):
            raise ConfigError("static order must be a permutation of the classes")

    def priority_order(self, cfg, x, rng=None):
        self._check(cfg)
        x = np.asarray(x)
        I = cfg.n_classes
        rule = self.rule
        if rule == "static":
            return tuple(self.order)
        if rule == "fcfs":
            return tuple(range(I))
        if rule == "routing":
            if x[0] > 0 and x[1] > 0:
                u = rng.random() if rng is not None else 0.0
                return (0, 1) if u < self.p else (1, 0)
            return (0, 1)
        f = [float(np.interp(x[i], np.arange(cfg.rates.shape[1]), cfg.rates[i]))
             for i in range(I)]
        if rule == "cmu_zero":
            s = [cfg.h[i] * cfg.rates[i, 0] for i in range(I)]
        elif rule == "cmu_state":
            s = [cfg.h[i] * f[i] for i in range(I)]
        elif rule == "max_pressure":
            s = [cfg.h[i] * x[i] * f[i] for i in range(I)]
        elif rule == "sqf":
            s = [-float(x[i]) for i in range(I)]
        else:
            s = [float(x[i]) for i in range(I)]
        return _ranked(s)

    def np_admit(self, cfg, x, z, rng=None, heads=None):
        if self.rule == "fcfs":
            x = np.asarray(x)
            z = np.asarray(z)
            if heads is None:
                raise ValueError("FCFS admission needs head-of-line arrival times")
            waiting = [i for i in range(cfg.n_classes) if x[i] > z[i]]
            return min(waiting, key=lambda i: (heads[i], i))
        if self.rule == "routing":
            self._check(cfg)
            w = [x[i] > z[i] for i in range(2)]
            if w[0] and w[1]:
                u = rng.random() if rng is not None else 0.0
                return 0 if u < self.p else 1
            return 0 if w[0] else 1
        return super().np_admit(cfg, x, z, rng, heads)

    def kernel(self, cfg):
        self._check(cfg)
        I = cfg.n_classes
        rate0 = cfg.rates[:, 0]
        if self.rule in BENCHMARKS:
            return K.empty_kernel(K.K_SCORE, BENCHMARKS[self.rule], I, cfg.h, rate0)
        if self.rule == "routing":
            return K.empty_kernel(K.K_ROUTING, 0, I, cfg.h, rate0, p=self.p)
        if self.rule == "fcfs":
            return K.empty_kernel(K.K_FCFS, 0, I, cfg.h, rate0)
        return K.empty_kernel(K.K_SCORE, K.R_STATIC, I, cfg.h, rate0, static=self.order)

    def describe(self):
        if self.rule == "routing":
            return f"routing(p={self.p:g})"
        if self.rule == "static":
            return "static(" + ",".join(str(i + 1) for i in self.order) + ")"
        return self.rule


def strict_priority(order) -> BenchmarkPolicy:
    """Fixed strict priority, classes given 0-based, highest first."""
    return BenchmarkPolicy("static", order=tuple(int(i) for i in order))


@dataclass(frozen=True, eq=False)
class TabularPolicy(Policy):
    """Priority order per state, rows in mixed-radix state order."""

    orders: np.ndarray

    def __post_init__(self):
        orders = np.ascontiguousarray(self.orders, dtype=np.int64)
        orders.setflags(write=False)
        object.__setattr__(self, "orders", orders)

    def _check(self, cfg):
        if self.orders.shape != (cfg.n_states, cfg.n_classes):
            raise ConfigError(
                f"tabular policy has shape {self.orders.shape}, "
                f"config needs {(cfg.n_states, cfg.n_classes)}"
            )

    def priority_order(self, cfg, x, rng=None):
        self._check(cfg)
        # halves round up, as in the compiled kernel
        idx = cfg.encode(np.floor(np.asarray(x, dtype=float) + 0.5).astype(np.int64))
        return tuple(int(i) for i in self.orders[idx])

    def kernel(self, cfg):
        self._check(cfg)
        base = K.empty_kernel(K.K_TABLE, 0, cfg.n_classes, cfg.h, cfg.rates[:, 0])
        return base._replace(table=self.orders, strides=cfg.strides.copy())

    def to_csv(self, cfg) -> str:
        self._check(cfg)
        I = cfg.n_classes
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"x_{i + 1}" for i in range(I)] + [f"p_{k + 1}" for k in range(I)])
        for x, o in zip(cfg.all_states(), self.orders):
            w.writerow([int(v) for v in x] + [int(v) + 1 for v in o])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, cfg) -> "TabularPolicy":
        rows = list(csv.reader(io.StringIO(text)))
        I = cfg.n_classes
        orders = np.zeros((cfg.n_states, I), dtype=np.int64)
        seen = np.zeros(cfg.n_states, dtype=bool)
        for row in rows[1:]:
            vals = [int(v) for v in row]
            idx = cfg.encode(cfg.check_state(vals[:I]))
            orders[idx] = np.array(vals[I:]) - 1
            seen[idx] = True
        if not seen.all():
            raise ConfigError("tabular policy does not cover every state")
        return cls(orders)


@dataclass(frozen=True, eq=False)
class NpTabularPolicy(Policy):
    """Admission decision per enlarged state (x, z) of a non-preemptive system.

    ``actions`` is indexed by the mixed-radix code of (x_1..x_I, z_1..z_I) with
    radices kappa_i+1 for x and min(C, kappa_i)+1 for z; -1 marks states
    that are not actionable.
    """

    actions: np.ndarray
    strides: np.ndarray

    def priority_order(self, cfg, x, rng=None):
        raise ConfigError("a non-preemptive table defines admissions only")

    def np_admit(self, cfg, x, z, rng=None, heads=None):
        idx = int(np.dot(np.concatenate([x, z]), self.strides))
        a = int(self.actions[idx])
        if a < 0:
            raise ValueError("state is not actionable")
        return a

    def to_csv(self, cfg) -> str:
        """Actionable states only: x_i, z_i, then the admitted class (1-based)."""
        I = cfg.n_classes
        dims = [int(k) + 1 for k in cfg.kappa] + [min(int(cfg.servers), int(k)) + 1
                                                  for k in cfg.kappa]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"x_{i + 1}" for i in range(I)] + [f"z_{i + 1}" for i in range(I)]
                   + ["admit"])
        for idx in np.flatnonzero(self.actions >= 0):
            s = np.unravel_index(int(idx), dims)
            w.writerow([int(v) for v in s] + [int(self.actions[idx]) + 1])
        return buf.getvalue()

    def kernel(self, cfg):
        base = K.empty_kernel(K.K_NPTABLE, 0, cfg.n_classes, cfg.h, cfg.rates[:, 0])
        return base._replace(table=np.ascontiguousarray(self.actions, dtype=np.int64)[:, None],
                             strides=np.asarray(self.strides, dtype=np.int64))


@dataclass(frozen=True, eq=False)
class ClassifierPolicy(Policy):
    """Index policy backed by a fitted polynomial logistic classifier.

    With ``nonpreemptive`` the classifier features include the in-service
    counts z after x.
    """

    model: object
    nonpreemptive: bool = False

    def priority_order(self, cfg, x, rng=None, z=None):
        x = np.asarray(x, dtype=float)
        if self.nonpreemptive:
            z = np.zeros_like(x) if z is None else np.asarray(z, dtype=float)
            feats = np.concatenate([x, z])[None, :]
        else:
            feats = x[None, :]
        return tuple(int(i) for i in self.model.rank(feats)[0])

    def _admission_order(self, cfg, x, z, rng):
        return self.priority_order(cfg, x, rng, z=z)

    def kernel(self, cfg):
        p = self.model.kernel_params()
        base = K.empty_kernel(K.K_CLASSIFIER, 0, cfg.n_classes, cfg.h, cfg.rates[:, 0])
        return base._replace(exps=p["exps"], scale=p["scale"], fmean=p["mean"],
                             fstd=p["std"], weights=p["weights"])

    def describe(self):
        return "classifier"


# ------------------------------------------------------------------ functions


def priority_order(pol: Policy, cfg: SystemConfig, x, rng=None) -> tuple:
    return pol.priority_order(cfg, cfg.check_state(x), rng)


def allocate(order, cfg: SystemConfig, x) -> np.ndarray:
    """Greedy allocation: serve classes in priority order up to capacity."""
    return greedy_allocation(order, cfg.check_state(x), cfg.servers)


def np_admit(pol: Policy, cfg: SystemConfig, x, z, rng=None, heads=None) -> int:
    return pol.np_admit(cfg, np.asarray(x), np.asarray(z), rng, heads)


@njit(cache=True)
def _tabulate(pk, X, rates, out):
    n, I = X.shape
    rx = np.empty(I)
    sc = np.empty(I)
    feat = np.empty(max(1, pk.exps.shape[0]))
    order = np.empty(I, dtype=np.int64)
    z = np.zeros(I, dtype=np.int64)
    for s in range(n):
        x = X[s]
        for i in range(I):
            rx[i] = rates[i, x[i]]
        K.order_into(pk, x, z, rx, 0.0, order, sc, feat)
        out[s] = order


def tabulate(pol: Policy, cfg: SystemConfig) -> np.ndarray:
    """Priority order at every state, shape (n_states, I)."""
    if isinstance(pol, TabularPolicy):
        pol._check(cfg)
        return pol.orders.copy()
    out = np.empty((cfg.n_states, cfg.n_classes), dtype=np.int64)
    _tabulate(pol.kernel(cfg), cfg.all_states(), cfg.rates, out)
    return out


def action_weights(pol: Policy, cfg: SystemConfig):
    """Permutation list and per-state probabilities over it, for exact evaluation."""
    I = cfg.n_classes
    perms = np.array(list(permutations(range(I))), dtype=np.int64)
    code = {tuple(p): k for k, p in enumerate(perms.tolist())}
    W = np.zeros((cfg.n_states, len(perms)))
    if isinstance(pol, BenchmarkPolicy) and pol.rule == "routing":
        pol._check(cfg)
        X = cfg.all_states()
        both = (X[:, 0] > 0) & (X[:, 1] > 0)
        W[both, code[(0, 1)]] = pol.p
        W[both, code[(1, 0)]] = 1.0 - pol.p
        W[~both, code[(0, 1)]] = 1.0
        return perms, W
    orders = tabulate(pol, cfg)
    radix = np.array([I ** (I - 1 - k) for k in range(I)])
    lookup = {int(np.dot(p, radix)): k for k, p in enumerate(perms)}
    cols = np.array([lookup[int(v)] for v in orders @ radix])
    W[np.arange(cfg.n_states), cols] = 1.0
    return perms, W


# ------------------------------------------------------------------ IO


def save_policy(pol: Policy, cfg: SystemConfig, path) -> None:
    path = Path(path)
    if isinstance(pol, TabularPolicy):
        path.write_text(pol.to_csv(cfg))
    elif isinstance(pol, ClassifierPolicy):
        d = pol.model.to_dict()
        d["nonpreemptive"] = pol.nonpreemptive
        path.write_text(json.dumps(d, indent=2, sort_keys=True) + "\n")
    elif isinstance(pol, BenchmarkPolicy):
        path.write_text(json.dumps({"kind": "benchmark", "rule": pol.rule, "p": pol.p,
                                    "order": pol.order}, sort_keys=True) + "\n")
    else:
        raise ConfigError(f"cannot serialize {type(pol).__name__}")


def load_policy(spec: str, cfg: SystemConfig, p: float = 0.5) -> Policy:
    """Benchmark name, tabular CSV path, or classifier/benchmark JSON path."""
    name = spec.lower()
    if name in BENCHMARKS or name in ("fcfs", "routing"):
        return BenchmarkPolicy(name, p=p)
    path = Path(spec)
    if not path.exists():
        raise ConfigError(f"unknown policy {spec!r}")
    text = path.read_text()
    if path.suffix == ".csv":
        return TabularPolicy.from_csv(text, cfg)
    d = json.loads(text)
    if d.get("kind") == "benchmark":
        order = tuple(d["order"]) if d.get("order") is not None else None
        return BenchmarkPolicy(d["rule"], d.get("p", 0.5), order)
    from .learn.classifier import PolynomialLogisticClassifier

    model = PolynomialLogisticClassifier.from_dict(d)
    return ClassifierPolicy(model, bool(d.get("nonpreemptive", False)))
