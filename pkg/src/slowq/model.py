"""Problem instances for multiclass multiserver queues with congestion slowdown.

A :class:`SystemConfig` bundles the per-class arrival rates, slowdown curves,
blocking thresholds and costs together with the server count.  Everything the
solvers and simulators need (rate tables, uniformization constant, stage cost,
state encoding) is derived from it once and cached.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from itertools import permutations
from pathlib import Path
from typing import Iterable, Sequence, Union

import jsonschema
import numpy as np

__all__ = [
    "ConfigError",
    "StateSpaceTooLarge",
    "NumericalError",
    "LinearSlowdown",
    "TableSlowdown",
    "WaitServiceSpec",
    "WaitDerivedSlowdown",
    "ClassSpec",
    "SystemConfig",
    "service_rate",
    "uniformization_rate",
    "stage_cost",
    "feasible_allocations",
    "is_feasible_allocation",
    "wait_to_state_rates",
    "solve_wait",
    "load_config",
    "dump_config",
    "DEFAULT_RATE_FLOOR",
]

DEFAULT_RATE_FLOOR = 1e-6


class ConfigError(ValueError):
    """Invalid problem instance or input."""


class StateSpaceTooLarge(RuntimeError):
    """The requested computation would exceed the state-space cap."""


class NumericalError(RuntimeError):
    """An iterative method failed to converge or produced non-finite values."""

    def __init__(self, msg, residual=None):
        super().__init__(msg)
        self.residual = residual


def _check_finite_nonneg(name, value):
    value = float(value)
    if not math.isfinite(value) or value < 0:
        raise ConfigError(f"{name} must be finite and non-negative, got {value}")
    return value


# ---------------------------------------------------------------- slowdown


@dataclass(frozen=True)
class LinearSlowdown:
    """f(x) = mu - a*x."""

    mu: float
    a: float = 0.0

    def __post_init__(self):
        _check_finite_nonneg("mu", self.mu)
        _check_finite_nonneg("a", self.a)

    def table(self, kappa: int, lam: float) -> np.ndarray:
        return self.mu - self.a * np.arange(kappa + 1, dtype=float)

    def to_dict(self):
        return {"kind": "linear", "mu": self.mu, "a": self.a}


@dataclass(frozen=True)
class TableSlowdown:
    """Explicit rates for x = 0..kappa."""

    rates: tuple

    def __post_init__(self):
        rates = tuple(float(r) for r in self.rates)
        object.__setattr__(self, "rates", rates)
        if not rates:
            raise ConfigError("rate table is empty")
        for r in rates:
            _check_finite_nonneg("rate", r)
        if any(b > a + 1e-12 for a, b in zip(rates, rates[1:])):
            raise ConfigError("rate table must be non-increasing")

    def table(self, kappa: int, lam: float) -> np.ndarray:
        if len(self.rates) != kappa + 1:
            raise ConfigError(
                f"rate table has {len(self.rates)} entries, expected kappa+1={kappa + 1}"
            )
        return np.asarray(self.rates, dtype=float)

    def to_dict(self):
        return {"kind": "table", "rates": list(self.rates)}


@dataclass(frozen=True)
class WaitServiceSpec:
    """Wait-dependent lognormal length of stay.

    Mean service time after waiting ``w`` is ``base_los + delay_slope*min(w, wait_cap)``
    and ``los_std`` is its standard deviation.
    """

    base_los: float
    delay_slope: float
    wait_cap: float
    los_std: float

    def __post_init__(self):
        for name in ("base_los", "delay_slope", "wait_cap", "los_std"):
            _check_finite_nonneg(name, getattr(self, name))
        if self.base_los <= 0:
            raise ConfigError("base_los must be positive")
        if self.los_std <= 0:
            raise ConfigError("los_std must be positive")

    def mean_service(self, w):
        return self.base_los + self.delay_slope * np.minimum(w, self.wait_cap)

    def lognormal_params(self, w):
        """(mu, sigma) of the underlying normal, matching mean and std."""
        m = self.mean_service(w)
        s2 = np.log1p((self.los_std / m) ** 2)
        return np.log(m) - s2 / 2.0, np.sqrt(s2)


def solve_wait(spec: WaitServiceSpec, t):
    """argmin over w >= 0 of |w + g(w) - t| for the piecewise-linear g.

    w + g(w) is strictly increasing, so the minimizer is the root when one
    exists and 0 otherwise.
    """
    t = np.asarray(t, dtype=float)
    a, b, cap = spec.base_los, spec.delay_slope, spec.wait_cap
    knee = a + (1.0 + b) * cap
    w = np.where(t <= knee, (t - a) / (1.0 + b), t - a - b * cap)
    return np.maximum(w, 0.0)


@dataclass(frozen=True)
class WaitDerivedSlowdown:
    """Rates implied by a wait-dependent service model through Little's law."""

    spec: WaitServiceSpec

    def table(self, kappa: int, lam: float) -> np.ndarray:
        return np.asarray(wait_to_state_rates(self.spec, lam, kappa).rates)

    def to_dict(self):
        d = {"kind": "wait"}
        d.update(
            base_los=self.spec.base_los,
            delay_slope=self.spec.delay_slope,
            wait_cap=self.spec.wait_cap,
            los_std=self.spec.los_std,
        )
        return d


Slowdown = Union[LinearSlowdown, TableSlowdown, WaitDerivedSlowdown]


def wait_to_state_rates(spec: WaitServiceSpec, lam: float, kappa: int) -> TableSlowdown:
    """Convert a wait-dependent service model to state-dependent rates.

    For each count x the implied wait solves w + g(w) = x/lam; the rate is the
    inverse of the mean service time g at that wait.  The empty-system rate
    copies the x=1 value.
    """
    if not lam > 0:
        raise ConfigError("wait-derived rates need a positive arrival rate")
    x = np.arange(1, kappa + 1, dtype=float)
    w = solve_wait(spec, x / lam)
    rates = 1.0 / spec.mean_service(w)
    rates = np.concatenate([[rates[0]], rates])
    return TableSlowdown(tuple(rates.tolist()))


# ---------------------------------------------------------------- config


@dataclass(frozen=True)
class ClassSpec:
    lam: float
    slowdown: Slowdown
    kappa: int
    h: float = 1.0
    b: float = 0.0

    def __post_init__(self):
        _check_finite_nonneg("lambda", self.lam)
        _check_finite_nonneg("h", self.h)
        _check_finite_nonneg("b", self.b)
        if int(self.kappa) != self.kappa or self.kappa < 1:
            raise ConfigError(f"kappa must be a positive integer, got {self.kappa}")
        object.__setattr__(self, "kappa", int(self.kappa))


@dataclass(frozen=True)
class SystemConfig:
    """A complete problem instance.

    Parameters
    ----------
    classes : sequence of ClassSpec
    servers : int
        Number of identical servers C.
    mode : {"preemptive", "nonpreemptive"}
    rate_floor : float or None
        When None (default) any non-positive service rate on 0..kappa is
        rejected.  Otherwise rates are clamped from below at this value.
    """

    classes: tuple
    servers: int
    mode: str = "preemptive"
    rate_floor: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        if not self.classes:
            raise ConfigError("at least one class is required")
        if int(self.servers) != self.servers or self.servers < 1:
            raise ConfigError("servers must be a positive integer")
        object.__setattr__(self, "servers", int(self.servers))
        if self.mode not in ("preemptive", "nonpreemptive"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.rate_floor is not None and not self.rate_floor > 0:
            raise ConfigError("rate_floor must be positive")
        for i, c in enumerate(self.classes):
            raw = c.slowdown.table(c.kappa, c.lam)
            if self.rate_floor is None and raw.min() <= 0:
                raise ConfigError(
                    f"class {i + 1}: service rate reaches {raw.min():g} <= 0 at kappa; "
                    "require mu > a*kappa or set rate_floor"
                )
        if not (math.isfinite(self.Lambda) and self.Lambda > 0):
            raise ConfigError("uniformization rate must be finite and positive")

    # convenience constructors -------------------------------------------

    @classmethod
    def linear(cls, lam, mu, a, kappa, h=None, b=None, servers=1, mode="preemptive",
               rate_floor=None):
        """Build a linear-slowdown instance from per-class sequences."""
        n = len(lam)
        h = [1.0] * n if h is None else h
        b = [0.0] * n if b is None else b
        classes = [
            ClassSpec(lam[i], LinearSlowdown(mu[i], a[i]), kappa[i], h[i], b[i])
            for i in range(n)
        ]
        return cls(tuple(classes), servers, mode, rate_floor)

    def replace(self, **kw) -> "SystemConfig":
        d = dict(classes=self.classes, servers=self.servers, mode=self.mode,
                 rate_floor=self.rate_floor)
        d.update(kw)
        return SystemConfig(**d)

    def with_costs(self, h=None, b=None) -> "SystemConfig":
        classes = []
        for i, c in enumerate(self.classes):
            classes.append(ClassSpec(c.lam, c.slowdown, c.kappa,
                                     c.h if h is None else h[i], c.b if b is None else b[i]))
        return self.replace(classes=tuple(classes))

    # derived arrays -----------------------------------------------------

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @cached_property
    def lam(self) -> np.ndarray:
        return np.array([c.lam for c in self.classes], dtype=float)

    @cached_property
    def kappa(self) -> np.ndarray:
        return np.array([c.kappa for c in self.classes], dtype=np.int64)

    @cached_property
    def h(self) -> np.ndarray:
        return np.array([c.h for c in self.classes], dtype=float)

    @cached_property
    def b(self) -> np.ndarray:
        return np.array([c.b for c in self.classes], dtype=float)

    @cached_property
    def rates(self) -> np.ndarray:
        """Rate table of shape (I, max kappa + 1); padded with the kappa value."""
        width = int(self.kappa.max()) + 1
        out = np.empty((self.n_classes, width))
        for i, c in enumerate(self.classes):
            r = c.slowdown.table(c.kappa, c.lam)
            if self.rate_floor is not None:
                r = np.maximum(r, self.rate_floor)
            out[i, : c.kappa + 1] = r
            out[i, c.kappa + 1:] = r[-1]
        out.setflags(write=False)
        return out

    @cached_property
    def Lambda(self) -> float:
        return float(self.lam.sum() + self.servers * self.rates[:, 0].max())

    @cached_property
    def shape(self) -> tuple:
        return tuple(int(k) + 1 for k in self.kappa)

    @cached_property
    def n_states(self) -> int:
        return math.prod(self.shape)

    @cached_property
    def strides(self) -> np.ndarray:
        s = np.ones(self.n_classes, dtype=np.int64)
        for i in range(self.n_classes - 2, -1, -1):
            s[i] = s[i + 1] * self.shape[i + 1]
        return s

    def encode(self, x) -> int:
        return int(np.dot(np.asarray(x, dtype=np.int64), self.strides))

    def decode(self, idx) -> np.ndarray:
        return np.array(np.unravel_index(idx, self.shape), dtype=np.int64).T

    def all_states(self) -> np.ndarray:
        """Every state in mixed-radix order, shape (n_states, I)."""
        return self.decode(np.arange(self.n_states))

    def worst_case_load(self) -> float:
        k = self.kappa
        fk = self.rates[np.arange(self.n_classes), k]
        return float(np.sum(self.lam / (self.servers * fk)))

    def check_state(self, x) -> np.ndarray:
        x = np.asarray(x)
        if x.shape != (self.n_classes,):
            raise ConfigError(f"state must have {self.n_classes} entries")
        if np.any(x != np.round(x)):
            raise ConfigError("state entries must be integers")
        x = x.astype(np.int64)
        if np.any(x < 0) or np.any(x > self.kappa):
            raise ConfigError(f"state {x.tolist()} outside 0..kappa")
        return x

    def to_dict(self) -> dict:
        d = {
            "classes": [
                {"lambda": c.lam, "slowdown": c.slowdown.to_dict(), "kappa": c.kappa,
                 "h": c.h, "b": c.b}
                for c in self.classes
            ],
            "servers": self.servers,
            "mode": self.mode,
        }
        if self.rate_floor is not None:
            d["rate_floor"] = self.rate_floor
        return d


# ---------------------------------------------------------------- operations


def service_rate(cfg: SystemConfig, i: int, x_i: int) -> float:
    """Service rate of one class-i server when x_i class-i customers are present."""
    if not 0 <= i < cfg.n_classes:
        raise ConfigError(f"class index {i} out of range")
    if not 0 <= x_i <= cfg.kappa[i] or int(x_i) != x_i:
        raise ConfigError(f"x_{i + 1}={x_i} outside 0..{cfg.kappa[i]}")
    return float(cfg.rates[i, int(x_i)])


def uniformization_rate(cfg: SystemConfig) -> float:
    return cfg.Lambda


def stage_cost(cfg: SystemConfig, x) -> float:
    """Per-uniformized-step cost c(x)."""
    x = np.asarray(x)
    full = x >= cfg.kappa
    return float((cfg.h @ x + np.sum(cfg.lam * cfg.b * full)) / cfg.Lambda)


def stage_costs(cfg: SystemConfig) -> np.ndarray:
    """c(x) for all states in mixed-radix order."""
    X = cfg.all_states()
    return (X @ cfg.h + ((X == cfg.kappa) * (cfg.lam * cfg.b)).sum(axis=1)) / cfg.Lambda


def greedy_allocation(order: Sequence[int], x, servers: int) -> np.ndarray:
    z = np.zeros(len(x), dtype=np.int64)
    rem = servers
    for i in order:
        z[i] = min(int(x[i]), rem)
        rem -= z[i]
    return z


def feasible_allocations(cfg: SystemConfig, x) -> list[tuple]:
    """Distinct strict-priority allocations at x (the LP extreme points used)."""
    x = cfg.check_state(x)
    seen = []
    for order in permutations(range(cfg.n_classes)):
        z = tuple(int(v) for v in greedy_allocation(order, x, cfg.servers))
        if z not in seen:
            seen.append(z)
    return sorted(seen, reverse=True)


def is_feasible_allocation(cfg: SystemConfig, x, z, non_idling: bool = True) -> bool:
    x = np.asarray(x)
    z = np.asarray(z)
    if np.any(z < 0) or np.any(z > x) or z.sum() > cfg.servers:
        return False
    if non_idling and cfg.mode == "preemptive":
        return int(z.sum()) == min(cfg.servers, int(x.sum()))
    return True


# ---------------------------------------------------------------- JSON IO

_SLOWDOWN_SCHEMA = {
    "oneOf": [
        {
            "type": "object",
            "properties": {
                "kind": {"const": "linear"},
                "mu": {"type": "number", "minimum": 0},
                "a": {"type": "number", "minimum": 0},
            },
            "required": ["kind", "mu"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {
                "kind": {"const": "table"},
                "rates": {"type": "array", "items": {"type": "number", "minimum": 0},
                          "minItems": 1},
            },
            "required": ["kind", "rates"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {
                "kind": {"const": "wait"},
                "base_los": {"type": "number", "exclusiveMinimum": 0},
                "delay_slope": {"type": "number", "minimum": 0},
                "wait_cap": {"type": "number", "minimum": 0},
                "los_std": {"type": "number", "exclusiveMinimum": 0},
            },
            "required": ["kind", "base_los", "delay_slope", "wait_cap", "los_std"],
            "additionalProperties": False,
        },
    ]
}

CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "classes": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "properties": {
                    "lambda": {"type": "number", "minimum": 0},
                    "slowdown": _SLOWDOWN_SCHEMA,
                    "kappa": {"type": "integer", "minimum": 1},
                    "h": {"type": "number", "minimum": 0},
                    "b": {"type": "number", "minimum": 0},
                },
                "required": ["lambda", "slowdown", "kappa"],
                "additionalProperties": False,
            },
        },
        "servers": {"type": "integer", "minimum": 1},
        "mode": {"enum": ["preemptive", "nonpreemptive"]},
        "rate_floor": {"type": "number", "exclusiveMinimum": 0},
    },
    "required": ["classes", "servers"],
    "additionalProperties": False,
}


def _slowdown_from_dict(d) -> Slowdown:
    if d["kind"] == "linear":
        return LinearSlowdown(d["mu"], d.get("a", 0.0))
    if d["kind"] == "table":
        return TableSlowdown(tuple(d["rates"]))
    return WaitDerivedSlowdown(
        WaitServiceSpec(d["base_los"], d["delay_slope"], d["wait_cap"], d["los_std"])
    )


def config_from_dict(d: dict) -> SystemConfig:
    try:
        jsonschema.validate(d, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path)
        raise ConfigError(f"invalid config at '{path}': {exc.message}") from None
    classes = tuple(
        ClassSpec(c["lambda"], _slowdown_from_dict(c["slowdown"]), c["kappa"],
                  c.get("h", 1.0), c.get("b", 0.0))
        for c in d["classes"]
    )
    return SystemConfig(classes, d["servers"], d.get("mode", "preemptive"),
                        d.get("rate_floor"))


def load_config(path) -> SystemConfig:
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return config_from_dict(d)


def dump_config(cfg: SystemConfig, path=None) -> str:
    text = json.dumps(cfg.to_dict(), indent=2)
    if path is not None:
        Path(path).write_text(text + "\n")
    return text


def iter_states(cfg: SystemConfig) -> Iterable[tuple]:
    for idx in range(cfg.n_states):
        yield tuple(int(v) for v in np.unravel_index(idx, cfg.shape))
