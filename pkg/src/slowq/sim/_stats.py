from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy import stats


def ci_halfwidth(values, level=0.95) -> float:
    values = np.asarray(values, dtype=float)
    n = values.size
    if n < 2:
        return float("nan")
    q = stats.t.ppf(0.5 + level / 2.0, n - 1)
    return float(q * values.std(ddof=1) / np.sqrt(n))


@dataclass
class ValueDiffSamples:
    """Cost-difference samples for one state, one column per class.

    Columns of classes without an estimate hold NaN.
    """

    state: tuple
    samples: np.ndarray
    lengths: np.ndarray
    truncated: np.ndarray
    z: tuple | None = None
    times: np.ndarray | None = None     # simulated time per replication

    @classmethod
    def empty(cls, state, n_classes, z=None):
        return cls(tuple(int(v) for v in state), np.zeros((0, n_classes)),
                   np.zeros(0, dtype=np.int64), np.zeros(0, dtype=bool), z)

    @property
    def n(self) -> int:
        return int(self.samples.shape[0])

    @property
    def mean(self) -> np.ndarray:
        return self.samples.mean(axis=0) if self.n else np.full(self.samples.shape[1], np.nan)

    @property
    def second_moment(self) -> np.ndarray:
        return (self.samples ** 2).mean(axis=0)

    @property
    def std(self) -> np.ndarray:
        return self.samples.std(axis=0, ddof=1)

    @property
    def sem(self) -> np.ndarray:
        return self.std / np.sqrt(self.n)

    @property
    def truncation_rate(self) -> float:
        return float(self.truncated.mean()) if self.n else 0.0

    def extend(self, samples, lengths, truncated, times=None) -> "ValueDiffSamples":
        if self.times is not None or times is not None:
            old = self.times if self.times is not None else np.full(self.n, np.nan)
            new = times if times is not None else np.full(len(lengths), np.nan)
            self.times = np.concatenate([old, new])
        self.samples = np.concatenate([self.samples, samples])
        self.lengths = np.concatenate([self.lengths, lengths])
        self.truncated = np.concatenate([self.truncated, truncated])
        return self

    def to_csv(self) -> str:
        I = self.samples.shape[1]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["rep"] + [f"D_{i + 1}" for i in range(I)] + ["length", "truncated"])
        for r in range(self.n):
            w.writerow([r] + [f"{v:.6g}" for v in self.samples[r]]
                       + [int(self.lengths[r]), int(self.truncated[r])])
        return buf.getvalue()


@dataclass
class SimStats:
    """Across-replication summary of a long-run simulation."""

    cost: np.ndarray                 # per replication time-average cost
    queue: np.ndarray                # (reps, I) time-average waiting customers
    in_system: np.ndarray            # (reps, I) time-average customers present
    waits: np.ndarray                # (reps, I) mean wait per class
    overall_wait: np.ndarray         # (reps,)
    blocked: np.ndarray              # (reps, I) blocked arrivals in the window
    blocked_frac: np.ndarray         # (reps, I)
    extra: dict = field(default_factory=dict)

    @property
    def reps(self) -> int:
        return int(self.cost.size)

    @property
    def cost_mean(self) -> float:
        return float(self.cost.mean())

    @property
    def cost_ci(self) -> float:
        return ci_halfwidth(self.cost)

    @property
    def wait_mean(self) -> np.ndarray:
        return self.waits.mean(axis=0)

    @property
    def wait_ci(self) -> np.ndarray:
        return np.array([ci_halfwidth(self.waits[:, i]) for i in range(self.waits.shape[1])])

    @property
    def overall_wait_mean(self) -> float:
        return float(self.overall_wait.mean())

    @property
    def overall_wait_ci(self) -> float:
        return ci_halfwidth(self.overall_wait)

    def summary(self) -> dict:
        return {
            "reps": self.reps,
            "cost": self.cost_mean,
            "cost_ci": self.cost_ci,
            "queue": self.queue.mean(axis=0).tolist(),
            "in_system": self.in_system.mean(axis=0).tolist(),
            "wait": self.wait_mean.tolist(),
            "wait_ci": self.wait_ci.tolist(),
            "overall_wait": self.overall_wait_mean,
            "overall_wait_ci": self.overall_wait_ci,
            "blocked": self.blocked.sum(axis=0).tolist(),
            "blocked_frac": self.blocked_frac.mean(axis=0).tolist(),
        }

    def to_csv(self) -> str:
        I = self.queue.shape[1]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["rep", "cost"]
                   + [f"queue_{i + 1}" for i in range(I)]
                   + [f"wait_{i + 1}" for i in range(I)]
                   + ["overall_wait"]
                   + [f"blocked_{i + 1}" for i in range(I)])
        for r in range(self.reps):
            w.writerow([r, f"{self.cost[r]:.6g}"]
                       + [f"{v:.6g}" for v in self.queue[r]]
                       + [f"{v:.6g}" for v in self.waits[r]]
                       + [f"{self.overall_wait[r]:.6g}"]
                       + [int(v) for v in self.blocked[r]])
        return buf.getvalue()
