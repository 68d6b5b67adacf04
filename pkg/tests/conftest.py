import json
import warnings
from pathlib import Path

import pytest

from slowq.model import SystemConfig, config_from_dict

warnings.filterwarnings("ignore", message=".*TBB.*")

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def lin_dict(lam, mu, a, kappa, h=None, b=None, servers=1, mode="preemptive"):
    n = len(lam)
    h = h or [1.0] * n
    b = b or [0.0] * n
    return {
        "classes": [
            {"lambda": lam[i], "slowdown": {"kind": "linear", "mu": mu[i], "a": a[i]},
             "kappa": kappa[i], "h": h[i], "b": b[i]}
            for i in range(n)
        ],
        "servers": servers,
        "mode": mode,
    }


def bundled(name):
    return json.loads((CONFIGS / name).read_text())


@pytest.fixture(scope="session")
def small_dict():
    return lin_dict([1.5, 1.5], [1, 1], [0.0103, 0.0203], [8, 8], h=[3, 1], servers=2)


@pytest.fixture(scope="session")
def small(small_dict):
    return config_from_dict(small_dict)


@pytest.fixture(scope="session")
def sym():
    return SystemConfig.linear([1.2, 1.2], [1, 1], [0.02, 0.02], [6, 6], servers=2)


@pytest.fixture(scope="session")
def load15():
    return config_from_dict(bundled("load15.json"))


@pytest.fixture(scope="session")
def meta():
    return config_from_dict(bundled("meta_stable.json"))


@pytest.fixture(scope="session")
def tiny_np_dict():
    return bundled("tiny_np.json")


@pytest.fixture(scope="session")
def tiny_np(tiny_np_dict):
    return config_from_dict(tiny_np_dict)
