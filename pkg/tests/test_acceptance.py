"""Acceptance suite: one PASS/FAIL line per criterion, printed to the terminal.

Run with ``pytest tests/test_acceptance.py -v``.  Criteria 5, 8 and 9 train
learners and take several minutes.
"""
import csv
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from slowq.exact import evaluate_policy_exact, solve_optimal, value_difference_exact
from slowq.fluid import integrate, is_locally_stable, two_class_equilibria
from slowq.learn import adp_train
from slowq.model import SystemConfig, config_from_dict
from slowq.policy import BenchmarkPolicy, strict_priority
from slowq.sim import (estimate_value_differences, estimate_value_differences_regen,
                       simulate_long_run)

from conftest import CONFIGS, bundled

pytestmark = pytest.mark.acceptance


@pytest.fixture
def report(pytestconfig):
    capman = pytestconfig.pluginmanager.getplugin("capturemanager")

    def emit(n, ok, detail):
        with capman.global_and_fixture_disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'}  {detail}", flush=True)
        return ok

    return emit


@pytest.fixture(scope="module")
def load15():
    return config_from_dict(bundled("load15.json"))


@pytest.fixture(scope="module")
def load15_opt(load15):
    t0 = time.perf_counter()
    vt, pol = solve_optimal(load15)
    return vt, pol, time.perf_counter() - t0


@pytest.fixture(scope="module")
def adp_load15(load15):
    t0 = time.perf_counter()
    pol, _ = adp_train(load15, N=48, seed=0, evaluate=False)
    return pol, time.perf_counter() - t0


def test_c1_birth_death(report):
    t0 = time.perf_counter()
    vt, _ = solve_optimal(SystemConfig.linear([1.0], [1.0], [0.0], [2]))
    dt = time.perf_counter() - t0
    ok = abs(vt.gamma - 1.0) <= 1e-6 and dt < 1.0
    assert report(1, ok, f"gamma*={vt.gamma:.9f} (target 1.0), {dt:.2f}s")


def test_c2_optimal_cost(report, load15_opt):
    vt, _, dt = load15_opt
    ok = 6.60 <= vt.gamma <= 6.72 and dt < 30
    assert report(2, ok, f"gamma*={vt.gamma:.4f} (target [6.60, 6.72]), {dt:.1f}s")


def test_c3_coupling_unbiased(report, small):
    vt, pol = solve_optimal(small)
    rng = np.random.default_rng(2024)
    eligible = [x for x in small.all_states() if min(x) >= 1]
    picks = [eligible[k] for k in rng.choice(len(eligible), 20, replace=False)]
    good = 0
    for x in picks:
        s = estimate_value_differences(small, pol, x, 10**4, seed=1)
        exact = np.array([value_difference_exact(vt, x, i) for i in range(2)])
        good += int(np.all(np.abs(s.mean - exact) <= 3 * s.sem))
    assert report(3, good >= 19, f"{good}/20 states within 3 SE (need 19)")


def test_c4_variance_reduction(report):
    cfg = config_from_dict(bundled("load15_h31.json"))
    vt, pol = solve_optimal(cfg)
    ratios, shorter = [], []
    for x in [(10, 10), (15, 15), (20, 20)]:
        c = estimate_value_differences(cfg, pol, x, 1000, seed=4)
        r = estimate_value_differences_regen(cfg, pol, x, 1000, gain=vt.gamma, seed=4)
        ratios.append(c.samples.std(axis=0, ddof=1) / r.samples.std(axis=0, ddof=1))
        shorter.append(c.lengths.mean() < r.lengths.mean())
    ratios = np.array(ratios)
    ok = bool(np.all(ratios <= 0.5) and all(shorter))
    detail = (f"std ratio coupling/regen per state and class {np.round(ratios, 3).tolist()} "
              f"(need <= 0.5), coupling shorter at all states: {all(shorter)}")
    assert report(4, ok, detail)


def test_c5_adp_near_optimal(report, load15, load15_opt, adp_load15):
    vt, _, _ = load15_opt
    pol, dt = adp_load15
    st = simulate_long_run(load15, pol, 10**6, reps=4, seed=0)
    gap = st.cost_mean / vt.gamma - 1.0
    ok = gap <= 0.05 and dt < 1800
    assert report(5, ok, f"ADP cost {st.cost_mean:.4f} +- {st.cost_ci:.3f} vs gamma* "
                         f"{vt.gamma:.4f}, gap {100 * gap:.2f}% (need <= 5%), train {dt:.0f}s")


def test_c6_benchmark_ordering(report, load15, load15_opt, adp_load15):
    vt, _, _ = load15_opt
    pol, _ = adp_load15
    g = {"adp": evaluate_policy_exact(load15, pol).gamma,
         "sqf": evaluate_policy_exact(load15, BenchmarkPolicy("sqf")).gamma,
         "lqf": evaluate_policy_exact(load15, BenchmarkPolicy("lqf")).gamma}
    ratio = g["lqf"] / vt.gamma
    ok = g["adp"] < g["sqf"] < g["lqf"] and ratio > 4
    assert report(6, ok, f"ADP {g['adp']:.3f} < SQF {g['sqf']:.3f} < LQF {g['lqf']:.3f}, "
                         f"LQF/opt {ratio:.2f} (need > 4)")


def test_c7_fluid_equilibria(report):
    t0 = time.perf_counter()
    cfg = SystemConfig.linear([1.5, 1.5], [1, 1], [0.03, 0.02], [30, 30], servers=4)
    pol = strict_priority((0, 1))
    eqs = two_class_equilibria(cfg)
    drift = max(np.abs(integrate(cfg, pol, e.point, horizon=100.0, stop_when_settled=False)
                       .end - e.point).max() for e in eqs)
    stable = all(is_locally_stable(cfg, pol, e.point, eps=0.1) for e in eqs)
    dt = time.perf_counter() - t0
    ok = len(eqs) == 3 and drift < 1e-3 and stable and dt < 10
    pts = [tuple(round(float(v), 4) for v in e.point) for e in eqs]
    assert report(7, ok, f"{pts}, max drift {drift:.2e}, stable {stable}, {dt:.1f}s")


def test_c8_adaptive_savings(report):
    cfg = config_from_dict(bundled("load15_h31.json"))
    kw = dict(N=48, seed=0, n_tilde_max=2000, alpha=0.95, evaluate=False)
    pa, da = adp_train(cfg, adaptive=True, **kw)
    pf, df = adp_train(cfg, adaptive=False, **kw)
    used = sum(r["samples"] for r in da)
    full = sum(r["samples"] for r in df)
    sa = simulate_long_run(cfg, pa, 10**6, reps=8, seed=1)
    sf = simulate_long_run(cfg, pf, 10**6, reps=8, seed=1)
    overlap = abs(sa.cost_mean - sf.cost_mean) <= sa.cost_ci + sf.cost_ci
    frac = used / full
    ok = frac <= 0.70 and overlap
    assert report(8, ok, f"samples {used}/{full} = {100 * frac:.1f}% (need <= 70%), cost "
                         f"{sa.cost_mean:.3f} +- {sa.cost_ci:.3f} vs {sf.cost_mean:.3f} "
                         f"+- {sf.cost_ci:.3f}, overlap {overlap}")


def test_c9_case_study(report, tmp_path):
    from slowq.cli import main

    t0 = time.perf_counter()
    out = tmp_path / "cs"
    assert main(["case-study", "--config", str(CONFIGS / "case_study.json"), "--seed", "0",
                 "--out", str(out)]) == 0
    dt = time.perf_counter() - t0
    with open(out / "waits.csv") as fh:
        w = {r["policy"]: float(r["overall_wait"]) for r in csv.DictReader(fh)}
    checks = {"routing": 1.5 <= w["routing"] <= 4.0, "fcfs": 7.0 <= w["fcfs"] <= 15.0,
              "adp": w["fcfs"] - w["adp_np"] >= 7.0, "time": dt < 3600}
    detail = (f"routing {w['routing']:.2f} [1.5, 4] {checks['routing']}; fcfs {w['fcfs']:.2f} "
              f"[7, 15] {checks['fcfs']}; adp {w['adp_np']:.2f} reduction "
              f"{w['fcfs'] - w['adp_np']:.2f} >= 7 {checks['adp']}; {dt:.0f}s")
    assert report(9, all(checks.values()), detail)


SMALL = {"classes": [
    {"lambda": 1.2, "slowdown": {"kind": "linear", "mu": 1, "a": 0.02}, "kappa": 8, "h": 2},
    {"lambda": 1.0, "slowdown": {"kind": "linear", "mu": 1, "a": 0.04}, "kappa": 8, "h": 1}],
    "servers": 2}

LEARN = ["--N", "20", "--n-max", "2", "--n-tilde-max", "300", "--eval-horizon", "20000",
         "--eval-reps", "2"]


def _commands(small):
    cs = str(CONFIGS / "case_study.json")
    return {
        "solve": ["solve", "--config", small],
        "train": ["train", "--config", small, *LEARN],
        "train-np": ["train-np", "--config", str(CONFIGS / "tiny_np.json"), *LEARN],
        "eval": ["eval", "--config", small, "--policy", "sqf", "--horizon", "50000",
                 "--reps", "3", "--trace", "40"],
        "compare": ["compare", "--config", small, "--horizon", "50000", "--reps", "3", *LEARN],
        "fluid": ["fluid", "--config", str(CONFIGS / "meta_stable.json"), "--grid-step", "5",
                  "--start-step", "10", "--trajectory", "5,5"],
        "case-study": ["case-study", "--config", cs, "--N", "20", "--n-max", "1",
                       "--n-tilde-max", "60", "--horizon", "5000", "--reps", "3"],
    }


def _snapshot(d: Path):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*"))
            if p.is_file()}


def test_c10_determinism(report, tmp_path):
    import json

    small = tmp_path / "small.json"
    small.write_text(json.dumps(SMALL))
    bad = []
    for name, args in _commands(str(small)).items():
        snaps = []
        for k, threads in enumerate(["1", "1", "4"]):
            out = tmp_path / f"{name}-{k}"
            env = dict(os.environ, SLOWQ_THREADS=threads, PYTHONWARNINGS="ignore")
            r = subprocess.run([sys.executable, "-m", "slowq.cli", *args, "--seed", "7",
                                "--out", str(out)], capture_output=True, text=True, env=env)
            if r.returncode != 0:
                bad.append(f"{name} exit {r.returncode}")
                break
            snaps.append(_snapshot(out))
        if len(snaps) == 3 and not (snaps[0] == snaps[1] == snaps[2]):
            bad.append(name)
    ok = not bad
    assert report(10, ok, "7 commands x (twice at 1 thread, once at 4): "
                          + ("byte-identical" if ok else f"differs: {bad}"))
