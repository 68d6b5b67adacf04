import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slowq.model import ConfigError, SystemConfig
from slowq.policy import (BenchmarkPolicy, TabularPolicy, allocate, load_policy,
                          priority_order, save_policy, strict_priority, tabulate)

RULES = ["cmu_zero", "cmu_state", "max_pressure", "sqf", "lqf"]


@pytest.fixture
def fig1():
    return SystemConfig.linear([1.5, 1.5], [1, 1], [0.03, 0.02], [30, 30], servers=4)


def test_cmu_zero_constant(load15):
    cfg = load15.with_costs(h=[3, 1])
    pol = BenchmarkPolicy("cmu_zero")
    assert {priority_order(pol, cfg, x) for x in cfg.all_states()} == {(0, 1)}


def test_max_pressure_example(fig1):
    # 10*(1-0.3) = 7 against 20*(1-0.4) = 12
    assert priority_order(BenchmarkPolicy("max_pressure"), fig1, (10, 20)) == (1, 0)


def test_queue_length_rules(fig1):
    assert priority_order(BenchmarkPolicy("sqf"), fig1, (5, 5)) == (0, 1)
    assert priority_order(BenchmarkPolicy("sqf"), fig1, (7, 5)) == (1, 0)
    assert priority_order(BenchmarkPolicy("lqf"), fig1, (7, 5)) == (0, 1)
    assert priority_order(BenchmarkPolicy("lqf"), fig1, (5, 5)) == (0, 1)


def test_cmu_state_uses_current_rate(fig1):
    # class 2 slows less, so at equal counts it has the larger rate
    assert priority_order(BenchmarkPolicy("cmu_state"), fig1, (10, 10)) == (1, 0)
    assert priority_order(BenchmarkPolicy("cmu_state"), fig1, (0, 0)) == (0, 1)


def test_allocate_examples(fig1):
    assert tuple(allocate((0, 1), fig1, (5, 3))) == (4, 0)
    assert tuple(allocate((1, 0), fig1, (5, 3))) == (1, 3)
    assert tuple(allocate((1, 0), fig1, (1, 1))) == (1, 1)


@pytest.mark.parametrize("rule", RULES + ["static"])
def test_kernel_agrees_with_python(rule, fig1):
    pol = strict_priority((1, 0)) if rule == "static" else BenchmarkPolicy(rule)
    table = tabulate(pol, fig1)
    for k, x in enumerate(fig1.all_states()):
        assert tuple(table[k]) == priority_order(pol, fig1, x)


def test_kernel_agrees_three_classes():
    cfg = SystemConfig.linear([1, 0.5, 0.7], [1, 1.3, 0.8], [0.05, 0.02, 0.1], [5, 6, 4],
                              h=[1, 2, 1.5], servers=3)
    for rule in RULES:
        pol = BenchmarkPolicy(rule)
        table = tabulate(pol, cfg)
        for k, x in enumerate(cfg.all_states()):
            assert tuple(table[k]) == priority_order(pol, cfg, x), (rule, x)


@given(st.floats(0.01, 100))
@settings(max_examples=25, deadline=None)
def test_scale_invariance(c):
    cfg = SystemConfig.linear([1, 1.2], [1, 0.9], [0.03, 0.01], [6, 6], h=[1.3, 1],
                              servers=2)
    scaled = cfg.with_costs(h=list(c * cfg.h))
    for rule in ("cmu_zero", "cmu_state", "max_pressure"):
        pol = BenchmarkPolicy(rule)
        assert np.array_equal(tabulate(pol, cfg), tabulate(pol, scaled))


@given(st.lists(st.integers(0, 9), min_size=3, max_size=3), st.permutations([0, 1, 2]),
       st.integers(1, 12))
def test_allocation_non_idling(x, order, C):
    cfg = SystemConfig.linear([1] * 3, [1] * 3, [0] * 3, [9] * 3, servers=C)
    z = allocate(tuple(order), cfg, x)
    assert np.all(z <= x)
    assert z.sum() == min(C, sum(x))
    # greedy: a class gets nothing only if everything above it took the rest
    left = C
    for i in order:
        assert z[i] == min(x[i], left)
        left -= z[i]


def test_routing_semantics():
    cfg = SystemConfig.linear([1, 1], [1, 1], [0, 0], [5, 5], servers=1, mode="nonpreemptive")
    pol = BenchmarkPolicy("routing", p=0.46)
    rng = np.random.default_rng(0)
    # only one class waiting: served regardless of p
    assert pol.np_admit(cfg, (2, 0), (0, 0), rng) == 0
    assert pol.np_admit(cfg, (0, 2), (0, 0), rng) == 1
    picks = [pol.np_admit(cfg, (2, 2), (0, 0), rng) for _ in range(20000)]
    assert np.mean(np.array(picks) == 0) == pytest.approx(0.46, abs=0.015)


def test_routing_needs_two_classes():
    cfg = SystemConfig.linear([1] * 3, [1] * 3, [0] * 3, [2] * 3)
    with pytest.raises(ConfigError):
        priority_order(BenchmarkPolicy("routing"), cfg, (1, 1, 1))
    with pytest.raises(ConfigError):
        BenchmarkPolicy("routing", p=1.5)


def test_fcfs_non_preemptive_only(fig1):
    with pytest.raises(ConfigError):
        BenchmarkPolicy("fcfs").kernel(fig1)
    cfg = fig1.replace(mode="nonpreemptive")
    pol = BenchmarkPolicy("fcfs")
    assert pol.np_admit(cfg, (3, 3), (2, 1), heads=(5.0, 2.0)) == 1
    assert pol.np_admit(cfg, (3, 3), (2, 1), heads=(1.0, 2.0)) == 0


def test_np_admit_contract(tiny_np):
    pol = BenchmarkPolicy("cmu_zero")
    assert pol.np_admit(tiny_np, (0, 2), (0, 1)) == 1
    with pytest.raises(ValueError):
        pol.np_admit(tiny_np, (2, 2), (1, 1))
    with pytest.raises(ValueError):
        pol.np_admit(tiny_np, (1, 0), (1, 0))


def test_unknown_rule():
    with pytest.raises(ConfigError):
        BenchmarkPolicy("shortest_job")
    with pytest.raises(ConfigError):
        BenchmarkPolicy("static")


def test_tabular_roundtrip(tmp_path, fig1):
    small = SystemConfig.linear([1, 1], [1, 1], [0.1, 0.05], [4, 5], servers=2)
    orders = tabulate(BenchmarkPolicy("max_pressure"), small)
    pol = TabularPolicy(orders)
    p = tmp_path / "pol.csv"
    save_policy(pol, small, p)
    again = load_policy(str(p), small)
    assert np.array_equal(again.orders, orders)
    assert np.array_equal(tabulate(again, small), orders)
    with pytest.raises(ConfigError):
        tabulate(pol, fig1)


def test_benchmark_json_roundtrip(tmp_path, fig1):
    p = tmp_path / "b.json"
    save_policy(strict_priority((1, 0)), fig1, p)
    pol = load_policy(str(p), fig1)
    assert pol.rule == "static" and tuple(pol.order) == (1, 0)
    assert load_policy("SQF", fig1).rule == "sqf"
    with pytest.raises(ConfigError):
        load_policy("no-such-policy", fig1)


def test_tabular_rounds_fractional_states():
    cfg = SystemConfig.linear([1, 1], [1, 1], [0, 0], [3, 3], servers=1)
    orders = np.zeros((cfg.n_states, 2), dtype=np.int64)
    orders[:] = (0, 1)
    orders[cfg.encode((2, 1))] = (1, 0)
    pol = TabularPolicy(orders)
    assert pol.priority_order(cfg, (1.5, 0.7)) == (1, 0)
    assert pol.priority_order(cfg, (1.4, 0.7)) == (0, 1)
