import warnings

import numpy as np
import pytest
from sklearn.base import clone

from oracles import vhat_loop
from slowq.exact import solve_optimal, solve_optimal_np, value_difference_exact
from slowq.learn import (ADPNonPreemptive, ADPScheduler, PolynomialLogisticClassifier,
                         actionable_count, adaptive_estimate, adp_train_np,
                         default_sample_size, featurize, pair_t_statistic, phi_alpha,
                         sample_np_states, sample_states, top_labels)
from slowq.model import ConfigError, SystemConfig
from slowq.policy import BenchmarkPolicy, ClassifierPolicy, priority_order, tabulate


def _grid(n=30):
    g = np.arange(1, n + 1, dtype=float)
    return np.array([(a, b) for a in g for b in g])


def test_featurize_order():
    x1, x2 = 2.0, 3.0
    expect = [1, x1, x2, x1**2, x1 * x2, x2**2, x1**3, x1**2 * x2, x1 * x2**2, x2**3]
    assert np.allclose(featurize([x1, x2], 3), expect)
    assert np.array_equal(featurize([0, 0], 3), [1] + [0] * 9)
    assert featurize(np.ones((4, 3)), 2).shape == (4, 10)
    with pytest.raises(ValueError):
        featurize([1, 2], 0)


def test_separable_training_accuracy():
    X = _grid()
    y = (X[:, 0] > X[:, 1] + 0.5).astype(int)
    clf = PolynomialLogisticClassifier(max_epochs=20000).fit(X, y)
    assert np.mean(clf.predict(X) == y) == 1.0
    P = clf.predict_proba(X)
    assert np.all((P >= 0) & (P <= 1)) and np.allclose(P.sum(axis=1), 1)


def test_coordinate_scale_invariance():
    X = _grid()
    y = (X[:, 0] ** 2 > 25 * X[:, 1]).astype(int)
    a = PolynomialLogisticClassifier(max_epochs=500).fit(X, y)
    b = PolynomialLogisticClassifier(max_epochs=500, coord_scale=(30, 7)).fit(X, y)
    assert np.allclose(a.decision_function(X), b.decision_function(X), atol=1e-8)


def test_affine_shift_invariance():
    # cubic polynomials are closed under shifts, so the fitted rule barely moves
    X = _grid()
    y = (X[:, 0] ** 2 > 25 * X[:, 1]).astype(int)
    a = PolynomialLogisticClassifier(max_epochs=20000).fit(X, y)
    b = PolynomialLogisticClassifier(max_epochs=20000).fit(X + 5.0, y)
    assert np.mean(a.predict(X) == b.predict(X + 5.0)) >= 0.98


def test_constant_labels():
    X = _grid(5)
    with pytest.warns(UserWarning, match="constant"):
        clf = PolynomialLogisticClassifier().fit(X, np.ones(len(X), dtype=int))
    assert np.all(clf.predict(_grid(9)) == 1)
    with pytest.warns(UserWarning):
        m = PolynomialLogisticClassifier(n_classes=3).fit(X, np.full(len(X), 2))
    assert np.all(m.rank(X)[:, 0] == 2)


def test_multinomial_ranks():
    X = np.array([(a, b, c) for a in range(1, 7) for b in range(1, 7) for c in range(1, 7)],
                 dtype=float)
    score = X * np.array([1.0, 1.3, 0.8])
    y = np.argmax(score, axis=1)
    clf = PolynomialLogisticClassifier(degree=2, max_epochs=5000).fit(X, y)
    assert np.mean(clf.predict(X) == y) >= 0.9
    R = clf.rank(X)
    assert np.all(np.sort(R, axis=1) == [0, 1, 2])
    assert np.array_equal(R[:, 0], clf.predict(X))


def test_determinism_and_roundtrip():
    X = _grid(10)
    y = (X[:, 0] * X[:, 1] > 30).astype(int)
    a = PolynomialLogisticClassifier().fit(X, y)
    b = PolynomialLogisticClassifier().fit(X, y)
    assert np.array_equal(a.coef_, b.coef_)
    c = PolynomialLogisticClassifier.from_dict(a.to_dict())
    assert np.array_equal(a.decision_function(X), c.decision_function(X))
    assert a.to_dict()["kind"] == "binary_logistic"


def test_kernel_agrees_with_python_classifier(load15):
    X = _grid()
    y = (X[:, 0] * 1.3 > X[:, 1]).astype(int)
    pol = ClassifierPolicy(PolynomialLogisticClassifier(coord_scale=(30, 30)).fit(X, y))
    table = tabulate(pol, load15)
    for k, x in enumerate(load15.all_states()):
        assert tuple(table[k]) == priority_order(pol, load15, x)


def test_sklearn_protocol():
    clf = PolynomialLogisticClassifier(degree=2, lr=0.05)
    assert clone(clf).get_params()["lr"] == 0.05
    adp = ADPScheduler(N=10, n_max=2)
    assert clone(adp).get_params()["N"] == 10
    assert ADPNonPreemptive().get_params()["init"] == "cmu_zero"
    with pytest.raises(ConfigError):
        adp.fit("not a config")


# ------------------------------------------------------------------ sampling


def test_sample_states(small):
    rng = np.random.default_rng(0)
    allx = sample_states(small, 64, rng)
    assert len({tuple(x) for x in allx}) == 64
    assert allx.min() == 1 and allx.max() == 8
    with pytest.raises(ConfigError):
        sample_states(small, 65, rng)
    a = sample_states(small, 20, np.random.default_rng(3))
    b = sample_states(small, 20, np.random.default_rng(3))
    assert np.array_equal(a, b)
    assert len({tuple(x) for x in a}) == 20


def test_default_sample_size(load15):
    # 5% of the 900 states with every x_i >= 1
    assert default_sample_size(load15) == 45


def test_sample_np_states(tiny_np):
    M = actionable_count(tiny_np)
    S = sample_np_states(tiny_np, M, np.random.default_rng(0))
    assert len({(tuple(x), tuple(z)) for x, z in S}) == M
    for x, z in S:
        assert np.all(z <= x) and z.sum() < tiny_np.servers and (x > z).sum() >= 2
    with pytest.raises(ConfigError):
        sample_np_states(tiny_np, M + 1, np.random.default_rng(0))


# ------------------------------------------------------------------ adaptive rule


def test_phi_alpha():
    assert phi_alpha(0.95) == pytest.approx(1.959964, abs=1e-6)
    with pytest.raises(ConfigError):
        phi_alpha(1.0)


def test_t_statistic_matches_loop():
    rng = np.random.default_rng(1)
    S = rng.normal(size=(40, 3)) + [0.0, 0.4, 1.0]
    best = min(abs(S[:, i].mean() - S[:, j].mean()) / np.sqrt(vhat_loop(S, i, j))
               for i, j in [(0, 1), (0, 2), (1, 2)])
    assert pair_t_statistic(S) == pytest.approx(best, rel=1e-12)
    assert pair_t_statistic(np.ones((5, 2))) == 0.0
    assert pair_t_statistic(np.array([[1.0, 2.0]] * 5)) == np.inf


def test_separated_states_stop_after_one_batch():
    cfg = SystemConfig.linear([0.5, 0.5], [1, 1], [0, 0], [6, 6], h=[100, 1], servers=1)
    res = adaptive_estimate(cfg, BenchmarkPolicy("cmu_zero"), [(3, 3), (5, 2)], n_step=30,
                            n_tilde_max=600, seed=0)
    assert res.rounds == 1
    assert all(s.n == 30 for s in res.samples)


def test_symmetric_tie_exhausts_budget(sym):
    res = adaptive_estimate(sym, BenchmarkPolicy("sqf"), [(3, 3)], n_step=30,
                            n_tilde_max=300, seed=0)
    # a true tie is never separated
    assert res.samples[0].n == 300
    assert res.rounds == 10


def test_budget_never_exceeded(small):
    pol = BenchmarkPolicy("lqf")
    X = sample_states(small, 12, np.random.default_rng(2))
    res = adaptive_estimate(small, pol, X, n_step=40, n_tilde_max=250, seed=1)
    assert all(s.n <= 250 for s in res.samples)
    assert res.total_samples == sum(s.n for s in res.samples)
    fixed = adaptive_estimate(small, pol, X, n_step=40, n_tilde_max=250, seed=1, adaptive=False)
    assert all(s.n == 250 for s in fixed.samples)
    with pytest.raises(ConfigError):
        adaptive_estimate(small, pol, X, n_step=1)


def test_stopping_rule_error_rate(small):
    vt, pol = solve_optimal(small)
    # pick a state whose two scores are close but distinct
    best, gap = None, np.inf
    for x in small.all_states():
        if min(x) < 1:
            continue
        R = np.array([small.rates[i, x[i]] * value_difference_exact(vt, x, i) for i in range(2)])
        rel = abs(R[0] - R[1]) / abs(R).sum()
        if 0.03 < rel < gap:
            best, gap, truth = x, rel, int(np.argmax(R))
    wrong = 0
    for trial in range(200):
        res = adaptive_estimate(small, pol, [best], n_step=30, n_tilde_max=2000, seed=trial)
        f = [small.rates[i, best[i]] for i in range(2)]
        wrong += int(np.argmax(res.samples[0].mean * f) != truth)
    assert wrong / 200 <= 2 * (1 - 0.95)


# ------------------------------------------------------------------ learners


def test_exact_labels_recover_optimal_policy(load15):
    vt, opt = solve_optimal(load15)
    X = np.array([x for x in load15.all_states() if min(x) >= 1])
    R = np.array([[load15.rates[i, x[i]] * value_difference_exact(vt, x, i) for i in range(2)]
                  for x in X])
    labels = top_labels(R)
    clf = PolynomialLogisticClassifier(n_classes=2, coord_scale=(30, 30)).fit(X, labels)
    learned = tabulate(ClassifierPolicy(clf), load15)
    idx = [load15.encode(x) for x in X]
    agree = np.mean(learned[idx, 0] == opt.orders[idx, 0])
    assert agree >= 0.95


def test_np_learner_matches_exact(tiny_np):
    _, opt = solve_optimal_np(tiny_np)
    M = actionable_count(tiny_np)
    pol, diag = adp_train_np(tiny_np, N=M, n_max=3, seed=0, evaluate=False)
    assert len(diag) == 3
    S = sample_np_states(tiny_np, M, np.random.default_rng(0))
    match = np.mean([pol.np_admit(tiny_np, x, z) == opt.np_admit(tiny_np, x, z) for x, z in S])
    assert match >= 0.9


def test_np_learner_single_class():
    cfg = SystemConfig.linear([0.5], [1], [0.1], [4], mode="nonpreemptive")
    pol, diag = adp_train_np(cfg)
    assert diag == []
    assert pol.np_admit(cfg, (2,), (0,)) == 0


def test_learners_check_mode(small, tiny_np):
    from slowq.learn import adp_train

    with pytest.raises(ConfigError):
        adp_train(tiny_np)
    with pytest.raises(ConfigError):
        adp_train_np(small)


def test_scheduler_estimator(small):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        est = ADPScheduler(N=30, n_max=2, n_tilde_max=300, init="cmu_zero", evaluate=False,
                           seed=4).fit(small)
    ranks = est.rank(np.array([[3, 3], [8, 1]]))
    assert ranks.shape == (2, 2)
    assert np.array_equal(est.predict(np.array([[3, 3], [8, 1]])), ranks[:, 0])
    assert est.samples_used_ == sum(r["samples"] for r in est.history_)
    # the learned rule is total over the state space
    assert all(sorted(r) == [0, 1] for r in tabulate(est.policy_, small))
