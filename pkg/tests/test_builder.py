import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from listdtr.builder import (BuildTrace, ListConfig, QModelSet, assign_folds, build_decision_list,
                             compute_weights, grow_list, pi_q, tune_zeta_eta)
from listdtr.model import Region


class Fixed:
    """Stand-in Q-model evaluating a known function."""

    def __init__(self, f):
        self.f = f

    def predict(self, X):
        return self.f(np.atleast_2d(X))


def qset(*fs, actions=None):
    return QModelSet(tuple(actions or range(len(fs))), tuple(Fixed(f) for f in fs))


def continuation_models():
    return qset(lambda X: -X[:, 0] * (X[:, 0] - 1), lambda X: X[:, 0] * (X[:, 0] - 1),
                actions=(-1, 1))


def continuation_grid(n=2000):
    return (-2 + 4 * (np.arange(n) + 0.5) / n)[:, None]


def test_pi_q_ties_and_order():
    assert pi_q(qset(lambda X: np.zeros(len(X))), [0.0]) == 0
    assert pi_q(qset(lambda X: np.zeros(len(X)), lambda X: np.ones(len(X))), [0.0]) == 1
    assert pi_q(qset(lambda X: np.ones(len(X)), lambda X: np.ones(len(X))), [0.0]) == 0


def test_weights_hand_table():
    q = qset(lambda X: np.ones(len(X)), lambda X: np.full(len(X), 3.0))
    p = compute_weights(q, np.zeros((2, 1)), np.array([True, False]), 0.5)
    assert np.allclose(p.U, [[1.5, -0.5], [0.0, 0.0]])


def test_dominant_action_gives_single_all_clause():
    q = qset(lambda X: X[:, 0], lambda X: X[:, 0] + 1.0)
    X = np.random.default_rng(0).normal(size=(50, 2))
    dl = build_decision_list(q, X, ListConfig(zeta=0.01, eta=0.01))
    assert len(dl.clauses) == 1 and dl.clauses[0] == dl.clauses[-1]
    assert dl.clauses[0].region == Region.all() and dl.clauses[0].action == 1


def test_l_max_one_uses_best_total():
    q = qset(lambda X: np.where(X[:, 0] > 0, 2.0, 0.0), lambda X: np.full(len(X), 0.9))
    X = np.linspace(-1, 1, 11)[:, None]
    dl = build_decision_list(q, X, ListConfig(l_max=1))
    assert len(dl.clauses) == 1 and dl.clauses[0].action == 0


def test_continuation_first_clause_near_zero():
    X = continuation_grid()
    dl = build_decision_list(continuation_models(), X, ListConfig(zeta=0.01, eta=0.01))
    first = dl.clauses[0]
    assert first.region.form == "LE" and first.action == 1
    assert abs(first.region.tau1) <= 0.1
    # the rest of the list follows the greedy rule: -1 on (0, 1), +1 above 1
    rec = np.array(dl.action_indices(X, (-1, 1)))
    greedy = np.where((X[:, 0] > 0) & (X[:, 0] < 1), 0, 1)
    assert np.mean(rec == greedy) >= 0.99


def _random_q(seed, m):
    rng = np.random.default_rng(seed)
    W = rng.normal(size=(3, m))
    return QModelSet(tuple(range(m)), tuple(Fixed(lambda X, w=W[:, a]: np.sin(X @ w))
                                            for a in range(m)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 3), st.integers(1, 6),
       st.sampled_from([0.0, 0.01, 0.1]), st.sampled_from([0.0, 0.01, 0.1]))
def test_termination_and_coverage(seed, m, l_max, zeta, eta):
    q = _random_q(seed, m)
    X = np.random.default_rng(seed + 1).integers(-3, 4, size=(60, 3)).astype(float)
    trace = BuildTrace()
    dl = build_decision_list(q, X, ListConfig(zeta=zeta, eta=eta, l_max=l_max), trace=trace)
    assert len(dl.clauses) <= l_max and dl.clauses[-1].region == Region.all()
    # recorded coverage is strictly positive for every non-final clause and
    # equals the count of first matches when the list is re-applied
    hits = np.bincount(dl.clause_index(X), minlength=len(dl.clauses))
    assert list(hits[:-1]) == trace.covered[:-1]
    assert all(c >= 1 for c in trace.covered[:-1])
    remaining = X.shape[0] - np.cumsum([0] + trace.covered[:-1])
    assert np.all(np.diff(remaining) < 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 3))
def test_value_dominates_best_single_action(seed, m):
    q = _random_q(seed, m)
    X = np.random.default_rng(seed + 1).normal(size=(80, 3))
    Q = q.predict(X)
    dl = build_decision_list(q, X, ListConfig())
    rec = dl.action_indices(X, q.actions)
    assert Q[np.arange(80), rec].mean() >= Q.mean(axis=0).max() - 1e-12


def test_covered_everything_falls_back_to_global_best():
    Q = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 5.0]])
    X = np.array([[0.0], [0.0], [1.0]])
    dl = grow_list(Q, X, (0, 1), 0.0, 0.0, 10)
    assert dl.clauses[-1].region == Region.all()


def test_assign_folds_keyed_to_ids():
    ids = np.arange(20)
    f1 = assign_folds(ids, 5, 3)
    perm = np.random.default_rng(0).permutation(20)
    f2 = assign_folds(ids[perm], 5, 3)
    assert np.array_equal(f1[perm], f2)
    assert np.all(np.bincount(f1) == 4)


def test_tune_singleton_grid():
    q = _random_q(0, 2)
    X = np.random.default_rng(0).normal(size=(30, 3))
    cfg = ListConfig(zeta_grid=(0.05,), eta_grid=(0.01,), grid_scale="absolute")
    assert tuple(tune_zeta_eta(X, lambda rows: q, cfg, np.arange(30) % 5)) == (0.05, 0.01)


def test_tune_returns_argmax_and_tie_rule():
    q = _random_q(1, 2)
    X = np.random.default_rng(1).normal(size=(40, 3))
    choice = tune_zeta_eta(X, lambda rows: q, ListConfig(grid_scale="absolute"), np.arange(40) % 5)
    assert choice.scores[choice.zeta, choice.eta] == max(choice.scores.values())
    const = qset(lambda X: np.ones(len(X)), lambda X: np.ones(len(X)))
    flat = tune_zeta_eta(X, lambda rows: const, ListConfig(grid_scale="absolute"), np.arange(40) % 5)
    assert len(set(flat.scores.values())) == 1 and (flat.zeta, flat.eta) == (0.0, 0.0)


def test_grid_scale_multiplies_by_scale():
    q = _random_q(2, 2)
    X = np.random.default_rng(2).normal(size=(30, 3))
    choice = tune_zeta_eta(X, lambda rows: q, ListConfig(), np.arange(30) % 5, scale=10.0)
    assert set(z for z, _ in choice.scores) == {0.0, 0.1, 0.5, 1.0, 5.0}


def test_list_config_validation():
    for bad in (dict(l_max=0), dict(zeta_grid=()), dict(folds=1), dict(eta=-1.0)):
        with pytest.raises(ValueError):
            ListConfig(**bad)
