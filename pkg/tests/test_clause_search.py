import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from listdtr.clause_search import (PrefixTree, WeightPanel, best_clause, best_threshold_1d,
                                   best_thresholds_2d, brute_force_best_clause, objective_eval)
from listdtr.errors import ClauseSearchError
from listdtr.model import Region, empirical_rho


def _panel(X, U, active=None):
    X = np.asarray(X, dtype=float)
    X = X[:, None] if X.ndim == 1 else X
    U = np.asarray(U, dtype=float)
    U = U[:, None] if U.ndim == 1 else U
    if active is None:
        active = np.ones(X.shape[0], bool)
    return WeightPanel(X, U, active, tuple(range(U.shape[1])))


def random_panel(rng, n_max=120, d_max=4, m_max=3):
    n = int(rng.integers(1, n_max))
    d = int(rng.integers(1, d_max + 1))
    m = int(rng.integers(1, m_max + 1))
    if rng.random() < 0.5:
        X = rng.integers(0, 6, size=(n, d)).astype(float)
    else:
        X = rng.normal(size=(n, d)).round(1)
    U = rng.normal(size=(n, m))
    if rng.random() < 0.3:
        U = rng.integers(-2, 3, size=(n, m)).astype(float)
    active = rng.random(n) < 0.8
    active[rng.integers(n)] = True
    return _panel(X, U, active)


# --- objective -----------------------------------------------------------------

def test_objective_eval_examples():
    p = _panel([1.0, 2.0, 3.0], [-1.0, 2.0, -3.0])
    assert objective_eval(p, Region.le(0, 0.0), 0, 0.1) == np.inf
    assert objective_eval(p, Region.all(), 0, 0.1) == pytest.approx(-2 / 3 - 0.2)
    assert objective_eval(p, Region.all(), 0, 0.0) == pytest.approx(-2 / 3)
    assert objective_eval(p, Region.le(0, 1.0), 0, 0.5) == pytest.approx(-1 / 3 - 0.5)


def test_inactive_rows_do_not_count():
    p = _panel([1.0, 2.0], [5.0, -1.0], active=[False, True])
    assert objective_eval(p, Region.le(0, 1.0), 0, 0.0) == np.inf
    assert objective_eval(p, Region.all(), 0, 0.0) == pytest.approx(-0.5)


# --- one-variable scan ----------------------------------------------------------

def test_1d_examples():
    assert best_threshold_1d([1, 2, 3], [-1, 2, -3]) == (3.0, -2.0)
    assert best_threshold_1d([1, 1, 2], [5, -10, 1]) == (1.0, -5.0)
    assert best_threshold_1d([3, 1, 2], [1, 2, 0.5]) == (1.0, 2.0)
    assert best_threshold_1d([1, 2, 3], [-1, 2, -3], "GT") == (2.0, -3.0)


def test_1d_gt_needs_two_distinct_values():
    assert best_threshold_1d([4.0, 4.0], [-1.0, -1.0], "GT") == (None, np.inf)


# --- two-variable scan ------------------------------------------------------------

def test_2d_single_point():
    assert best_thresholds_2d([0.5], [2.0], [-1.0]) == (0.5, 2.0, -1.0)


def test_2d_grid_corner():
    x1 = [0.0, 0.0, 1.0, 1.0]
    x2 = [0.0, 1.0, 0.0, 1.0]
    U = [-5.0, 1.0, 1.0, 1.0]
    assert best_thresholds_2d(x1, x2, U) == (0.0, 0.0, -5.0)
    assert best_thresholds_2d(x1, x2, [1.0, 1.0, 1.0, -5.0], "GT_GT") == (0.0, 0.0, -5.0)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["LE_LE", "LE_GT", "GT_LE", "GT_GT"]))
def test_2d_matches_direct_enumeration(seed, quadrant):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 60))
    x1 = rng.integers(0, 8, n).astype(float)
    x2 = rng.integers(0, 8, n).astype(float)
    U = rng.normal(size=n)
    ops = {"LE": np.less_equal, "GT": np.greater}
    s1, s2 = quadrant.split("_")
    best = np.inf
    for t1 in np.unique(x1):
        for t2 in np.unique(x2):
            m = ops[s1](x1, t1) & ops[s2](x2, t2)
            if m.any():
                best = min(best, U[m].sum())
    tau1, tau2, val = best_thresholds_2d(x1, x2, U, quadrant)
    assert val == pytest.approx(best, abs=1e-12) if np.isfinite(best) else val == np.inf
    if np.isfinite(best):
        m = ops[s1](x1, tau1) & ops[s2](x2, tau2)
        assert U[m].sum() == pytest.approx(val, abs=1e-12)


# --- prefix tree ------------------------------------------------------------------

def test_tree_two_inserts_either_order():
    for order in ([(0, 1.0), (1, -2.0)], [(1, -2.0), (0, 1.0)]):
        tree = PrefixTree(2)
        for r, u in order:
            tree.insert(r, u)
        assert tree.best() == -1.0 and tree.best_rank() == 1


def test_tree_empty_and_bounds():
    tree = PrefixTree(3)
    assert tree.best() == np.inf and tree.best_rank() == -1
    with pytest.raises(ClauseSearchError):
        tree.insert(4, 1.0)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 16).flatmap(lambda cap: st.lists(
    st.tuples(st.integers(0, cap - 1), st.integers(-4, 4).map(float)), min_size=1, max_size=24)
    .map(lambda ins: (cap, ins))))
def test_tree_root_equals_best_occupied_prefix(case):
    cap, inserts = case
    tree = PrefixTree(cap)
    leaf = np.zeros(cap)
    occupied = np.zeros(cap, bool)
    for r, u in inserts:
        tree.insert(r, u)
        leaf[r] += u
        occupied[r] = True
        prefix = np.cumsum(leaf)
        want = prefix[occupied].min()
        assert tree.best() == want
        assert prefix[tree.best_rank()] == want and occupied[tree.best_rank()]


def test_tree_exhaustive_small_capacities():
    for cap in (1, 2, 3, 4):
        for ranks in itertools.permutations(range(cap)):
            for signs in itertools.product((-1.0, 2.0), repeat=cap):
                tree = PrefixTree(cap)
                for r in ranks:
                    tree.insert(r, signs[r])
                assert tree.best() == np.cumsum(signs).min()


# --- full search ------------------------------------------------------------------

def test_all_clause_wins_when_uniformly_good():
    p = _panel(np.arange(5.0), -np.ones(5))
    res = best_clause(p, 0.0)
    assert res.region == Region.all() and res.covered_count == 5


def test_penalty_shifts_toward_simple_regions():
    X = np.arange(6.0)
    U = np.array([-1.0, -1.0, -1.0, 0.2, 0.2, 0.2])
    assert best_clause(_panel(X, U), 0.0).region == Region.le(0, 2.0)
    assert best_clause(_panel(X, U), 1.0).region == Region.all()


def test_requires_active_subject():
    with pytest.raises(ClauseSearchError):
        best_clause(_panel([1.0], [1.0], active=[False]), 0.0)


def test_brute_force_guard():
    rng = np.random.default_rng(0)
    p = _panel(rng.normal(size=(501, 1)), rng.normal(size=501))
    with pytest.raises(ClauseSearchError):
        brute_force_best_clause(p, 0.0)


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([0.0, 0.001, 0.05]))
def test_fast_search_matches_brute_force(seed, eta):
    p = random_panel(np.random.default_rng(seed))
    fast, slow = best_clause(p, eta), brute_force_best_clause(p, eta)
    assert fast.objective == pytest.approx(slow.objective, abs=1e-9)
    assert fast.action == slow.action
    assert empirical_rho(fast.region, slow.region, p.X[p.active]) == 0.0
    assert objective_eval(p, fast.region, fast.action_index, eta) == pytest.approx(fast.objective,
                                                                                  abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_result_constant_between_observed_values(seed):
    rng = np.random.default_rng(seed)
    p = _panel(rng.integers(0, 10, size=(40, 2)).astype(float), rng.normal(size=(40, 2)))
    res = best_clause(p, 0.01)
    r = res.region
    if r.tau1 is None:
        return
    vals = np.unique(p.X[:, r.j1])
    above = vals[vals > r.tau1]
    if above.size:
        mid = Region(r.form, r.j1, (r.tau1 + above[0]) / 2, r.j2, r.tau2)
        assert np.array_equal(mid.mask(p.X), r.mask(p.X))
        assert objective_eval(p, mid, res.action_index, 0.01) == objective_eval(p, r, res.action_index, 0.01)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_rank_invariance(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(50, 3))
    U = rng.normal(size=(50, 2))
    a = best_clause(_panel(X, U), 0.01)
    b = best_clause(_panel(X ** 3 + 2 * X, U), 0.01)
    assert a.objective == pytest.approx(b.objective, abs=1e-12)
    assert np.array_equal(a.region.mask(X), b.region.mask(X ** 3 + 2 * X))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 2))
def test_reflection_symmetry(seed, col):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(50, 3))
    U = rng.normal(size=(50, 2))
    flipped = X.copy()
    flipped[:, col] *= -1
    a = best_clause(_panel(X, U), 0.01)
    b = best_clause(_panel(flipped, U), 0.01)
    assert a.objective == pytest.approx(b.objective, abs=1e-12)
    assert np.array_equal(a.region.mask(X), b.region.mask(flipped))


def test_candidate_columns_restrict_search():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(30, 3))
    U = np.where(X[:, [0]] < 0, -1.0, 1.0) * np.ones((30, 1))
    res = best_clause(_panel(X, U), 0.0, candidate_columns=[1, 2])
    assert res.region.n_vars == 0 or 0 not in (res.region.j1, res.region.j2)
