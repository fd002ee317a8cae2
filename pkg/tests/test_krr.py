import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import approx_fprime

from listdtr.krr import (KernelParams, KrrSearchConfig, _LooObjective, default_params, fit_krr,
                         gram_matrix, kernel_eval, loocv_explicit, loocv_mse, predict, tune_krr)


def test_kernel_closed_forms():
    assert kernel_eval(KernelParams([1.0]), [0.0], [1.0]) == pytest.approx(0.3678794, abs=1e-7)
    assert kernel_eval(KernelParams([1.0, 2.0]), [0.0, 0.0], [1.0, 1.0]) == pytest.approx(np.exp(-3))
    x = np.array([0.3, -2.0])
    assert kernel_eval(KernelParams([5.0, 0.1]), x, x) == 1.0


def test_kernel_rejects_bad_input():
    with pytest.raises(ValueError):
        kernel_eval(KernelParams([1.0]), [0.0, 1.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        KernelParams([1.0, 0.0])


def test_gram_matches_pairwise():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(5, 2))
    p = KernelParams([0.7, 1.3])
    K = gram_matrix(p, X)
    ref = np.array([[kernel_eval(p, a, b) for b in X] for a in X])
    assert np.allclose(K, ref, rtol=0, atol=1e-14)
    assert np.array_equal(K, K.T)
    assert np.all(np.diag(K) == 1.0)


def test_gram_single_row_and_duplicates():
    assert np.array_equal(gram_matrix(KernelParams([1.0]), np.array([[2.0]])), [[1.0]])
    X = np.array([[0.0], [1.0], [0.0]])
    K = gram_matrix(KernelParams([1.0]), X)
    assert np.array_equal(K[0], K[2])
    assert np.linalg.eigvalsh(K).min() > -1e-12


def test_scalar_fit():
    m = fit_krr(np.array([[0.0]]), np.array([2.0]), KernelParams([1.0]), 0.5)
    assert m.beta[0] == pytest.approx(4 / 3)


def test_large_ridge_limit():
    rng = np.random.default_rng(1)
    X, y = rng.normal(size=(8, 2)), rng.normal(size=8)
    m = fit_krr(X, y, KernelParams([1.0, 1.0]), 1e8)
    assert np.allclose(m.beta * 8 * 1e8, y, rtol=1e-6)
    assert np.max(np.abs(m.predict(X))) < 1e-6


def test_representer_residual_and_clip():
    rng = np.random.default_rng(2)
    X, y = rng.normal(size=(20, 3)), rng.normal(size=20)
    p = KernelParams([0.5, 1.0, 2.0])
    m = fit_krr(X, y, p, 1e-3)
    A = gram_matrix(p, X) + 20 * 1e-3 * np.eye(20)
    assert np.linalg.norm(A @ m.beta - y) <= 1e-8 * np.linalg.norm(y)
    assert m.bound == np.max(np.abs(y))
    blown = fit_krr(X, y, p, 1e-3, bound=0.1)
    assert np.all(np.abs(blown.predict(rng.normal(size=(50, 3)))) <= 0.1)


def test_predict_zero_beta_and_clip():
    m = fit_krr(np.zeros((1, 1)), np.zeros(1), KernelParams([1.0]), 1.0, bound=1.0)
    assert predict(m, [3.0]) == 0.0
    m = fit_krr(np.zeros((1, 1)), np.array([1.0]), KernelParams([1.0]), 1e-12, bound=0.1)
    assert m.raw(np.zeros((1, 1)))[0] > 0.1 * 9
    assert predict(m, [0.0]) == 0.1


def test_interpolation_limit():
    rng = np.random.default_rng(3)
    X, y = rng.uniform(-1, 1, size=(10, 1)), rng.normal(size=10)
    m = fit_krr(X, y, KernelParams([20.0]), 1e-10)
    assert np.max(np.abs(m.predict(X) - y)) < 1e-4


def test_duplicate_rows_need_jitter_only_when_ridge_vanishes():
    X = np.array([[0.0], [0.0], [1.0]])
    m = fit_krr(X, np.array([1.0, 1.0, 0.0]), KernelParams([1.0]), 1e-9)
    assert np.all(np.isfinite(m.beta))


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 30), st.integers(1, 4), st.floats(1e-4, 1.0), st.integers(0, 10_000))
def test_loocv_shortcut_matches_refits(n, d, lam, seed):
    rng = np.random.default_rng(seed)
    X, y = rng.normal(size=(n, d)), rng.normal(size=n)
    p = KernelParams(rng.uniform(0.1, 2.0, d))
    assert abs(loocv_mse(X, y, p, lam) - loocv_explicit(X, y, p, lam)) <= 1e-6


def test_loocv_large_ridge_and_constant_response():
    rng = np.random.default_rng(4)
    X, y = rng.normal(size=(15, 2)), rng.normal(size=15)
    assert loocv_mse(X, y, KernelParams([1.0, 1.0]), 1e9) == pytest.approx(np.mean(y ** 2), rel=1e-6)
    c = 3.0
    assert loocv_mse(X, np.full(15, c), KernelParams([0.1, 0.1]), 1e-2) < c ** 2


def test_loocv_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    X, y = rng.normal(size=(12, 3)), rng.normal(size=12)
    obj = _LooObjective([(X, y)])
    theta = np.r_[np.log([0.3, 1.0, 0.1]), np.log(0.01)]
    f, g = obj(theta)
    num = approx_fprime(theta, lambda t: obj(t, grad=False), 1e-6)
    assert np.allclose(g, num, rtol=1e-4, atol=1e-7)
    assert f == pytest.approx(loocv_mse(X, y, KernelParams(np.exp(theta[:-1])), 0.01))


def test_pooled_objective_is_weighted_cell_average():
    rng = np.random.default_rng(6)
    X, y = rng.normal(size=(20, 2)), rng.normal(size=20)
    groups = np.repeat([0, 1], [8, 12])
    p = KernelParams([0.5, 2.0])
    obj = _LooObjective([(X[groups == g], y[groups == g]) for g in (0, 1)])
    f = obj(np.r_[np.log(p.gamma), np.log(0.05)], grad=False)
    want = (8 * loocv_mse(X[:8], y[:8], p, 0.05) + 12 * loocv_mse(X[8:], y[8:], p, 0.05)) / 20
    assert f == pytest.approx(want, rel=1e-12)


def test_singleton_grid_returns_that_point():
    rng = np.random.default_rng(7)
    X, y = rng.normal(size=(10, 2)), rng.normal(size=10)
    cfg = KrrSearchConfig(method="grid", grid_gamma=(0.5,), grid_lambda=(0.01,), standardize=False)
    res = tune_krr(X, y, cfg)
    assert np.allclose(res.params.gamma, 0.5) and res.lam == pytest.approx(0.01)


@pytest.mark.parametrize("method", ["quasi_newton", "coordinate", "grid"])
def test_tuned_point_is_best_evaluated(method):
    rng = np.random.default_rng(8)
    X = rng.normal(size=(25, 2))
    y = np.sin(2 * X[:, 0]) + 0.1 * rng.normal(size=25)
    res = tune_krr(X, y, KrrSearchConfig(method=method, iterations=10), seed=3)
    assert res.objective <= min(f for _, f in res.evaluations)
    params, lam = res
    assert res.objective == pytest.approx(loocv_mse(X, y, params, lam), rel=1e-8)


def test_tuning_is_deterministic():
    rng = np.random.default_rng(9)
    X, y = rng.normal(size=(20, 3)), rng.normal(size=20)
    a, b = tune_krr(X, y, seed=11), tune_krr(X, y, seed=11)
    assert np.array_equal(a.params.gamma, b.params.gamma) and a.lam == b.lam


def test_signal_dimension_gets_largest_scale():
    wins = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(40, 3))
        g = tune_krr(X, X[:, 0].copy(), seed=seed).params.gamma
        wins += g[0] >= g[1] and g[0] >= g[2]
    assert wins >= 16


def test_constant_response_is_degenerate():
    X = np.random.default_rng(10).normal(size=(6, 2))
    res = tune_krr(X, np.full(6, 2.0))
    assert res.degenerate
    params, lam = default_params(X)
    assert np.array_equal(res.params.gamma, params.gamma) and res.lam == lam


def test_offset_shifts_the_fit():
    rng = np.random.default_rng(12)
    X, y = rng.normal(size=(15, 2)), rng.normal(size=15)
    p = KernelParams([0.4, 1.1])
    base = fit_krr(X, y - 3.0, p, 1e-2, bound=50.0)
    shifted = fit_krr(X, y, p, 1e-2, bound=50.0, offset=3.0)
    assert np.array_equal(base.beta, shifted.beta)
    Z = rng.normal(size=(8, 2))
    assert np.allclose(shifted.predict(Z), base.predict(Z) + 3.0, rtol=0, atol=1e-12)
    # far from the data the kernel part vanishes and the offset remains
    assert shifted.predict(np.full((1, 2), 1e3))[0] == pytest.approx(3.0)


def test_search_config_validation():
    with pytest.raises(ValueError):
        KrrSearchConfig(method="newton")
    with pytest.raises(ValueError):
        KrrSearchConfig(starts=0)
    with pytest.raises(ValueError):
        KrrSearchConfig(center="median")
