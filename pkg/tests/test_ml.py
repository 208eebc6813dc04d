import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.linear_model import Lasso

from seqid.dgp import DgpConfig, simulate
from seqid.ml import (DataError, Dataset, MomentTable, _sse, _sum_blocks, crossfit_means,
                      lambda_grid, lambda_max, lasso_fit, lasso_objective, make_folds, select_lambda)


def orthonormal_design(n, p, rng):
    q, _ = np.linalg.qr(rng.standard_normal((n, p)))
    q -= q.mean(axis=0)
    q, _ = np.linalg.qr(q)
    X = q * np.sqrt(n)  # centred columns with X'X/n = I
    return X


def soft(z, lam):
    return np.sign(z) * np.maximum(np.abs(z) - lam, 0.0)


def test_soft_threshold_oracle():
    rng = np.random.default_rng(0)
    n, p = 400, 12
    X = orthonormal_design(n, p, rng)
    beta = np.array([2, -1.5, 1, 0.5, -0.3, 0.1, 0, 0, 0, 0, 0, 0.05])
    y = X @ beta + rng.standard_normal(n) + 3.0
    z = X.T @ (y - y.mean()) / n
    for lam in (0.0, 0.05, 0.2, 0.7, 1.6):
        fit = lasso_fit(X, y, lam)
        assert np.max(np.abs(fit.coefficients - soft(z, lam))) <= 1e-6
        assert abs(fit.intercept - y.mean()) <= 1e-6


def test_lambda_max_gives_exact_zeros():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((200, 30)) * rng.uniform(0.5, 3, 30) + 1
    y = X[:, 0] - 2 * X[:, 3] + rng.standard_normal(200)
    lmax = lambda_max(X, y)
    Xs = (X - X.mean(0)) / X.std(0)
    assert lmax == pytest.approx(np.max(np.abs(Xs.T @ (y - y.mean()))) / 200, rel=1e-10)
    for lam in (lmax, lmax * 1.5):
        assert np.all(lasso_fit(X, y, lam).coefficients == 0.0)
    assert np.any(lasso_fit(X, y, lmax * 0.99).coefficients != 0.0)


def test_unpenalised_limit_is_ols():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((300, 8)) @ np.triu(np.ones((8, 8))) * 0.3
    y = X @ rng.standard_normal(8) + rng.standard_normal(300)
    fit = lasso_fit(X, y, 0.0)
    A = np.column_stack([np.ones(300), X])
    coef = np.linalg.lstsq(A, y, rcond=None)[0]
    assert abs(fit.intercept - coef[0]) <= 1e-6
    assert np.max(np.abs(fit.coefficients - coef[1:])) <= 1e-6


def test_matches_sklearn_on_standardized_columns():
    rng = np.random.default_rng(3)
    X = rng.standard_normal((250, 20))
    X[:, 1] += 0.8 * X[:, 0]
    y = X[:, 0] - X[:, 1] + 0.5 * X[:, 5] + rng.standard_normal(250)
    Xs = (X - X.mean(0)) / X.std(0)
    for lam in (0.01, 0.1, 0.3):
        ours = lasso_fit(Xs, y, lam)
        ref = Lasso(alpha=lam, tol=1e-12, max_iter=100000).fit(Xs, y)
        assert np.max(np.abs(ours.coefficients - ref.coef_)) < 1e-5
        assert abs(ours.intercept - ref.intercept_) < 1e-5


def test_zero_variance_column_and_errors():
    rng = np.random.default_rng(4)
    X = rng.standard_normal((50, 3))
    X[:, 1] = 7.0
    y = X[:, 0] + rng.standard_normal(50)
    fit = lasso_fit(X, y, 0.0)
    assert fit.coefficients[1] == 0.0
    X[3, 2] = np.nan
    with pytest.raises(DataError):
        lasso_fit(X, y, 0.1)
    with pytest.raises(DataError):
        lasso_fit(X[:1], y[:1], 0.1)


def test_objective_non_increasing_over_sweeps():
    rng = np.random.default_rng(5)
    X = rng.standard_normal((120, 40))
    X[:, 1:] += 0.6 * X[:, :-1]
    y = X[:, :5].sum(axis=1) + rng.standard_normal(120)
    Xs = (X - X.mean(0)) / X.std(0)
    lam = 0.05
    objs = [lasso_objective(lasso_fit(Xs, y, lam, max_sweeps=k), Xs, y) for k in range(1, 30)]
    assert all(b <= a + 1e-12 for a, b in zip(objs, objs[1:]))


def test_lambda_grid():
    g = lambda_grid(2.0)
    assert g.size == 50 and g[0] == 2.0 and g[-1] == pytest.approx(2e-3)
    assert np.allclose(np.diff(np.log(g)), np.log(1e-3) / 49)


def test_folds():
    fa = make_folds(103, 4, seed=9)
    sizes = fa.sizes()
    assert sizes.max() - sizes.min() <= 1 and sizes.sum() == 103
    assert set(np.unique(fa.fold_of)) == {1, 2, 3, 4}
    assert np.array_equal(fa.fold_of, make_folds(103, 4, seed=9).fold_of)
    assert not np.array_equal(fa.fold_of, make_folds(103, 4, seed=10).fold_of)
    with pytest.raises(DataError):
        make_folds(3, 5, seed=0)


def test_select_lambda_noise_and_signal():
    rng = np.random.default_rng(6)
    sizes = []
    for r in range(10):
        X = rng.standard_normal((500, 30))
        y = rng.standard_normal(500)
        lam = select_lambda(X, y, 5, seed=r)
        sizes.append(np.count_nonzero(lasso_fit(X, y, lam).coefficients))
    assert np.mean(sizes) <= 2
    X = rng.standard_normal((500, 30))
    y = -0.8 * X[:, 4] + rng.standard_normal(500)
    fit = lasso_fit(X, y, select_lambda(X, y, 5))
    assert fit.coefficients[4] < 0
    with pytest.raises(DataError):
        select_lambda(X[:3], y[:3], 5)


def test_moment_sse_matches_direct():
    rng = np.random.default_rng(7)
    A = rng.standard_normal((90, 6))
    block = rng.integers(0, 4, 90)
    mt = MomentTable(A, block, 4)
    mom = mt.regression([0, 1, 2, 3], 5)
    mask = np.array([True, False, True, False])
    tot = _sum_blocks(mom, mask)
    a = np.array([0.3, -1.0])
    b = rng.standard_normal((2, 4))
    rows = np.isin(block, [0, 2])
    direct = ((A[rows, 5][None, :] - a[:, None] - b @ A[rows, :4].T) ** 2).sum(axis=1)
    assert np.allclose(_sse(tot, a, b), direct)
    t = rng.standard_normal(90)
    mom2 = mt.regression([0, 1], t)
    assert np.allclose(mom2[4].sum(axis=0), A[:, :2].T @ t)


def brute_cv_lambda(X, y, fold_of, k):
    """Independent CV: refit every grid point with lasso_fit on each training split."""
    grid = lambda_grid(lambda_max(X, y))
    err = np.zeros(grid.size)
    for j in range(1, k + 1):
        tr, va = fold_of != j, fold_of == j
        for i, lam in enumerate(grid):
            fit = lasso_fit(X[tr], y[tr], lam)
            err[i] += np.sum((y[va] - fit.predict(X[va])) ** 2)
    return grid[int(np.argmin(err))]


def test_select_lambda_matches_brute_force_cv():
    rng = np.random.default_rng(8)
    X = rng.standard_normal((150, 10))
    y = X[:, 0] - 0.5 * X[:, 1] + rng.standard_normal(150)
    fa = make_folds(150, 5, seed=3)
    assert select_lambda(X, y, 5, seed=3) == pytest.approx(brute_cv_lambda(X, y, fa.fold_of, 5), rel=1e-9)


def small_data(n=300, seed=0, **kw):
    return simulate(DgpConfig(n=n, p=20, seed=seed, **kw))


def test_crossfit_shapes_and_reproducibility():
    data = small_data()
    a = crossfit_means(data, "baseline", 2, seed=4)
    b = crossfit_means(data, "baseline", 2, seed=4)
    assert a.eta1.shape == (300, 3) and a.eta2.shape == (300, 3)
    assert np.array_equal(a.eta1, b.eta1) and np.array_equal(a.eta2, b.eta2)
    assert np.array_equal(a.folds.fold_of, b.folds.fold_of)


def test_crossfit_honesty():
    # changing outcomes inside one fold leaves that fold's predictions untouched
    data = small_data()
    base = crossfit_means(data, "baseline", 2, seed=1)
    rows = base.folds.fold_of == 1
    y = data.y.copy()
    y[rows] = np.random.default_rng(0).permutation(y[rows]) + 5.0
    alt = Dataset(y, data.d, data.m, data.z1, data.z2, data.x)
    moved = crossfit_means(alt, "baseline", 2, seed=1)
    # models for fold 1 are trained on fold 2 only
    for j in (0, 2):
        assert np.allclose(moved.eta1[rows, j], base.eta1[rows, j], atol=1e-8)
        assert np.allclose(moved.eta2[rows, j], base.eta2[rows, j], atol=1e-8)
    assert not np.allclose(moved.eta1[~rows, 0], base.eta1[~rows, 0])


def test_crossfit_leave_one_out_and_warnings():
    data = small_data(n=30, seed=2)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        preds = crossfit_means(data, "baseline", 30, seed=0)
    assert any("observations per fold" in str(w.message) for w in caught)
    assert np.all(np.isfinite(preds.eta1))


def test_posttreatment_needs_w():
    with pytest.raises(DataError, match="W block"):
        crossfit_means(small_data(), "posttreatment", 2, seed=0)


def test_null_gap_shrinks_with_n():
    gaps = []
    for n in (500, 4000):
        data = simulate(DgpConfig(n=n, p=20, seed=5))
        preds = crossfit_means(data, "baseline", 2, seed=5)
        gaps.append(np.mean((preds.eta1 - preds.eta2) ** 2))
    assert gaps[1] <= gaps[0] + 1e-12
    assert gaps[1] < 1e-3


def test_stratified_fits_run():
    data = small_data(n=600)
    preds = crossfit_means(data, "baseline", 2, seed=0, stratify_d=True)
    assert np.all(np.isfinite(preds.eta1))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 0.5))
def test_lasso_kkt(seed, frac):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((60, 8))
    y = X[:, 0] + rng.standard_normal(60)
    Xs = (X - X.mean(0)) / X.std(0)
    lam = frac * lambda_max(Xs, y)
    fit = lasso_fit(Xs, y, lam)
    grad = Xs.T @ (y - fit.predict(Xs)) / 60
    active = fit.coefficients != 0
    assert np.all(np.abs(grad[~active]) <= lam + 1e-6)
    assert np.allclose(grad[active], lam * np.sign(fit.coefficients[active]), atol=1e-5)
