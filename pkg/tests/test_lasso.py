"""Coordinate-descent LASSO: path, cross-validation, and optimality checks."""

import numpy as np
import pytest

from zoneppi.lasso import (
    TOL,
    ConvergenceError,
    ControlFunction,
    LassoFit,
    cv_curve,
    cv_folds,
    cv_select,
    fit_lasso_path,
    intercept_only,
    kkt_max_violation,
    lambda_grid,
    soft_threshold,
)


def well_conditioned(m=200, q=7, seed=0, noise=1.0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(m, q))
    beta = np.zeros(q)
    beta[: min(3, q)] = [1.5, -2.0, 0.5][: min(3, q)]
    y = X @ beta + noise * rng.normal(size=m)
    return X, y


class TestSoftThreshold:
    def test_zero_input(self):
        assert soft_threshold(0.0, 1.0) == 0.0

    def test_shrinks_toward_zero(self):
        assert soft_threshold(3.0, 1.0) == 2.0
        assert soft_threshold(-3.0, 1.0) == -2.0

    def test_below_threshold_clips(self):
        assert soft_threshold(-0.5, 1.0) == 0.0

    def test_negative_threshold_rejected(self):
        with pytest.raises(ValueError):
            soft_threshold(1.0, -0.1)


class TestLassoPath:
    def test_constant_response(self):
        X, _ = well_conditioned()
        y = np.full(200, 3.25)
        fits = fit_lasso_path(X, y)
        for f in fits:
            assert np.all(f.coefficients == 0.0)
            assert f.intercept == pytest.approx(3.25)

    def test_all_zero_at_lambda_max(self):
        X, y = well_conditioned()
        fits = fit_lasso_path(X, y)
        assert np.all(fits[0].coefficients == 0.0)
        assert fits[0].penalty == lambda_grid(X, y)[0]

    def test_single_column_perfect_correlation(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(100, 1))
        y = 3.0 * x[:, 0] + 0.5
        fits = fit_lasso_path(x, y)
        assert fits[-1].penalty == 0.0
        assert fits[-1].coefficients[0] == pytest.approx(3.0, abs=1e-6)

    def test_unpenalized_matches_qr_oracle(self):
        X, y = well_conditioned()
        fits = fit_lasso_path(X, y)
        assert fits[-1].penalty == 0.0
        ols = np.linalg.lstsq(np.column_stack([np.ones(len(y)), X]), y, rcond=None)[0]
        np.testing.assert_allclose(fits[-1].coefficients, ols[1:], atol=1e-5)
        assert fits[-1].intercept == pytest.approx(ols[0], abs=1e-5)

    def test_kkt_along_path(self):
        X, y = well_conditioned(seed=5)
        for fit in fit_lasso_path(X, y):
            assert kkt_max_violation(X, y, fit) <= 10 * TOL

    def test_objective_decreases_along_path(self):
        # weaker penalties can only lower the unpenalized residual objective
        X, y = well_conditioned(seed=2)
        m = len(y)
        rss = [np.square(y - f.predict(X)).sum() / (2 * m) for f in fit_lasso_path(X, y)]
        assert all(b <= a + 1e-12 for a, b in zip(rss, rss[1:]))

    def test_standardization_round_trip(self):
        X, y = well_conditioned(seed=7)
        means, stds = X.mean(axis=0), X.std(axis=0)
        Xs = (X - means) / stds
        for fit in fit_lasso_path(X, y)[::25]:
            b_std = fit.coefficients * stds
            pred_std = (y.mean() - 0.0) + Xs @ b_std + (means @ fit.coefficients - means @ fit.coefficients)
            np.testing.assert_allclose(fit.predict(X), y.mean() + Xs @ b_std, atol=1e-10)

    def test_constant_column_pinned_to_zero(self):
        X, y = well_conditioned()
        X = X.copy()
        X[:, 4] = 2.0
        fits = fit_lasso_path(X, y)
        assert all(f.coefficients[4] == 0.0 for f in fits)

    def test_aliased_column_pinned_to_zero(self):
        X, y = well_conditioned(seed=9)
        X = X.copy()
        X[:, 6] = X[:, 0] * 1.0 + 1e-9 * X[:, 1]
        fits = fit_lasso_path(X, y)
        assert all(f.coefficients[6] == 0.0 for f in fits)
        assert kkt_max_violation(X, y, fits[-1]) <= 10 * TOL

    def test_too_few_rows(self):
        with pytest.raises(ValueError):
            fit_lasso_path(np.ones((1, 2)), np.ones(1))

    def test_non_finite_design(self):
        X, y = well_conditioned(m=10, q=2)
        X = X.copy()
        X[0, 0] = np.nan
        with pytest.raises(ValueError):
            fit_lasso_path(X, y)

    def test_convergence_error_carries_lambda_index(self):
        X, y = well_conditioned(m=50, q=4, seed=3)
        with pytest.raises(ConvergenceError) as err:
            fit_lasso_path(X, y, max_sweeps=1)
        assert err.value.lambda_index >= 0

    def test_custom_lambda_sequence(self):
        X, y = well_conditioned(m=60, q=3)
        fits = fit_lasso_path(X, y, lambdas=[0.5, 0.1, 0.0])
        assert [f.penalty for f in fits] == [0.5, 0.1, 0.0]


class TestCvSelect:
    def test_fold_sizes_even(self):
        sizes = sorted(len(f) for f in cv_folds(10, 5, 0))
        assert sizes == [2, 2, 2, 2, 2]

    def test_fold_sizes_within_one(self):
        sizes = sorted(len(f) for f in cv_folds(21, 5, 0))
        assert sizes == [4, 4, 4, 4, 5]

    def test_folds_partition_rows(self):
        folds = cv_folds(17, 4, 3)
        assert sorted(np.concatenate(folds)) == list(range(17))

    def test_deterministic_given_seed(self):
        X, y = well_conditioned(m=60)
        a = cv_select(X, y, 5, rng_seed=11)
        b = cv_select(X, y, 5, rng_seed=11)
        assert a.penalty == b.penalty
        np.testing.assert_array_equal(a.coefficients, b.coefficients)

    def test_m_below_k_rejected(self):
        X, y = well_conditioned(m=4, q=2)
        with pytest.raises(ValueError):
            cv_select(X, y, k=5)

    def test_selected_no_worse_than_least_penalized(self):
        # pure noise: the CV minimizer cannot lose to the unpenalized end
        rng = np.random.default_rng(0)
        for rep in range(50):
            X = rng.normal(size=(200, 7))
            y = rng.normal(size=200)
            grid, cv_mean, _ = cv_curve(X, y, 5, rng_seed=rep)
            assert cv_mean.min() <= cv_mean[-1] + 1e-12
            sel = cv_select(X, y, 5, rng_seed=rep)
            assert sel.cv_error == pytest.approx(cv_mean.min())

    def test_noiseless_signal_recovered(self):
        rng = np.random.default_rng(4)
        X = rng.normal(size=(100, 3))
        y = 2.0 * X[:, 0]
        sel = cv_select(X, y, 5, rng_seed=1)
        assert sel.coefficients[0] == pytest.approx(2.0, abs=0.05)

    def test_one_se_rule_picks_stronger_penalty(self):
        X, y = well_conditioned(m=120, seed=8, noise=2.0)
        lo = cv_select(X, y, 5, rng_seed=2, rule="min")
        hi = cv_select(X, y, 5, rng_seed=2, rule="1se")
        assert hi.penalty >= lo.penalty


class TestControlFunction:
    def test_evaluate_row_and_matrix(self):
        fit = LassoFit(intercept=0.5, coefficients=np.array([2.0, 0.0, 1.0]), penalty=0.1)
        cf = ControlFunction(fit, include_prediction=True)
        row = np.array([1.0, 3.0, -1.0, 4.0])
        assert cf.evaluate(row) == pytest.approx(0.5 + 6.0 + 4.0)
        mat = np.vstack([row, 2 * row])
        np.testing.assert_allclose(cf.evaluate(mat), [10.5, 20.5])

    def test_intercept_only(self):
        cf = intercept_only(2.5, include_prediction=False, n_columns=5)
        assert cf.fallback
        assert cf.evaluate(np.array([1.0, 9, 9, 9, 9, 9])) == 2.5
