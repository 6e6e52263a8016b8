import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from salaryshare import lasso as L
from salaryshare.preprocess import apply_scaler, fit_scaler

from lasso_oracles import grid_search_squared, logistic_reference, loo_tune_oracle


def _standardized(rng, n, p, corr=0.0):
    Z = rng.normal(size=(n, p))
    if corr:
        Z = Z + corr * rng.normal(size=(n, 1))
    return apply_scaler(Z, fit_scaler(Z))


def test_objective_matches_definition(rng):
    X = rng.normal(size=(10, 3))
    y = rng.normal(size=10)
    b = np.array([0.3, -1.0, 0.0])
    r = y - 0.2 - X @ b
    assert L.objective(X, y, 0.2, b, 1.7) == pytest.approx(r @ r + 1.7 * 1.3)


def test_grid_search_equivalence_small_problems(rng):
    for trial in range(12):
        n = int(rng.integers(3, 21))
        p = int(rng.integers(1, 3))
        X = _standardized(rng, n, p)
        y = X @ rng.uniform(-2, 2, p) + rng.normal(size=n)
        lam = L.lambda_max(X, y) * rng.uniform(0.0, 1.1)
        fit = L.lasso_fit(X, y, lam)
        grid_best, refined, _ = grid_search_squared(X, y, lam)
        assert fit.objective_value <= grid_best + 1e-6
        assert abs(fit.objective_value - refined) < 1e-6


def test_orthonormal_design_soft_threshold(rng):
    for trial in range(20):
        n, p = int(rng.integers(6, 40)), int(rng.integers(1, 6))
        Z = rng.normal(size=(n, p))
        Q, _ = np.linalg.qr(Z - Z.mean(axis=0))
        y = rng.normal(size=n) * 2 + 3
        b = Q.T @ (y - y.mean())
        lam = rng.uniform(0, 2 * np.abs(b).max())
        expected = np.sign(b) * np.maximum(np.abs(b) - lam / 2, 0)
        fit = L.lasso_fit(Q, y, lam)
        np.testing.assert_allclose(fit.coef, expected, atol=1e-8)
        assert fit.intercept == pytest.approx(y.mean(), abs=1e-8)


def test_scalar_closed_form_example():
    # one centred column of unit norm, OLS slope 1, lam 1: half the slope survives
    x = np.array([-1.0, 1.0]) / math.sqrt(2)
    y = x * 1.0
    fit = L.lasso_fit(x[:, None], y, 1.0)
    assert fit.coef[0] == pytest.approx(0.5, abs=1e-10)


def test_zero_penalty_is_least_squares(rng):
    X = _standardized(rng, 50, 6)
    y = X @ rng.normal(size=6) + 0.5 + rng.normal(size=50)
    fit = L.lasso_fit(X, y, 0.0)
    A = np.column_stack([np.ones(50), X])
    ref = np.linalg.solve(A.T @ A, A.T @ y)
    assert fit.intercept == pytest.approx(ref[0], abs=1e-8)
    np.testing.assert_allclose(fit.coef, ref[1:], atol=1e-8)
    assert L.kkt_residual(X, y, fit) < 1e-6
    exact = L.LassoFit(ref[0], ref[1:], 0.0, 0.0)
    assert L.kkt_residual(X, y, exact) < 1e-8


def test_lambda_max_zeroes_everything(rng):
    X = _standardized(rng, 30, 4)
    y = X[:, 0] + rng.normal(size=30)
    lmax = L.lambda_max(X, y)
    assert lmax == pytest.approx(np.max(np.abs(2 * X.T @ (y - y.mean()))))
    for lam in (lmax, 2 * lmax):
        fit = L.lasso_fit(X, y, lam)
        assert fit.selected == frozenset()
        assert fit.intercept == pytest.approx(y.mean())
        assert L.kkt_residual(X, y, fit) <= 1e-10
    assert L.lasso_fit(X, y, 0.99 * lmax).selected


def test_kkt_certificate_on_random_problems(rng):
    worst = 0.0
    for trial in range(40):
        n = int(rng.integers(5, 120))
        p = int(rng.integers(1, 51))
        X = _standardized(rng, n, p, corr=rng.choice([0.0, 2.0]))
        y = X[:, : min(3, p)].sum(axis=1) + rng.normal(size=n)
        lam = L.lambda_max(X, y) * 10 ** rng.uniform(-3, 0)
        fit = L.lasso_fit(X, y, lam)
        worst = max(worst, L.kkt_residual(X, y, fit))
    assert worst < 1e-6


def test_near_collinear_columns_certify(rng):
    # columns that are sums of others, as in box-score tables (PTS, TRB, FG)
    base = rng.normal(size=(200, 6))
    extra = np.column_stack([base[:, 0] + base[:, 1], base[:, 2] + 2 * base[:, 3] + base[:, 4]])
    Z = np.round(np.column_stack([base, extra]), 1)
    X = apply_scaler(Z, fit_scaler(Z))
    y = X[:, 6] + 0.5 * X[:, 5] + rng.normal(size=200)
    fits = L.lasso_path(X, y, L.lambda_grid(X, y))
    assert len(fits) == 100
    assert max(L.kkt_residual(X, y, f) for f in fits) < 1e-6


def test_perturbed_fit_detected(rng):
    X = _standardized(rng, 40, 3)
    y = X[:, 0] * 2 + rng.normal(size=40)
    fit = L.lasso_fit(X, y, 5.0)
    coef = fit.coef.copy()
    coef[0] += 0.1
    bad = L.LassoFit(fit.intercept, coef, fit.lam, 0.0)
    assert L.kkt_residual(X, y, bad) > 0.01


def test_lambda_grid_properties(rng):
    X = _standardized(rng, 25, 4)
    y = rng.normal(size=25)
    g = L.lambda_grid(X, y, n_lambda=2, ratio=0.1)
    np.testing.assert_allclose(g.values, [L.lambda_max(X, y), 0.1 * L.lambda_max(X, y)])
    g = L.lambda_grid(X, y)
    assert g.n_lambda == 100 and np.all(np.diff(g.values) < 0)
    assert L.lasso_fit(X, y, g.values[0]).selected == frozenset()
    with pytest.raises(ValueError):
        L.lambda_grid(X, y, n_lambda=1)


def test_path_objective_nondecreasing_in_lambda(rng):
    X = _standardized(rng, 60, 8, corr=1.0)
    y = X[:, :3] @ [1.0, -1.0, 0.5] + rng.normal(size=60)
    fits = L.lasso_path(X, y, L.lambda_grid(X, y, n_lambda=40))
    objs = [f.objective_value for f in fits][::-1]  # increasing lambda
    assert all(b >= a - 1e-9 for a, b in zip(objs, objs[1:]))


@given(st.floats(0.1, 20.0), st.integers(0, 10_000))
def test_scaling_covariance(c, seed):
    rng = np.random.default_rng(seed)
    X = _standardized(rng, 15, 2)
    y = X @ [1.0, -0.5] + rng.normal(size=15)
    lam = 0.3 * L.lambda_max(X, y)
    a = L.lasso_fit(X, y, lam)
    b = L.lasso_fit(X, c * y, c * lam)
    np.testing.assert_allclose(b.coef, c * a.coef, atol=1e-6 * max(1.0, c))


def test_objective_value_field_consistent(rng):
    X = _standardized(rng, 30, 5)
    y = rng.normal(size=30)
    fit = L.lasso_fit(X, y, 3.0)
    assert fit.objective_value == pytest.approx(L.objective(X, y, fit.intercept, fit.coef, 3.0), rel=1e-10)


def test_selected_features_ordering():
    fit = L.LassoFit(0.0, np.array([0.5, 0.0, -0.9]), 1.0, 0.0)
    assert L.selected_features(fit, ["feat1", "feat2", "feat3"]) == ["feat3", "feat1"]
    assert L.selected_features(L.LassoFit(0.0, np.zeros(3), 1.0, 0.0), ["a", "b", "c"]) == []


def test_dominant_features_listed_first(rng):
    names = ["EXP", "AGE", "G", "GS", "MP", "PTS", "AST"]
    X = _standardized(rng, 400, len(names))
    y = 1.5 * X[:, 0] + 1.2 * X[:, 4] + 0.2 * X[:, 5] + rng.normal(size=400)
    lam, _ = L.tune_lambda_cv(X, y, 10, rng_seed=1)
    fit = L.lasso_fit(X, y, lam, feature_names=names)
    assert L.selected_features(fit)[:2] == ["EXP", "MP"]


def test_bad_inputs():
    X = np.ones((3, 2))
    with pytest.raises(ValueError):
        L.lasso_fit(X, [1.0, np.nan, 2.0], 1.0)
    with pytest.raises(ValueError):
        L.lasso_fit(X, [1.0, 2.0], 1.0)
    with pytest.raises(ValueError):
        L.lasso_fit(X, [1.0, 2.0, 3.0], -1.0)


def test_non_convergence_reports_residual(rng):
    X = _standardized(rng, 100, 10, corr=5.0)
    y = X.sum(axis=1) + rng.normal(size=100)
    with pytest.raises(L.ConvergenceError) as info:
        L.lasso_fit(X, y, 1e-3, max_sweeps=1)
    assert info.value.residual > 1e-6


# ---------------------------------------------------------------- logistic


def test_logistic_large_penalty_gives_prevalence_intercept(rng):
    X = _standardized(rng, 40, 3)
    y = np.zeros(40)
    y[:10] = 1
    fit = L.logistic_lasso_fit(X, y, 1e6)
    assert fit.selected == frozenset()
    assert fit.intercept == pytest.approx(math.log(1 / 3), abs=1e-6)
    assert L.lambda_max(X, y, L.LOGISTIC) == pytest.approx(np.max(np.abs(X.T @ (y - 0.25))))


def test_logistic_thresholded_feature_selected(rng):
    X = _standardized(rng, 60, 2)
    y = (X[:, 1] > 0.2).astype(float)
    fit = L.logistic_lasso_fit(X, y, 2.0)
    assert 1 in fit.selected and fit.coef[1] > 0
    assert fit.coef[1] > abs(fit.coef[0])


def test_logistic_two_points():
    X = np.array([[-1.0], [1.0]])
    y = np.array([0.0, 1.0])
    # unpenalized: the likelihood keeps improving as the slope grows
    assert L.logistic_lasso_fit(X, y, 0.0).coef[0] > 0
    with pytest.raises(L.SeparationError):
        L.logistic_lasso_fit(X, y, 0.0, cap=5.0)
    fit = L.logistic_lasso_fit(X, y, 0.01)
    # stationarity: 2 * (1 - sigmoid(beta)) = lam
    assert fit.coef[0] == pytest.approx(math.log(2 / 0.01 - 1), abs=1e-4)


def test_logistic_matches_reference_solver(rng):
    for trial in range(10):
        n = int(rng.integers(20, 80))
        p = int(rng.integers(1, 6))
        X = _standardized(rng, n, p)
        eta = X @ rng.uniform(-1.5, 1.5, p) - 0.3
        y = (rng.uniform(size=n) < 1 / (1 + np.exp(-eta))).astype(float)
        if y.min() == y.max():
            continue
        lam = L.lambda_max(X, y, L.LOGISTIC) * rng.uniform(0.05, 0.8)
        fit = L.logistic_lasso_fit(X, y, lam)
        ref_obj, _, _ = logistic_reference(X, y, lam)
        assert fit.objective_value <= ref_obj + 1e-6
        assert L.kkt_residual(X, y, fit) < 1e-5


def test_logistic_single_class_rejected():
    with pytest.raises(ValueError):
        L.logistic_lasso_fit(np.eye(3), np.ones(3), 1.0)
    with pytest.raises(ValueError):
        L.logistic_lasso_fit(np.eye(3), [0.0, 0.5, 1.0], 1.0)


def test_logistic_path_stops_at_separation(rng):
    X = _standardized(rng, 30, 2)
    y = (X[:, 0] > 0).astype(float)
    grid = L.lambda_grid(X, y, 50, 1e-4, L.LOGISTIC)
    fits = L.lasso_path(X, y, grid, L.LOGISTIC)
    assert 0 < len(fits) < 50
    assert all(L.kkt_residual(X, y, f) < 1e-5 for f in fits)


# ---------------------------------------------------------------- tuning


def test_tune_matches_leave_one_out_oracle(rng):
    X = _standardized(rng, 12, 3)
    y = X @ [1.0, 0.0, -0.5] + 0.5 * rng.normal(size=12)
    grid = L.lambda_grid(X, y, n_lambda=15, ratio=0.01)
    lam, errors = L.tune_lambda_cv(X, y, k=12, grid=grid, rng_seed=0)
    ref = loo_tune_oracle(X, y, grid.values, lambda A, b, l: L.lasso_fit(A, b, l))
    np.testing.assert_allclose(errors, ref, rtol=1e-6)
    assert lam == grid.values[int(np.argmin(ref))]


def test_tune_ties_prefer_larger_penalty():
    # a response orthogonal to the column: every penalty gives the same fit
    X = np.array([[-1.0], [1.0], [-1.0], [1.0]])
    y = np.array([1.0, 1.0, 1.0, 1.0])
    lam, errors = L.tune_lambda_cv(X, y, k=2, grid=L.lambda_grid(X, y, 5), rng_seed=0)
    assert lam == L.lambda_grid(X, y, 5).values[0]


def test_tune_pure_noise_keeps_few_features():
    sizes = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        X = _standardized(rng, 100, 10)
        y = rng.normal(size=100)
        lam, _ = L.tune_lambda_cv(X, y, 10, rng_seed=seed)
        sizes.append(len(L.lasso_fit(X, y, lam).selected))
    assert np.median(sizes) <= 1


def test_tune_recovers_strong_support(rng):
    X = _standardized(rng, 400, 20)
    y = X[:, [2, 7, 11]] @ [1.0, -1.0, 0.8] + rng.normal(size=400)
    lam, errors = L.tune_lambda_cv(X, y, 10, rng_seed=3)
    assert {2, 7, 11} <= L.lasso_fit(X, y, lam).selected
    assert errors.shape == (100,)


def test_tune_logistic_runs(rng):
    X = _standardized(rng, 120, 6)
    y = (X[:, 0] + rng.normal(size=120) > 0).astype(float)
    lam, errors = L.tune_lambda_cv(X, y, 5, rng_seed=1, loss=L.LOGISTIC, n_lambda=30)
    assert 0 in L.logistic_lasso_fit(X, y, lam).selected
    assert np.isfinite(errors).any()


def test_tune_bad_k(rng):
    X = _standardized(rng, 5, 2)
    with pytest.raises(ValueError):
        L.tune_lambda_cv(X, np.arange(5.0), k=6)


def test_write_path_csv(tmp_path, rng):
    X = _standardized(rng, 20, 2)
    y = X[:, 0] + rng.normal(size=20)
    fits = L.lasso_path(X, y, L.lambda_grid(X, y, n_lambda=5), feature_names=["a", "b"])
    L.write_path_csv(fits, tmp_path / "path.csv")
    lines = (tmp_path / "path.csv").read_text().splitlines()
    assert lines[0] == "lambda,objective,intercept,a,b"
    assert len(lines) == 6
