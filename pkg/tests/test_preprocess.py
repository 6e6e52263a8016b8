import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from salaryshare.folds import make_folds
from salaryshare.preprocess import apply_scaler, fit_scaler, inv_logit, logit


def test_fit_scaler_examples():
    p = fit_scaler(np.array([[1.0], [2.0], [3.0]]))
    assert p.means[0] == 2.0 and p.sds[0] == 1.0 and not p.constant[0]
    p = fit_scaler(np.array([[5.0], [5.0], [5.0]]))
    assert p.means[0] == 5.0 and p.sds[0] == 1.0 and p.constant[0]
    p = fit_scaler(np.array([[0.0, 10.0], [2.0, 30.0]]))
    np.testing.assert_allclose(p.means, [1.0, 20.0])
    np.testing.assert_allclose(p.sds, [math.sqrt(2), 10 * math.sqrt(2)])


def test_fit_scaler_needs_two_rows():
    with pytest.raises(ValueError):
        fit_scaler(np.array([[1.0, 2.0]]))


def test_apply_scaler_examples():
    train = np.array([[1.0, 7.0], [2.0, 7.0], [3.0, 7.0]])
    p = fit_scaler(train)
    z = apply_scaler(train, p)
    np.testing.assert_allclose(z[:, 0].mean(), 0.0, atol=1e-15)
    np.testing.assert_allclose(z[:, 0].std(ddof=1), 1.0)
    assert np.all(z[:, 1] == 0.0)
    out = apply_scaler(np.array([[4.0, -100.0]]), p)
    assert out[0, 0] == 2.0 and out[0, 1] == 0.0


def test_apply_scaler_dimension_mismatch():
    p = fit_scaler(np.ones((3, 2)) * np.arange(3)[:, None])
    with pytest.raises(ValueError):
        apply_scaler(np.ones((2, 3)), p)


def test_null_cells_become_zero():
    train = np.array([[1.0, np.nan], [2.0, 0.4], [3.0, 0.6]])
    p = fit_scaler(train)
    assert p.means[1] == pytest.approx(0.5)
    z = apply_scaler(train, p)
    assert z[0, 1] == 0.0
    assert np.isfinite(z).all()


matrices = st.tuples(st.integers(2, 30), st.integers(1, 6)).flatmap(
    lambda s: arrays(np.int64, s, elements=st.integers(-10_000, 10_000)).map(lambda a: a / 10.0)
)


@given(matrices, st.floats(0.1, 50), st.floats(-50, 50))
def test_scaler_is_affine_invariant_and_order_preserving(X, a, b):
    z1 = apply_scaler(X, fit_scaler(X))
    z2 = apply_scaler(a * X + b, fit_scaler(a * X + b))
    p = fit_scaler(X)
    keep = ~p.constant & (fit_scaler(a * X + b).constant == p.constant)
    np.testing.assert_allclose(z1[:, keep], z2[:, keep], atol=1e-6)
    for j in np.flatnonzero(~p.constant):
        assert np.all(np.diff(z1[np.argsort(X[:, j], kind="stable"), j]) >= -1e-12)


@given(matrices, st.integers(0, 2**31))
def test_perturbing_test_rows_leaves_training_scaler_unchanged(X, seed):
    if X.shape[0] < 4:
        return
    folds = make_folds(X.shape[0], 2, seed)
    tr, te = folds.train_indices(0), folds.test_indices(0)
    before = fit_scaler(X[tr])
    Xp = X.copy()
    Xp[te] = 1e6
    assert fit_scaler(Xp[tr]) == before


def test_logit_examples():
    assert logit(0.5) == 0.0
    assert logit(0.2918) == pytest.approx(math.log(0.2918 / 0.7082), abs=1e-15)
    assert logit(0.2918) == pytest.approx(-0.886658, abs=1e-6)
    for bad in (0.0, 1.0, -0.1, 1.5, float("nan")):
        with pytest.raises(ValueError):
            logit(bad)


def test_inv_logit_examples():
    assert inv_logit(0.0) == 0.5
    assert inv_logit(logit(0.2918)) == pytest.approx(0.2918, abs=1e-15)
    v = inv_logit(-50.0)
    assert 0.0 < v <= 1e-20
    np.testing.assert_allclose(inv_logit(np.array([0.0, 0.0])), [0.5, 0.5])


@given(st.floats(1e-9, 1 - 1e-9))
def test_logit_round_trip(y):
    assert abs(inv_logit(logit(y)) - y) < 1e-12


def test_make_folds_sizes_for_443():
    f = make_folds(443, 10, 0)
    assert sorted(f.sizes().tolist()) == [44] * 7 + [45] * 3
    f = make_folds(10, 10, 1)
    assert f.sizes().tolist() == [1] * 10


@given(st.integers(2, 300), st.integers(2, 20), st.integers(0, 2**32 - 1))
def test_make_folds_partition(n, k, seed):
    if n < k:
        with pytest.raises(ValueError):
            make_folds(n, k, seed)
        return
    f = make_folds(n, k, seed)
    parts = [f.test_indices(i) for i in range(k)]
    assert np.array_equal(np.sort(np.concatenate(parts)), np.arange(n))
    assert f.sizes().max() - f.sizes().min() <= 1
    assert np.array_equal(make_folds(n, k, seed).fold_of, f.fold_of)


def test_make_folds_bad_k():
    with pytest.raises(ValueError):
        make_folds(10, 1, 0)
