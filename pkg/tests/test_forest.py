from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from salaryshare import evaluation
from salaryshare import forest as F
from salaryshare.lasso import lasso_fit, tune_lambda_cv


# ------------------------------------------------------------ reference CART


def _reference_tree(X, y, min_leaf, max_depth):
    """Plain recursive CART with every feature tried at every node.

    Scores use the same floating-point expression and accumulation order as
    the compiled grower, so ties resolve identically: lowest feature first,
    then lowest threshold.
    """

    def grow(rows, depth):
        ys = y[rows]
        node = {"value": ys.sum() / len(rows), "n": len(rows)}
        if ys.min() == ys.max() or len(rows) < 2 * min_leaf or (max_depth is not None and depth >= max_depth):
            return node
        total = 0.0
        for v in ys:
            total += v
        parent = total * total / len(rows)
        best, best_f, best_t = parent, -1, 0.0
        for f in range(X.shape[1]):
            order = rows[np.argsort(X[rows, f], kind="stable")]
            wl = sl = 0.0
            for i in range(len(order) - 1):
                wl += 1.0
                sl += y[order[i]]
                wr = len(order) - wl
                if wl < min_leaf:
                    continue
                if wr < min_leaf:
                    break
                a, b = X[order[i], f], X[order[i + 1], f]
                if not a < b:
                    continue
                sr = total - sl
                score = sl * sl / wl + sr * sr / wr
                if score > best:
                    best, best_f, best_t = score, f, 0.5 * (a + b)
        if best_f < 0 or best <= parent * (1.0 + 1e-12):
            return node
        mask = X[rows, best_f] <= best_t
        node.update(feature=best_f, threshold=best_t,
                    left=grow(rows[mask], depth + 1), right=grow(rows[~mask], depth + 1))
        return node

    return grow(np.arange(len(y)), 0)


def _same_structure(tree, ref, node=0):
    if "feature" not in ref:
        return tree.is_leaf(node) and tree.value[node] == pytest.approx(ref["value"]) and tree.n_samples[node] == ref["n"]
    return (tree.feature[node] == ref["feature"] and tree.threshold[node] == ref["threshold"]
            and _same_structure(tree, ref["left"], tree.left[node])
            and _same_structure(tree, ref["right"], tree.right[node]))


small_problems = st.tuples(st.integers(1, 30), st.integers(1, 3)).flatmap(
    lambda s: st.tuples(
        arrays(np.int64, s, elements=st.integers(0, 5)),
        arrays(np.int64, s[0], elements=st.integers(0, 3)),
        st.integers(1, 3),
        st.one_of(st.none(), st.integers(0, 4)),
    )
)


@given(small_problems)
def test_tree_matches_reference_cart(problem):
    X, y, min_leaf, max_depth = problem
    X = X.astype(float)
    y = y.astype(float)
    cfg = F.ForestConfig(n_trees=1, mtry=X.shape[1], min_leaf=min_leaf, max_depth=max_depth)
    tree = F.grow_tree(X, y, cfg, 0)
    assert _same_structure(tree, _reference_tree(X, y, min_leaf, max_depth))


def test_grow_tree_examples():
    X = np.array([[1.0], [2.0], [3.0], [4.0]])
    tree = F.grow_tree(X, [0.0, 0.0, 1.0, 1.0], F.ForestConfig(min_leaf=1, mtry=1), 0)
    assert tree.feature[0] == 0 and tree.threshold[0] == 2.5
    assert sorted(tree.value[tree.leaves()]) == [0.0, 1.0]
    const = F.grow_tree(np.random.default_rng(0).normal(size=(20, 3)), np.full(20, 0.7), F.ForestConfig(min_leaf=1), 0)
    assert const.n_nodes == 1 and const.value[0] == pytest.approx(0.7)
    stump = F.grow_tree(X, [1.0, 2.0, 3.0, 7.0], F.ForestConfig(max_depth=0, min_leaf=1, mtry=1), 0)
    assert stump.n_nodes == 1 and stump.value[0] == 3.25


def test_empty_input_rejected():
    with pytest.raises(ValueError):
        F.grow_tree(np.empty((0, 2)), np.empty(0))
    with pytest.raises(ValueError):
        F.fit_forest(np.ones((3, 2)), np.ones(2))


def test_memorizing_tree_reproduces_training_response(rng):
    X = rng.normal(size=(60, 4))
    y = rng.normal(size=60)
    cfg = F.ForestConfig(n_trees=1, mtry=4, min_leaf=1, bootstrap=False)
    forest = F.fit_forest(X, y, cfg)
    np.testing.assert_array_equal(forest.predict(X), y)


def test_single_training_row(rng):
    forest = F.fit_forest(np.array([[1.0, 2.0]]), [0.3], F.ForestConfig(n_trees=5))
    np.testing.assert_array_equal(forest.predict(rng.normal(size=(7, 2))), 0.3)


def test_leaves_respect_min_leaf(rng):
    X = rng.normal(size=(200, 5))
    y = X[:, 0] + rng.normal(size=200)
    forest = F.fit_forest(X, y, F.ForestConfig(n_trees=20, min_leaf=5, seed=3))
    for tree in forest.trees:
        assert np.all(tree.n_samples[tree.leaves()] >= 5)
        internal = tree.feature >= 0
        assert np.all(tree.n_samples[tree.left[internal]] + tree.n_samples[tree.right[internal]]
                      == tree.n_samples[internal])
    assert len(forest.trees) == 20


def test_aggregation_is_tree_mean():
    leaf = dict(feature=np.array([-1, -1]), threshold=np.zeros(2), left=np.array([-1, -1]),
                right=np.array([-1, -1]), value=np.array([0.1, 0.3]), n_samples=np.array([1, 1]),
                offsets=np.array([0, 1, 2]))
    forest = F.Forest(F.ForestConfig(n_trees=2, mtry=1, min_leaf=1), F.REGRESSION, ("a",), y_range=(0.1, 0.3), **leaf)
    assert F.predict(forest, np.array([5.0])) == pytest.approx(0.2)
    one = dict(leaf, value=np.array([0.4, 0.4]))
    assert F.predict(F.Forest(forest.config, F.REGRESSION, ("a",), y_range=(0.4, 0.4), **one), [1.0]) == 0.4


@given(st.integers(0, 2**31 - 1), st.integers(2, 40), st.integers(1, 4))
def test_predictions_stay_within_training_range(seed, n, p):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    y = rng.uniform(0.001, 0.35, size=n)
    cfg = F.ForestConfig(n_trees=int(rng.integers(1, 15)), mtry=int(rng.integers(1, p + 1)),
                         min_leaf=int(rng.integers(1, 4)), seed=seed)
    forest = F.fit_forest(X, y, cfg)
    q = rng.normal(scale=5.0, size=(50, p))
    pred = forest.predict(q)
    assert np.all(pred >= y.min()) and np.all(pred <= y.max())


def test_row_order_does_not_matter(rng):
    X = np.round(rng.normal(size=(120, 4)), 1)
    y = X[:, 0] ** 2 + rng.normal(size=120)
    perm = rng.permutation(120)
    cfg = F.ForestConfig(n_trees=30, seed=11)
    a = F.fit_forest(X, y, cfg)
    b = F.fit_forest(X[perm], y[perm], cfg)
    assert a.digest() == b.digest()


def test_same_seed_identical_across_threads(rng):
    X = rng.normal(size=(150, 6))
    y = np.sin(X[:, 0]) + rng.normal(size=150)
    cfg = F.ForestConfig(n_trees=40, seed=5)
    ref = F.fit_forest(X, y, cfg).digest()
    with ThreadPoolExecutor(max_workers=4) as pool:
        digests = list(pool.map(lambda _: F.fit_forest(X, y, cfg).digest(), range(8)))
    assert set(digests) == {ref}
    assert F.fit_forest(X, y, F.ForestConfig(n_trees=40, seed=6)).digest() != ref


def test_more_trees_less_variance(rng):
    X = rng.normal(size=(150, 5))
    y = X[:, 0] + np.sin(2 * X[:, 1]) + rng.normal(size=150)
    q = rng.normal(size=(30, 5))

    def spread(n_trees):
        preds = np.array([F.fit_forest(X, y, F.ForestConfig(n_trees=n_trees, seed=s)).predict(q) for s in range(20)])
        return preds.var(axis=0).mean()

    assert spread(500) <= spread(10)


def test_forest_beats_lasso_on_sine(rng):
    x = rng.uniform(-1.5, 1.5, size=(600, 1))
    y = np.sin(4 * x[:, 0]) + 0.3 * rng.normal(size=600)
    tr, te = np.arange(400), np.arange(400, 600)
    forest = F.fit_forest(x[tr], y[tr], F.ForestConfig(n_trees=200, seed=1))
    rf_pve = evaluation.pve(y[te], forest.predict(x[te]))
    lam, _ = tune_lambda_cv(x[tr], y[tr], 10, rng_seed=1)
    lasso_pve = evaluation.pve(y[te], lasso_fit(x[tr], y[tr], lam).decision_function(x[te]))
    assert rf_pve > lasso_pve


def test_classification_probabilities():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(40, 3))
    ones = F.fit_forest(X, np.ones(40), F.ForestConfig(n_trees=10), F.CLASSIFICATION)
    np.testing.assert_array_equal(F.predict_proba(ones, rng.normal(size=(5, 3))), 1.0)
    y = (X[:, 0] > 0).astype(float)
    memo = F.fit_forest(X, y, F.ForestConfig(n_trees=1, mtry=3, bootstrap=False), F.CLASSIFICATION)
    row = int(np.flatnonzero(y == 0)[0])
    assert F.predict_proba(memo, X[row]) == 0.0
    balanced = np.array([0.0, 1.0] * 20)
    stump = F.fit_forest(X, balanced, F.ForestConfig(n_trees=1, max_depth=0, bootstrap=False), F.CLASSIFICATION)
    assert F.predict_proba(stump, X[0]) == 0.5
    with pytest.raises(ValueError):
        F.predict_proba(F.fit_forest(X, X[:, 0], F.ForestConfig(n_trees=2)), X)
    with pytest.raises(ValueError):
        F.fit_forest(X, X[:, 0], F.ForestConfig(n_trees=2), F.CLASSIFICATION)


def test_dimension_mismatch(rng):
    forest = F.fit_forest(rng.normal(size=(20, 3)), rng.normal(size=20), F.ForestConfig(n_trees=3))
    with pytest.raises(ValueError):
        forest.predict(np.ones((2, 4)))


def test_config_validation():
    with pytest.raises(ValueError):
        F.ForestConfig(n_trees=0)
    with pytest.raises(ValueError):
        F.ForestConfig(min_leaf=0)
    with pytest.raises(ValueError):
        F.ForestConfig(mtry=5).resolved(3, F.REGRESSION)
    cfg = F.ForestConfig().resolved(30, F.REGRESSION)
    assert (cfg.mtry, cfg.min_leaf) == (10, 5)
    cfg = F.ForestConfig().resolved(30, F.CLASSIFICATION)
    assert (cfg.mtry, cfg.min_leaf) == (6, 1)
    assert F.default_mtry_grid(30) == [1, 6, 10, 15, 30]
    assert F.default_mtry_grid(1) == [1]


def test_save_and_load_round_trip(tmp_path, rng):
    X = rng.normal(size=(80, 3))
    y = rng.uniform(size=80)
    forest = F.fit_forest(X, y, F.ForestConfig(n_trees=15, seed=2), feature_names=["EXP", "MP", "G"])
    F.save_forest(forest, tmp_path / "f.npz")
    back = F.load_forest(tmp_path / "f.npz")
    assert back.digest() == forest.digest()
    assert back.feature_names == ("EXP", "MP", "G")
    np.testing.assert_array_equal(back.predict(X), forest.predict(X))
