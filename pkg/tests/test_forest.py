import numpy as np
import pytest

from drcbench.errors import DataError, DomainError
from drcbench.forest import Forest, ForestConfig, RegressionTree, fit_forest


def _xy(n=200, p=6, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(0.0, 1.0, (n, p))
    return X, rng


def test_config_validation():
    with pytest.raises(DomainError):
        ForestConfig(n_trees=0)
    with pytest.raises(DomainError):
        ForestConfig(min_samples_leaf=0)
    with pytest.raises(DomainError):
        ForestConfig(max_depth=0)


def test_constant_target_predicts_constant():
    X, _ = _xy(50)
    y = np.full((50, 1), 3.25)
    forest = fit_forest(X, y, ("c",), ForestConfig(n_trees=5))
    np.testing.assert_allclose(forest.predict(X), 3.25)


def test_single_tree_memorizes_without_bagging():
    X, rng = _xy(64, p=4, seed=1)
    y = rng.uniform(0.0, 10.0, 64)
    cfg = ForestConfig(n_trees=1, min_samples_leaf=1, bootstrap=False,
                       features_per_split=4)
    forest = fit_forest(X, y, ("t",), cfg)
    np.testing.assert_allclose(forest.predict(X)[:, 0], y, atol=1e-12)


def test_learns_identity_function():
    X, _ = _xy(400, p=5, seed=2)
    y = X[:, 1]
    X_test, _ = _xy(100, p=5, seed=3)
    forest = fit_forest(X, y, ("t",), ForestConfig(n_trees=50))
    mae = np.mean(np.abs(forest.predict(X_test)[:, 0] - X_test[:, 1]))
    assert mae < 0.05  # 5 % of the unit range


def test_predictions_bounded_by_training_range():
    X, rng = _xy(100, seed=4)
    y = rng.uniform(-5.0, 5.0, 100)
    forest = fit_forest(X, y, ("t",), ForestConfig(n_trees=20))
    X_far = rng.uniform(-10.0, 10.0, (200, 6))  # well outside training support
    pred = forest.predict(X_far)[:, 0]
    assert pred.min() >= y.min() - 1e-12
    assert pred.max() <= y.max() + 1e-12


def test_same_seed_same_predictions():
    X, rng = _xy(80, seed=5)
    y = rng.uniform(0.0, 1.0, 80)
    a = fit_forest(X, y, ("t",), ForestConfig(n_trees=10, seed=9)).predict(X)
    b = fit_forest(X, y, ("t",), ForestConfig(n_trees=10, seed=9)).predict(X)
    np.testing.assert_array_equal(a, b)
    c = fit_forest(X, y, ("t",), ForestConfig(n_trees=10, seed=10)).predict(X)
    assert not np.array_equal(a, c)


def test_joint_targets_match_single_target_fits():
    # per-target ensembles draw seeds in target-major order, so the first
    # target's trees are identical whether or not a second target rides along
    X, rng = _xy(60, seed=6)
    Y = np.stack([rng.uniform(0, 1, 60), rng.uniform(0, 1, 60)], axis=1)
    joint = fit_forest(X, Y, ("a", "b"), ForestConfig(n_trees=8, seed=4))
    single = fit_forest(X, Y[:, 0], ("a",), ForestConfig(n_trees=8, seed=4))
    np.testing.assert_array_equal(joint.predict(X)[:, 0], single.predict(X)[:, 0])


def test_input_validation():
    X, rng = _xy(20, seed=7)
    y = rng.uniform(0, 1, 20)
    with pytest.raises(DataError):
        fit_forest(X, y[:10], ("t",))
    with pytest.raises(DataError):
        fit_forest(X, np.stack([y, y], axis=1), ("t",))
    X_bad = X.copy()
    X_bad[0, 0] = np.nan
    with pytest.raises(DataError):
        fit_forest(X_bad, y, ("t",))


def test_min_samples_leaf_respected():
    X, rng = _xy(40, p=2, seed=8)
    y = rng.uniform(0, 1, 40)
    cfg = ForestConfig(n_trees=1, min_samples_leaf=10, bootstrap=False,
                       features_per_split=2)
    tree = fit_forest(X, y, ("t",), cfg).ensembles[0][0]

    def leaf_sizes(node, idx):
        if node.left is None:
            return [idx.size]
        mask = X[idx, node.feature] <= node.threshold
        return leaf_sizes(node.left, idx[mask]) + leaf_sizes(node.right, idx[~mask])

    assert min(leaf_sizes(tree.root, np.arange(40))) >= 10


def test_max_depth_limits_tree():
    X, rng = _xy(200, p=3, seed=9)
    y = rng.uniform(0, 1, 200)
    cfg = ForestConfig(n_trees=1, max_depth=2, bootstrap=False, features_per_split=3,
                       min_samples_leaf=1)
    tree = fit_forest(X, y, ("t",), cfg).ensembles[0][0]

    def depth(node):
        if node.left is None:
            return 0
        return 1 + max(depth(node.left), depth(node.right))

    assert depth(tree.root) <= 2


def test_duplicate_feature_rows_share_leaves():
    # identical feature rows cannot be separated by any threshold
    X = np.repeat(np.arange(5.0)[:, None], 4, axis=0)  # 20 rows, 5 distinct
    rng = np.random.default_rng(10)
    y = np.repeat(rng.uniform(0, 1, 5), 4) + rng.normal(0, 1e-3, 20)
    cfg = ForestConfig(n_trees=1, min_samples_leaf=1, bootstrap=False, features_per_split=1)
    forest = fit_forest(X, y, ("t",), cfg)
    pred = forest.predict(X)[:, 0]
    for g in range(5):
        group = pred[g * 4 : (g + 1) * 4]
        np.testing.assert_allclose(group, group[0])


def test_tree_split_prefers_informative_feature():
    rng = np.random.default_rng(11)
    X = np.stack([rng.uniform(0, 1, 100), (np.arange(100) >= 50).astype(float)], axis=1)
    y = X[:, 1] * 10.0
    tree = RegressionTree(ForestConfig(n_trees=1, features_per_split=2, bootstrap=False),
                          np.random.default_rng(0)).fit(X, y)
    assert tree.root.feature == 1
    assert tree.root.threshold == pytest.approx(0.5)
