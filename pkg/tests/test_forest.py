import numpy as np
import pytest
from oracles import best_split_oracle

from lesionfuse.forest import (
    Forest,
    ForestParams,
    Leaf,
    Split,
    best_split,
    forest_from_bytes,
    forest_to_bytes,
    gini_impurity,
    grow_tree,
    oob_error,
    predict_proba,
    train_forest,
)


def separable_toy(n=20, margin=2.0, seed=5):
    """Two Gaussian-ish blobs separated by at least `margin` in feature 0."""
    rng = np.random.default_rng(seed)
    X = np.zeros((n, 2))
    y = np.zeros(n, dtype=np.intp)
    half = n // 2
    X[:half, 0] = rng.uniform(0.0, 1.0, half)
    X[half:, 0] = rng.uniform(1.0 + margin, 2.0 + margin, n - half)
    X[:, 1] = rng.uniform(0.0, 1.0, n)
    y[half:] = 1
    return X, y


def test_gini_examples():
    assert gini_impurity((4, 0)) == 0.0
    assert gini_impurity((2, 2)) == 0.5
    assert gini_impurity((1, 3)) == 0.375


def test_gini_empty_node_raises():
    with pytest.raises(ValueError):
        gini_impurity((0, 0))


def test_best_split_midpoint_example():
    X = np.array([[1.0], [2.0], [9.0], [10.0]])
    y = np.array([0, 0, 1, 1])
    f, thr, gain = best_split(X, y, [0])
    assert (f, thr, gain) == (0, 5.5, 0.5)


def test_best_split_pure_parent_returns_none():
    X = np.array([[1.0], [2.0], [3.0]])
    assert best_split(X, np.array([1, 1, 1]), [0]) is None


def test_best_split_constant_feature_returns_none():
    X = np.ones((4, 1))
    assert best_split(X, np.array([0, 1, 0, 1]), [0]) is None


def test_best_split_matches_enumeration_oracle():
    rng = np.random.default_rng(17)
    for _ in range(50):
        n = int(rng.integers(2, 13))
        X = rng.integers(0, 6, size=(n, 1)).astype(np.float64)
        y = rng.integers(0, 2, size=n).astype(np.intp)
        ours = best_split(X, y, [0])
        ref = best_split_oracle(X, y, [0])
        assert ours == ref  # exact: same midpoints, same float expressions


def test_best_split_tie_prefers_lower_feature():
    # identical separating columns: the lower feature index must win
    X = np.array([[0.0, 0.0], [1.0, 1.0], [10.0, 10.0], [11.0, 11.0]])
    y = np.array([0, 0, 1, 1])
    f, thr, _ = best_split(X, y, [1, 0])
    assert f == 0 and thr == 5.5


def test_grow_tree_single_sample_leaf():
    rng = np.random.default_rng(0)
    node = grow_tree(np.array([[3.0]]), np.array([1]), ForestParams(), rng)
    assert isinstance(node, Leaf) and node.counts.tolist() == [0, 1]


def test_grow_tree_pure_data_leaf():
    rng = np.random.default_rng(0)
    node = grow_tree(np.array([[3.0], [4.0]]), np.array([0, 0]), ForestParams(), rng)
    assert isinstance(node, Leaf) and node.counts.tolist() == [2, 0]


def test_grow_tree_forced_single_feature():
    rng = np.random.default_rng(0)
    X = np.array([[1.0], [2.0], [9.0], [10.0]])
    y = np.array([0, 0, 1, 1])
    node = grow_tree(X, y, ForestParams(mtry=1), rng)
    assert isinstance(node, Split)
    assert node.feature == 0 and node.threshold == 5.5
    assert isinstance(node.left, Leaf) and isinstance(node.right, Leaf)
    assert node.left.counts.tolist() == [2, 0] and node.right.counts.tolist() == [0, 2]


def test_train_forest_rejects_single_class():
    X = np.ones((4, 2))
    with pytest.raises(ValueError):
        train_forest(X, np.zeros(4, dtype=np.intp), ForestParams(n_trees=2))


def test_train_forest_rejects_tiny_data():
    with pytest.raises(ValueError):
        train_forest(np.ones((1, 2)), np.array([1]), ForestParams())


def test_forest_perfect_on_separable_toy():
    X, y = separable_toy()
    forest = train_forest(X, y, ForestParams(n_trees=50, seed=42))
    preds = [int(predict_proba(forest, x)[1] > 0.5) for x in X]
    assert preds == y.tolist()


def test_forest_training_is_deterministic():
    X, y = separable_toy()
    params = ForestParams(n_trees=20, seed=42)
    a = forest_to_bytes(train_forest(X, y, params))
    b = forest_to_bytes(train_forest(X, y, params))
    assert a == b


def test_forest_workers_do_not_change_result():
    X, y = separable_toy()
    params = ForestParams(n_trees=16, seed=7)
    a = forest_to_bytes(train_forest(X, y, params, workers=1))
    b = forest_to_bytes(train_forest(X, y, params, workers=8))
    assert a == b


def test_predict_proba_averages_tree_distributions():
    trees = [Leaf(np.array([0, 1])), Leaf(np.array([0, 1])), Leaf(np.array([1, 0]))]
    forest = Forest(trees, ForestParams(n_trees=3), 1)
    p = predict_proba(forest, [0.0])
    assert p.tolist() == [1 / 3, 2 / 3]


def test_predict_proba_normalizes_leaf_counts():
    forest = Forest([Leaf(np.array([3, 1]))], ForestParams(n_trees=1), 1)
    assert predict_proba(forest, [0.0]).tolist() == [0.75, 0.25]


def test_predict_proba_pure_class0_forest():
    trees = [Leaf(np.array([2, 0])) for _ in range(5)]
    forest = Forest(trees, ForestParams(n_trees=5), 3)
    assert predict_proba(forest, [1.0, 2.0, 3.0]).tolist() == [1.0, 0.0]


def test_predict_proba_dimension_mismatch():
    forest = Forest([Leaf(np.array([1, 1]))], ForestParams(n_trees=1), 4)
    with pytest.raises(ValueError):
        predict_proba(forest, [1.0, 2.0])


def test_predict_proba_outputs_on_simplex():
    X, y = separable_toy(seed=11)
    forest = train_forest(X, y, ForestParams(n_trees=30, seed=3))
    rng = np.random.default_rng(19)
    for _ in range(100):
        p = predict_proba(forest, rng.uniform(-5, 10, size=2))
        assert abs(p.sum() - 1.0) < 1e-9
        assert (p >= 0).all() and (p <= 1).all()


def test_hard_vote_mode():
    trees = [Leaf(np.array([3, 1])), Leaf(np.array([1, 3]))]
    forest = Forest(trees, ForestParams(n_trees=2, hard_vote=True), 1)
    assert predict_proba(forest, [0.0]).tolist() == [0.5, 0.5]


def test_oob_error_on_separable_toy():
    X, y = separable_toy()
    forest = train_forest(X, y, ForestParams(n_trees=200, seed=42))
    report = oob_error(forest, X, y)
    assert report.error <= 0.1
    assert 0.0 < report.coverage <= 1.0


def test_oob_requires_membership_records():
    forest = Forest([Leaf(np.array([1, 1]))], ForestParams(n_trees=1), 1)
    with pytest.raises(ValueError):
        oob_error(forest, np.ones((2, 1)), np.array([0, 1]))


def test_oob_no_out_of_bag_sample_raises():
    trees = [Leaf(np.array([1, 1]))]
    forest = Forest(trees, ForestParams(n_trees=1), 1, in_bag=[np.array([0, 1])])
    with pytest.raises(ValueError):
        oob_error(forest, np.ones((2, 1)), np.array([0, 1]))


def test_trees_fit_their_bootstrap_perfectly():
    # distinct feature rows + unlimited depth => every tree classifies its
    # own bootstrap sample exactly
    rng = np.random.default_rng(29)
    X = rng.normal(size=(24, 3))
    y = rng.integers(0, 2, size=24).astype(np.intp)
    y[0], y[1] = 0, 1
    forest = train_forest(X, y, ForestParams(n_trees=10, seed=1))
    for tree, bag in zip(forest.trees, forest.in_bag):
        for i in bag:
            node = tree
            while isinstance(node, Split):
                node = node.left if X[i, node.feature] <= node.threshold else node.right
            dist = node.counts / node.counts.sum()
            assert dist[y[i]] == 1.0


def test_constant_features_never_split():
    X, y = separable_toy()
    padded = np.hstack([X, np.zeros((X.shape[0], 3))])
    forest = train_forest(padded, y, ForestParams(n_trees=30, seed=2))

    def features_of(node, out):
        if isinstance(node, Split):
            out.add(node.feature)
            features_of(node.left, out)
            features_of(node.right, out)

    used = set()
    for tree in forest.trees:
        features_of(tree, used)
    assert used <= {0, 1}


def test_split_thresholds_lie_between_training_values():
    X, y = separable_toy(seed=23)
    forest = train_forest(X, y, ForestParams(n_trees=10, seed=9))

    def check(node):
        if isinstance(node, Split):
            col = np.sort(np.unique(X[:, node.feature]))
            assert col[0] < node.threshold < col[-1]
            assert not np.any(col == node.threshold)
            check(node.left)
            check(node.right)

    for tree in forest.trees:
        check(tree)


def test_forest_serialization_round_trip():
    X, y = separable_toy(seed=3)
    forest = train_forest(X, y, ForestParams(n_trees=8, seed=4, mtry=2), feature_layout_hash=123)
    blob = forest_to_bytes(forest)
    restored = forest_from_bytes(blob)
    assert forest_to_bytes(restored) == blob
    assert restored.n_features == forest.n_features
    assert restored.feature_layout_hash == 123
    assert restored.params == forest.params
    x = np.array([0.5, 0.5])
    assert np.array_equal(predict_proba(restored, x), predict_proba(forest, x))
