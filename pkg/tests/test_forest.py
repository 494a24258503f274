import json

import numpy as np
import pytest

from vitalgrid.errors import ConfigError, DataError
from vitalgrid.forest import (
    CLASSIFICATION,
    REGRESSION,
    RandomForestClassifier,
    RandomForestRegressor,
    best_split,
    forest_from_dict,
    forest_to_dict,
    grow_tree,
    load_forest,
    resolve_mtry,
    save_forest,
    split_scores,
)

from oracles import (
    greedy_oracle_tree,
    naive_candidate_scores,
    trees_equal,
)


def _int_instance(rng, task, max_n=50, max_p=3):
    """Small integer-grid instances keep distinct split scores well separated."""
    n = int(rng.integers(2, max_n + 1))
    p = int(rng.integers(1, max_p + 1))
    X = rng.integers(0, 10, size=(n, p)).astype(float)
    if task == REGRESSION:
        y = rng.integers(0, 10, size=n).astype(float)
    else:
        y = rng.integers(0, 2, size=n).astype(float)
    return X, y


# --- split search -------------------------------------------------------------

def test_best_split_textbook_regression():
    X = np.array([[1.0], [2.0], [3.0], [4.0]])
    y = np.array([0.0, 0.0, 10.0, 10.0])
    f, thr, score = best_split(X, y, task=REGRESSION, min_leaf=1)
    assert f == 0 and thr == 2.5 and score == pytest.approx(0.0, abs=1e-12)
    # exhaustive check over all three candidate thresholds
    cands = naive_candidate_scores(X[:, 0], y, REGRESSION, 1)
    assert min(c[1] for c in cands) == pytest.approx(score, abs=1e-12)
    assert sorted(cands)[1][0] == 2.5


def test_best_split_constant_target_none():
    X = np.array([[1.0], [2.0], [3.0]])
    assert best_split(X, np.ones(3), task=REGRESSION, min_leaf=1) is None


def test_best_split_constant_feature_none():
    X = np.ones((4, 1))
    y = np.array([0.0, 1.0, 0.0, 1.0])
    assert best_split(X, y, task=CLASSIFICATION, min_leaf=1) is None


def test_best_split_respects_min_leaf():
    X = np.arange(6, dtype=float).reshape(-1, 1)
    y = np.array([0.0, 0, 0, 0, 0, 10])
    got = best_split(X, y, task=REGRESSION, min_leaf=2)
    assert got is not None
    f, thr, _ = got
    assert thr == 3.5  # the better 4.5 split would leave one sample on the right


def test_split_scores_match_naive_recompute(rng):
    for task in (REGRESSION, CLASSIFICATION):
        for _ in range(60):
            X, y = _int_instance(rng, task)
            min_leaf = int(rng.integers(1, 3))
            thr, scores = split_scores(X[:, 0], y, task, min_leaf)
            want = naive_candidate_scores(X[:, 0], y, task, min_leaf)
            assert len(thr) == len(want)
            for (wt, ws), t, s in zip(want, thr, scores):
                assert t == pytest.approx(wt, abs=0)
                assert s == pytest.approx(ws, abs=1e-10)


def test_best_split_ties_break_low_feature_then_low_threshold():
    # identical columns: the split must name feature 0
    X = np.column_stack([np.array([0.0, 1, 2, 3]), np.array([0.0, 1, 2, 3])])
    y = np.array([0.0, 0.0, 1.0, 1.0])
    f, thr, _ = best_split(X, y, task=CLASSIFICATION, min_leaf=1)
    assert f == 0 and thr == 1.5


# --- tree growth ----------------------------------------------------------------

def test_single_sample_leaf():
    tree = grow_tree(np.array([[3.0]]), np.array([7.0]), REGRESSION)
    assert tree.n_nodes == 1
    assert tree.value[0] == 7.0
    assert tree.predict(np.array([[0.0]]))[0] == 7.0


def test_empty_rejected():
    with pytest.raises(DataError):
        grow_tree(np.zeros((0, 1)), np.zeros(0), REGRESSION)
    with pytest.raises(DataError):
        RandomForestRegressor().fit(np.zeros((0, 1)), np.zeros(0))


def test_linearly_separable_depth_two():
    # one split per dimension suffices: training accuracy 1.0 at depth 2
    X = np.array([[0.0, 0], [0, 1], [1, 0], [1, 1], [0.2, 0.1], [0.9, 0.8]])
    y = np.array([0.0, 0, 0, 1, 0, 1])
    y = ((X[:, 0] > 0.5) & (X[:, 1] > 0.5)).astype(float)
    tree = grow_tree(X, y, CLASSIFICATION, max_depth=2, min_leaf=1)
    pred = tree.predict(X)
    assert np.array_equal(pred >= 0.5, y == 1)


def test_same_seed_same_structure(rng):
    X = rng.normal(size=(80, 5))
    y = rng.normal(size=80)
    a = grow_tree(X, y, REGRESSION, max_features=2, rng=np.random.default_rng(9))
    b = grow_tree(X, y, REGRESSION, max_features=2, rng=np.random.default_rng(9))
    assert np.array_equal(a.feature, b.feature)
    assert np.array_equal(a.threshold, b.threshold)
    with pytest.raises(ConfigError):
        grow_tree(X, y, REGRESSION, max_features=2)  # rng required


def test_max_depth_and_min_leaf_respected(rng):
    X = rng.normal(size=(200, 3))
    y = rng.normal(size=200)
    tree = grow_tree(X, y, REGRESSION, max_depth=3, min_leaf=10)
    assert tree.max_depth() <= 3
    leaves = tree.feature < 0
    assert (tree.n_samples[leaves] >= 10).all()


def test_tree_matches_greedy_oracle_node_for_node(rng):
    for task in (REGRESSION, CLASSIFICATION):
        for _ in range(40):
            X, y = _int_instance(rng, task)
            depth = int(rng.integers(1, 6))
            min_leaf = int(rng.integers(1, 3))
            tree = grow_tree(X, y, task, max_depth=depth, min_leaf=min_leaf, max_features=None)
            oracle = greedy_oracle_tree(X, y, task, depth, min_leaf)
            assert trees_equal(tree, oracle)


# --- forests ---------------------------------------------------------------------

def test_single_sample_forest_is_a_leaf():
    # bootstrap can only redraw the one sample
    model = RandomForestRegressor(n_trees=1, seed=0).fit(np.array([[2.0]]), np.array([5.0]))
    assert model.trees_[0].n_nodes == 1
    assert model.predict(np.array([[99.0]]))[0] == 5.0


def test_forest_regression_beats_constant(rng):
    X = rng.uniform(-3, 3, size=(500, 1))
    y = X[:, 0] ** 2 + rng.normal(0, 0.1, 500)
    Xt = rng.uniform(-3, 3, size=(300, 1))
    yt = Xt[:, 0] ** 2
    model = RandomForestRegressor(n_trees=30, seed=0).fit(X, y)
    mse = float(np.mean((model.predict(Xt) - yt) ** 2))
    mse_const = float(np.mean((y.mean() - yt) ** 2))
    assert mse < mse_const


def test_forest_determinism_and_worker_independence(rng):
    X = rng.normal(size=(150, 4))
    y = (X[:, 0] + rng.normal(0, 0.5, 150) > 0).astype(int)
    kw = dict(n_trees=12, seed=3)
    m1 = RandomForestClassifier(**kw).fit(X, y)
    m2 = RandomForestClassifier(**kw).fit(X, y)
    m3 = RandomForestClassifier(**kw, workers=2).fit(X, y)
    for a, b in zip(m1.trees_, m2.trees_):
        assert np.array_equal(a.threshold, b.threshold)
    for a, b in zip(m1.trees_, m3.trees_):
        assert np.array_equal(a.threshold, b.threshold)
        assert np.array_equal(a.feature, b.feature)


def test_classifier_score_range_and_threshold(rng):
    X = rng.normal(size=(100, 3))
    y = (X[:, 0] > 0).astype(int)
    model = RandomForestClassifier(n_trees=15, seed=1).fit(X, y)
    proba = model.predict_proba(X)
    assert proba.shape == (100, 2)
    assert ((proba >= 0.0) & (proba <= 1.0)).all()
    assert np.allclose(proba.sum(axis=1), 1.0)
    assert np.array_equal(model.predict(X), (proba[:, 1] >= 0.5).astype(int))


def test_classifier_rejects_nonbinary_labels(rng):
    X = rng.normal(size=(10, 2))
    with pytest.raises(DataError):
        RandomForestClassifier(n_trees=2).fit(X, np.arange(10))


def test_regression_predictions_within_target_range(rng):
    X = rng.normal(size=(200, 3))
    y = rng.uniform(5.0, 9.0, 200)
    model = RandomForestRegressor(n_trees=10, seed=2).fit(X, y)
    pred = model.predict(rng.normal(size=(500, 3)))
    assert (pred >= y.min() - 1e-12).all() and (pred <= y.max() + 1e-12).all()


def test_predict_validations(rng):
    X = rng.normal(size=(20, 3))
    y = rng.normal(size=20)
    model = RandomForestRegressor(n_trees=3, seed=0).fit(X, y)
    with pytest.raises(DataError):
        model.predict(np.zeros((2, 4)))
    with pytest.raises(DataError):
        model.predict(np.array([[np.nan, 0.0, 0.0]]))


def test_tree_order_does_not_change_prediction(rng):
    X = rng.normal(size=(60, 3))
    y = rng.normal(size=60)
    model = RandomForestRegressor(n_trees=8, seed=5).fit(X, y)
    before = model.predict(X[:10])
    model.trees_ = list(reversed(model.trees_))
    after = model.predict(X[:10])
    assert np.allclose(before, after, atol=1e-12)


def test_mtry_rules():
    assert resolve_mtry(14400, "sqrt") == 120
    assert resolve_mtry(10, "third") == 4
    assert resolve_mtry(10, None) == 10
    assert resolve_mtry(10, "all") == 10
    assert resolve_mtry(10, 3) == 3
    with pytest.raises(ConfigError):
        resolve_mtry(10, 0)


def test_serialization_round_trip_bit_exact(rng, tmp_path):
    X = rng.normal(size=(120, 4))
    y = (X[:, 1] > 0.2).astype(int)
    model = RandomForestClassifier(n_trees=7, seed=11).fit(X, y)
    path = tmp_path / "forest.json"
    save_forest(model, path)
    loaded = load_forest(path)
    Xt = rng.normal(size=(50, 4))
    assert np.array_equal(model.predict_proba(Xt), loaded.predict_proba(Xt))
    # serialize -> parse -> serialize is a fixed point
    assert json.dumps(forest_to_dict(model), sort_keys=True) == json.dumps(
        forest_to_dict(loaded), sort_keys=True
    )


def test_serialization_rejects_foreign_payload():
    with pytest.raises(DataError):
        forest_from_dict({"format": "something-else"})
    with pytest.raises(DataError):
        forest_from_dict({"format": "vitalgrid-forest-nodes", "version": 99})


def test_bootstrap_off_single_tree_equals_grow_tree(rng):
    X, y = _int_instance(rng, REGRESSION)
    forest = RandomForestRegressor(
        n_trees=1, bootstrap=False, max_features="all", seed=0, max_depth=4, min_leaf=2
    ).fit(X, y)
    direct = grow_tree(X, y, REGRESSION, max_depth=4, min_leaf=2, max_features=None)
    t = forest.trees_[0]
    assert np.array_equal(t.feature, direct.feature)
    assert np.array_equal(t.threshold, direct.threshold)
