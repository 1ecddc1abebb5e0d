from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import brute_force_split, gini_exact

from dtlsfp.errors import DegenerateDataError
from dtlsfp.forest import (
    ForestParams,
    Leaf,
    RandomForestModel,
    Split,
    best_split,
    bootstrap_indices,
    fit,
    gini,
    predict,
    tree_depth,
    tree_rng,
)


def test_gini_values():
    assert gini([5]) == 0.0
    assert gini([1, 1]) == 0.5
    assert gini([1, 1, 1, 1]) == pytest.approx(0.75)
    assert gini([3, 1]) == pytest.approx(float(gini_exact([3, 1])))


@pytest.mark.parametrize("bad", [[], [0, 0], [-1, 2]])
def test_gini_rejects_bad_counts(bad):
    with pytest.raises(ValueError):
        gini(bad)


@st.composite
def small_dataset(draw):
    rows = draw(st.integers(1, 8))
    cols = draw(st.integers(1, 3))
    k = draw(st.integers(1, 4))
    X = draw(st.lists(st.lists(st.integers(0, 3), min_size=cols, max_size=cols), min_size=rows, max_size=rows))
    y = draw(st.lists(st.integers(0, k - 1), min_size=rows, max_size=rows))
    return X, y, k


@settings(max_examples=400, deadline=None)
@given(small_dataset())
def test_best_split_matches_brute_force(data):
    X, y, k = data
    got = best_split(np.array(X, dtype=float), np.array(y), range(len(X[0])), k)
    want = brute_force_split(X, y, k)
    assert (None if got is None else (got.column, got.threshold)) == want


def test_best_split_tie_prefers_lowest_column_then_threshold():
    # Columns 0 and 1 are identical perfect separators; column 2 ties at two thresholds.
    X = np.array([[0, 0, 0], [0, 0, 1], [1, 1, 2], [1, 1, 3]], dtype=float)
    y = np.array([0, 0, 1, 1])
    assert best_split(X, y, [1, 0, 2], 2).column == 0
    assert best_split(X, y, [2, 1], 2).column == 1
    choice = best_split(X[:, [2]], y, [0], 2)
    assert choice.threshold == 1.5


def test_best_split_none_when_no_gain():
    X = np.array([[0], [1], [0], [1]], dtype=float)
    y = np.array([0, 0, 1, 1])
    assert best_split(X, y, [0], 2) is None


def test_stump_on_separable_column():
    X = np.array([[i, (i * 7) % 3] for i in range(20)], dtype=float)
    y = (X[:, 0] >= 10).astype(int)
    model = fit(X, y, ForestParams(n_trees=1, max_features=2), seed=1)
    tree = model.trees[0]
    assert isinstance(tree, Split) and tree.column == 0
    assert tree_depth(tree) == 1
    assert (model.predict(X) == y).all()


def _toy(n=120, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 5, size=(n, 6)).astype(float)
    y = ((X[:, 0] + X[:, 3]) % 3).astype(int)
    return X, y


def test_results_independent_of_jobs():
    X, y = _toy()
    params = ForestParams(n_trees=12)
    a = fit(X, y, params, seed=5, jobs=1)
    b = fit(X, y, params, seed=5, jobs=3)
    assert json.dumps(a.to_json()) == json.dumps(b.to_json())


def test_seed_changes_forest():
    X, y = _toy()
    params = ForestParams(n_trees=5)
    assert fit(X, y, params, seed=1).to_json() != fit(X, y, params, seed=2).to_json()


def test_json_round_trip_predicts_identically(tmp_path):
    X, y = _toy()
    model = fit(X, y, ForestParams(n_trees=8), seed=3)
    model.save(tmp_path / "m.json")
    back = RandomForestModel.load(tmp_path / "m.json")
    assert np.array_equal(back.votes(X), model.votes(X))
    cls, frac = predict(back, X[0])
    assert cls == model.predict(X[:1])[0]
    assert frac.sum() == pytest.approx(1.0)


def test_importances_normalized_and_zero_for_unused_columns():
    X, _ = _toy()
    y = (X[:, 2] >= 3).astype(int)
    X = np.hstack([X, np.zeros((len(X), 1))])
    model = fit(X, y, ForestParams(n_trees=10), seed=0)
    assert model.importances.sum() == pytest.approx(1.0)
    assert (model.importances >= 0).all()
    assert model.importances[-1] == 0.0
    assert int(np.argmax(model.importances)) == 2


def test_depth_and_min_samples_limits():
    X, y = _toy()
    shallow = fit(X, y, ForestParams(n_trees=4, max_depth=1), seed=0)
    assert all(tree_depth(t) <= 1 for t in shallow.trees)
    stubs = fit(X, y, ForestParams(n_trees=4, min_samples_split=10_000), seed=0)
    assert all(isinstance(t, Leaf) for t in stubs.trees)


def test_leaf_majority_ties_to_lowest_class():
    assert Leaf((2, 3, 3)).majority == 1
    assert Leaf((0, 0)).majority == 0


def test_vote_ties_go_to_lowest_class():
    model = RandomForestModel([Leaf((0, 1)), Leaf((1, 0))], ForestParams(n_trees=2), 0, 2, 1, np.zeros(1))
    assert model.predict(np.array([[0.0]]))[0] == 0


def test_single_class_is_degenerate():
    with pytest.raises(DegenerateDataError):
        fit(np.zeros((4, 2)), np.zeros(4, dtype=int))


def test_row_width_checked():
    X, y = _toy()
    model = fit(X, y, ForestParams(n_trees=2), seed=0)
    with pytest.raises(ValueError):
        model.predict(np.zeros((1, 3)))


def test_tree_streams_are_reproducible():
    a = bootstrap_indices(tree_rng(42, 7), 50)
    b = bootstrap_indices(tree_rng(42, 7), 50)
    c = bootstrap_indices(tree_rng(42, 8), 50)
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_default_max_features():
    assert ForestParams().resolved_max_features(61) == 8
    assert ForestParams().resolved_max_features(34) == 6
    assert ForestParams(max_features=100).resolved_max_features(5) == 5
