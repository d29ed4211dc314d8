from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gnnnad.forest import ForestConfig, RandomForest, best_split, fit_forest, gini, plurality, predict
from oracles import brute_force_split, cart_tree, exact_gini


def single_tree(**kw):
    return ForestConfig(tree_count=1, bootstrap=False, features_per_split=10**6, **kw)


@pytest.mark.parametrize("labels, expected", [([0, 0, 1, 1], 0.5), ([0, 0, 0], 0.0), ([0, 1, 2], 2 / 3)])
def test_gini_examples(labels, expected):
    assert gini(labels) == pytest.approx(expected, abs=1e-15)


def test_gini_empty():
    with pytest.raises(ValueError):
        gini([])


def test_best_split_midpoint():
    f, thr, gain = best_split(np.array([[1.0], [2.0], [8.0], [9.0]]), np.array([0, 0, 1, 1]))
    assert (f, thr) == (0, 5.0)
    assert gain == pytest.approx(0.5)


def test_no_split_for_pure_or_constant():
    assert best_split(np.array([[1.0], [2.0]]), np.array([1, 1])) is None
    assert best_split(np.array([[3.0], [3.0]]), np.array([0, 1])) is None


def test_tie_prefers_lower_feature_then_threshold():
    x = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0], [4.0, 4.0]])
    assert best_split(x, np.array([0, 0, 1, 1]))[:2] == (0, 2.5)
    # 0,1,0,1 along one axis: splits at 1.5 and 3.5 tie; lower threshold wins
    assert best_split(x[:, :1], np.array([0, 1, 1, 0]))[:2] == (0, 1.5)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4), st.integers(0, 4)), min_size=6, max_size=6),
       st.lists(st.integers(0, 2), min_size=6, max_size=6))
def test_best_split_matches_brute_force(points, labels):
    pts = [tuple(float(v) for v in p) for p in points]
    want = brute_force_split(pts, labels)
    got = best_split(np.array(pts), np.array(labels), num_classes=3)
    if want is None:
        assert got is None
    else:
        assert got[:2] == want[:2]
        assert got[2] == pytest.approx(float(exact_gini(labels) - want[2]), abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_single_tree_equals_cart_oracle(seed):
    rng = np.random.default_rng(seed)
    x = rng.integers(0, 6, size=(10, 3)).astype(float)
    y = rng.integers(0, 3, size=10)
    y[:3] = [0, 1, 2]
    forest = fit_forest(x, y, single_tree())
    oracle = cart_tree([tuple(r) for r in x.tolist()], y.tolist(), 3)
    assert forest.trees[0].structure() == oracle


def test_training_accuracy_and_determinism():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(120, 5))
    y = (x[:, 0] + x[:, 2] > 0).astype(int)
    a = fit_forest(x, y, ForestConfig(tree_count=1, bootstrap=False))
    assert (a.predict(x) == y).all()
    f1 = fit_forest(x, y, ForestConfig(tree_count=15, seed=3))
    f2 = fit_forest(x, y, ForestConfig(tree_count=15, seed=3))
    assert f1.dumps() == f2.dumps()
    assert f1.dumps() != fit_forest(x, y, ForestConfig(tree_count=15, seed=4)).dumps()


def test_per_tree_seed_is_base_plus_index():
    rng = np.random.default_rng(2)
    x, y = rng.normal(size=(40, 4)), np.arange(40) % 2
    big = fit_forest(x, y, ForestConfig(tree_count=3, seed=10))
    shifted = fit_forest(x, y, ForestConfig(tree_count=1, seed=12))
    assert big.trees[2].structure() == shifted.trees[0].structure()


@pytest.mark.parametrize("votes, expected", [([0, 1, 1], 1), ([0, 0, 1, 2], 0), ([0, 1, 1, 0], 0), ([2, 2], 2)])
def test_plurality(votes, expected):
    assert plurality(votes, 3) == expected


def test_proba_sums_to_one_and_soft_voting():
    rng = np.random.default_rng(3)
    x, y = rng.normal(size=(60, 4)), rng.integers(0, 3, 60)
    for soft in (False, True):
        forest = fit_forest(x, y, ForestConfig(tree_count=7, soft_voting=soft, max_depth=3))
        p = forest.predict_proba(x)
        np.testing.assert_allclose(p.sum(axis=1), 1.0)
        assert forest.predict(x).tolist() == np.argmax(p, axis=1).tolist()


def test_serialization_round_trip():
    rng = np.random.default_rng(4)
    x, y = rng.normal(size=(80, 6)), rng.integers(0, 2, 80)
    forest = fit_forest(x, y, ForestConfig(tree_count=9, seed=1))
    again = RandomForest.loads(forest.dumps())
    assert again.dumps() == forest.dumps()
    assert again.predict(x).tolist() == forest.predict(x).tolist()
    assert predict(again, x[0]) == forest.predict(x[:1])[0]


def test_dimension_mismatch():
    forest = fit_forest(np.eye(4), [0, 1, 0, 1], ForestConfig(tree_count=2))
    with pytest.raises(ValueError, match="dimension"):
        forest.predict(np.ones((1, 3)))


def test_max_depth_zero_is_majority_leaf():
    forest = fit_forest(np.eye(5), [1, 1, 1, 0, 0], ForestConfig(tree_count=1, bootstrap=False, max_depth=0))
    assert forest.trees[0].structure() == ("leaf", (2, 3))


def test_exact_gini_oracle_sanity():
    assert exact_gini([0, 0, 1, 1]) == Fraction(1, 2)
