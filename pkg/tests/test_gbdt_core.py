import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from mgbdt import gbdt_core
from mgbdt.gbdt_core import (
    GBDTRegressor,
    RegressionTree,
    TreeGrowthParams,
    boost_more,
    boost_more_predict,
    fit_boosted,
    fit_tree,
    predict,
)

STUMP = TreeGrowthParams(max_depth=1)
UNBOUNDED = TreeGrowthParams(max_depth=None)


def sse(r, fitted):
    return float(np.sum((np.asarray(r) - fitted) ** 2))


def oracle_stump_sse(X, r):
    """Best depth-1 SSE by brute force over every feature and midpoint."""
    r = np.asarray(r, dtype=np.float64)
    best = sse(r, r.mean())
    for f in range(X.shape[1]):
        vals = np.unique(X[:, f])
        for a, b in zip(vals[:-1], vals[1:]):
            left = X[:, f] <= (a + b) / 2
            s = sse(r[left], r[left].mean()) + sse(r[~left], r[~left].mean())
            best = min(best, s)
    return best


def leaf_rows(tree, X):
    return tree.apply(X)


class TestFitTree:
    def test_step_function_single_split(self):
        X = np.array([[0.0], [1.0], [2.0], [3.0]])
        tree = fit_tree(X, [0, 0, 1, 1], STUMP)
        assert tree.n_leaves == 2
        assert tree.feature[0] == 0
        assert 1.0 < tree.threshold[0] <= 2.0
        assert sorted(tree.value[tree.feature < 0]) == [0.0, 1.0]
        np.testing.assert_array_equal(tree.predict(X), [0, 0, 1, 1])

    def test_constant_residuals_give_single_leaf(self, rng):
        X = rng.normal(size=(30, 3))
        tree = fit_tree(X, np.full(30, 2.5))
        assert tree.n_nodes == 1
        assert tree.value[0] == 2.5

    def test_alternating_residuals_match_oracle(self):
        X = np.array([[0.0], [1.0], [2.0], [3.0]])
        r = np.array([0.0, 1.0, 0.0, 1.0])
        tree = fit_tree(X, r, STUMP)
        assert sse(r, tree.predict(X)) == pytest.approx(oracle_stump_sse(X, r), abs=1e-12)

    @pytest.mark.property
    @settings(max_examples=150, deadline=None)
    @given(data=st.data())
    def test_split_oracle_equivalence(self, data):
        n = data.draw(st.integers(1, 64))
        p = data.draw(st.integers(1, 4))
        # a coarse grid produces plenty of ties and repeated values
        X = data.draw(hnp.arrays(np.float64, (n, p), elements=st.integers(-4, 4).map(float)))
        r = data.draw(hnp.arrays(np.float64, n, elements=st.floats(-10, 10, width=32)))
        tree = fit_tree(X, r, STUMP)
        assert sse(r, tree.predict(X)) == pytest.approx(oracle_stump_sse(X, r), rel=1e-9, abs=1e-9)

    def test_ties_go_to_lowest_feature_then_smallest_threshold(self):
        X = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]])
        # splitting at 0.5 or 1.5 leaves the same SSE on either feature
        tree = fit_tree(X, [0.0, 1.0, 0.0], STUMP)
        assert tree.feature[0] == 0
        assert tree.threshold[0] == 0.5

    def test_constant_feature_is_skipped(self):
        X = np.column_stack([np.ones(6), np.arange(6.0)])
        tree = fit_tree(X, [0, 0, 0, 1, 1, 1], STUMP)
        assert tree.feature[0] == 1
        assert tree.threshold[0] == 2.5

    def test_leaf_values_are_mean_residuals(self, rng):
        X = rng.normal(size=(200, 3))
        r = rng.normal(size=200)
        tree = fit_tree(X, r, TreeGrowthParams(max_depth=3))
        leaves = leaf_rows(tree, X)
        for leaf in np.unique(leaves):
            assert tree.value[leaf] == pytest.approx(r[leaves == leaf].mean(), abs=1e-12)

    @pytest.mark.parametrize("depth,min_leaf", [(1, 1), (3, 5), (5, 1), (5, 20)])
    def test_depth_and_leaf_size_limits(self, rng, depth, min_leaf):
        X = rng.normal(size=(150, 4))
        r = rng.normal(size=150)
        tree = fit_tree(X, r, TreeGrowthParams(max_depth=depth, min_samples_leaf=min_leaf))
        assert tree.depth() <= depth
        counts = np.bincount(leaf_rows(tree, X), minlength=tree.n_nodes)
        assert counts[tree.feature < 0].min() >= min_leaf
        internal = tree.feature >= 0
        assert np.all(tree.left[internal] >= 0) and np.all(tree.right[internal] >= 0)

    def test_unbounded_tree_interpolates_distinct_rows(self, rng):
        X = rng.normal(size=(40, 2))
        r = rng.normal(size=40)
        tree = fit_tree(X, r, UNBOUNDED)
        np.testing.assert_allclose(tree.predict(X), r, atol=1e-12)

    def test_row_permutation_gives_identical_tree(self, rng):
        X = rng.integers(0, 6, size=(80, 3)).astype(float)
        r = rng.integers(-8, 8, size=80) / 8.0  # dyadic values keep sums exact
        perm = rng.permutation(80)
        a = fit_tree(X, r, TreeGrowthParams(max_depth=4))
        b = fit_tree(X[perm], r[perm], TreeGrowthParams(max_depth=4))
        Z = rng.integers(-1, 7, size=(300, 3)).astype(float)
        np.testing.assert_array_equal(a.predict(Z), b.predict(Z))

    def test_empty_input_rejected(self):
        with pytest.raises(ValueError, match="empty training set"):
            fit_tree(np.empty((0, 2)), np.empty(0))

    @pytest.mark.parametrize("bad", [np.nan, np.inf])
    def test_non_finite_input_rejected(self, bad):
        X = np.array([[0.0], [bad]])
        with pytest.raises(ValueError, match="non-finite input"):
            fit_tree(X, [0.0, 1.0])
        with pytest.raises(ValueError, match="non-finite input"):
            fit_tree(np.array([[0.0], [1.0]]), [0.0, bad])

    def test_row_mismatch_rejected(self):
        with pytest.raises(ValueError, match="row mismatch"):
            fit_tree(np.zeros((3, 1)), [1.0, 2.0])

    def test_params_validated(self):
        with pytest.raises(ValueError):
            TreeGrowthParams(max_depth=0)
        with pytest.raises(ValueError):
            TreeGrowthParams(min_samples_leaf=0)
        with pytest.raises(ValueError):
            TreeGrowthParams(min_gain=-1.0)


class TestBoosting:
    def test_zero_rounds_predicts_target_mean(self, rng):
        X = rng.normal(size=(50, 3))
        Y = rng.normal(size=(50, 2))
        m = fit_boosted(X, Y, 0)
        out = m.predict(rng.normal(size=(7, 3)))
        np.testing.assert_array_equal(out, np.tile([Y[:, 0].mean(), Y[:, 1].mean()], (7, 1)))

    def test_single_full_round_interpolates(self, rng):
        X = rng.normal(size=(60, 2))
        y = rng.normal(size=60)
        m = fit_boosted(X, y, 1, shrinkage=1.0, params=UNBOUNDED)
        assert np.mean((m.predict(X)[:, 0] - y) ** 2) == pytest.approx(0.0, abs=1e-24)

    @pytest.mark.property
    @pytest.mark.parametrize("gamma", [0.1, 0.5, 1.0])
    def test_training_loss_is_monotone(self, gamma):
        rng = np.random.default_rng(7)
        X = rng.normal(size=(100, 5))
        Y = np.column_stack([X @ rng.normal(size=5), np.sin(X[:, 0]) * 3]) + rng.normal(size=(100, 2))
        m, pred = boost_more_predict(fit_boosted(X, Y, 0, gamma), X, Y, 0)
        prev = np.mean((Y - pred) ** 2, axis=0)
        for _ in range(50):
            m, pred = boost_more_predict(m, X, Y, 1)
            cur = np.mean((Y - pred) ** 2, axis=0)
            assert np.all(cur <= prev + 1e-12)
            prev = cur

    def test_warm_start_matches_single_fit_bit_exactly(self, rng):
        X = rng.normal(size=(120, 4))
        Y = rng.normal(size=(120, 3))
        whole = fit_boosted(X, Y, 10)
        split = boost_more(fit_boosted(X, Y, 4), X, Y, 6)
        Z = rng.normal(size=(500, 4))
        np.testing.assert_array_equal(whole.predict(Z), split.predict(Z))
        np.testing.assert_array_equal(whole.predict(X), split.predict(X))

    def test_zero_extra_rounds_is_identity(self, rng):
        X = rng.normal(size=(40, 2))
        m = fit_boosted(X, X[:, :1], 3)
        assert boost_more(m, X, X[:, :1], 0) is m

    def test_refit_on_own_predictions_adds_zero_leaves(self, rng):
        X = rng.normal(size=(80, 3))
        m = fit_boosted(X, rng.normal(size=(80, 2)), 5)
        m2 = boost_more(m, X, m.predict(X), 2)
        for forest in m2.forests:
            for tree in forest[5:]:
                assert tree.n_nodes == 1
                assert abs(tree.value[0]) <= 1e-12

    def test_boosting_is_append_only(self, rng):
        X = rng.normal(size=(60, 3))
        Y = rng.normal(size=(60, 2))
        m = fit_boosted(X, Y, 3)
        before = m.predict(X)
        m2 = boost_more(m, X, Y, 4)
        for d in range(2):
            assert all(a is b for a, b in zip(m.forests[d], m2.forests[d][:3]))
        np.testing.assert_array_equal(m.predict(X), before)

    def test_boost_prediction_equals_predict(self, rng):
        X = rng.normal(size=(90, 3))
        Y = rng.normal(size=(90, 4))
        m, pred = boost_more_predict(fit_boosted(X, Y, 2), X, Y, 3)
        np.testing.assert_array_equal(pred, predict(m, X))

    def test_joint_growth_matches_independent_dimensions(self, rng):
        X = rng.normal(size=(150, 4))
        Y = rng.normal(size=(150, 3))
        joint = fit_boosted(X, Y, 4).predict(X)
        for d in range(3):
            single = fit_boosted(X, Y[:, d], 4).predict(X)[:, 0]
            np.testing.assert_array_equal(joint[:, d], single)

    def test_thread_count_does_not_change_model(self, rng, monkeypatch):
        X = rng.normal(size=(100, 3))
        Y = rng.normal(size=(100, 5))
        monkeypatch.setenv("MGBDT_THREADS", "1")
        a = fit_boosted(X, Y, 3).predict(X)
        monkeypatch.setenv("MGBDT_THREADS", "3")
        assert gbdt_core.n_threads() == 3
        b = fit_boosted(X, Y, 3).predict(X)
        np.testing.assert_array_equal(a, b)

    def test_dimension_mismatch_rejected(self, rng):
        X = rng.normal(size=(20, 2))
        m = fit_boosted(X, rng.normal(size=(20, 2)), 1)
        with pytest.raises(ValueError, match="output_dim"):
            boost_more(m, X, rng.normal(size=(20, 3)), 1)
        with pytest.raises(ValueError, match="row mismatch"):
            fit_boosted(X, rng.normal(size=(19, 2)), 1)
        with pytest.raises(ValueError):
            fit_boosted(X, X, 1, shrinkage=0.0)

    def test_deterministic(self, rng):
        X = rng.normal(size=(70, 3))
        Y = rng.normal(size=(70, 2))
        np.testing.assert_array_equal(fit_boosted(X, Y, 5).predict(X), fit_boosted(X, Y, 5).predict(X))


class TestPredict:
    def test_hand_traced_tree(self):
        tree = RegressionTree(np.array([0, -1, -1]), np.array([1.5, 0.0, 0.0]),
                              np.array([1, -1, -1]), np.array([2, -1, -1]),
                              np.array([0.0, 0.0, 1.0]), 1)
        m = GBDTRegressor(1, np.zeros(1), 1.0, [[tree]])
        np.testing.assert_array_equal(m.predict(np.array([[0.0], [2.0]])), [[0.0], [1.0]])

    def test_base_only_model(self):
        m = GBDTRegressor(2, np.array([1.0, -2.0]), 0.1, [[], []])
        np.testing.assert_array_equal(m.predict(np.zeros((3, 2))), [[1.0, -2.0]] * 3)

    def test_width_mismatch_rejected(self, rng):
        m = fit_boosted(rng.normal(size=(10, 3)), rng.normal(size=10), 1)
        with pytest.raises(ValueError, match="feature width"):
            m.predict(np.zeros((2, 4)))

    def test_padded_and_pointer_layouts_agree(self, rng):
        X = rng.normal(size=(300, 4))
        Y = rng.normal(size=(300, 3))
        m = fit_boosted(X, Y, 6, params=TreeGrowthParams(max_depth=4))
        Z = rng.normal(size=(400, 4))
        padded = m.predict(Z)
        assert m._pack["complete"]
        m._pack.clear()
        m._pack.update(gbdt_core._empty_pack(3, complete=False))
        np.testing.assert_array_equal(m.predict(Z), padded)

    def test_deep_trees_use_pointer_layout(self, rng):
        X = rng.normal(size=(60, 2))
        y = np.argsort(X[:, 0]).astype(float)
        m = fit_boosted(X, y, 1, 1.0, UNBOUNDED)
        out = m.predict(X)
        assert not m._pack["complete"]
        np.testing.assert_allclose(out[:, 0], y, atol=1e-9)

    def test_pointwise_in_rows(self, rng):
        X = rng.normal(size=(80, 3))
        m = fit_boosted(X, rng.normal(size=(80, 2)), 4)
        Z = rng.normal(size=(50, 3))
        perm = rng.permutation(50)
        np.testing.assert_array_equal(m.predict(Z)[perm], m.predict(Z[perm]))
