import math

import numpy as np
import pytest

from mgbdt.gbdt_core import fit_boosted
from mgbdt.layers import (
    SOFTMAX_CROSS_ENTROPY,
    SQUARED_ERROR,
    Layer,
    LinearClassifier,
    Loss,
    hidden_gradient,
    linear_forward,
    linear_update,
    loss_gradient,
    loss_value,
    mean_cross_entropy,
    predict_classes,
    softmax,
)

SQ = Loss(SQUARED_ERROR)
CE = Loss(SOFTMAX_CROSS_ENTROPY)
H = 1e-6


def central_difference(f, x):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        up, down = x.copy(), x.copy()
        up[idx] += H
        down[idx] -= H
        g[idx] = (f(up) - f(down)) / (2 * H)
    return g


def assert_rel_close(analytic, numeric, tol=1e-4):
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    # coordinates that are ~0 in both are compared absolutely
    rel = np.abs(analytic - numeric) / np.maximum(scale, 1e-6)
    assert rel.max() <= tol


class TestLosses:
    def test_squared_zero_at_target(self):
        assert loss_value(SQ, [1.0, 2.0], [1.0, 2.0]) == 0.0

    def test_squared_uses_half_factor(self):
        assert loss_value(SQ, [1.0, 0.0], [0.0, 0.0]) == 0.5

    def test_cross_entropy_uniform(self):
        assert loss_value(CE, [0.0, 0.0], 0) == pytest.approx(math.log(2), abs=1e-15)

    def test_gradients_at_known_points(self):
        np.testing.assert_array_equal(loss_gradient(SQ, [3.0, -1.0], [3.0, -1.0]), [0.0, 0.0])
        np.testing.assert_allclose(loss_gradient(CE, [0.0, 0.0], 0), [-0.5, 0.5])

    def test_losses_nonnegative(self, rng):
        o = rng.normal(size=(50, 4)) * 5
        assert np.all(loss_value(SQ, o, rng.normal(size=(50, 4))) >= 0)
        assert np.all(loss_value(CE, o, rng.integers(0, 4, 50)) >= 0)

    @pytest.mark.property
    def test_squared_gradient_matches_finite_differences(self, rng):
        for _ in range(100):
            o, y = rng.normal(size=4), rng.normal(size=4)
            numeric = central_difference(lambda v: loss_value(SQ, v, y), o)
            assert_rel_close(loss_gradient(SQ, o, y), numeric)

    @pytest.mark.property
    def test_cross_entropy_gradient_matches_finite_differences(self, rng):
        for _ in range(100):
            o, y = rng.normal(size=5) * 2, int(rng.integers(0, 5))
            numeric = central_difference(lambda v: loss_value(CE, v, y), o)
            assert_rel_close(loss_gradient(CE, o, y), numeric)

    def test_softmax_rows_sum_to_one(self, rng):
        p = softmax(rng.normal(size=(200, 6)) * 30)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)

    def test_cross_entropy_gradient_rows_sum_to_zero(self, rng):
        g = loss_gradient(CE, rng.normal(size=(200, 6)) * 10, rng.integers(0, 6, 200))
        np.testing.assert_allclose(g.sum(axis=1), 0.0, atol=1e-12)

    def test_argmax_invariant_to_row_shift(self, rng):
        z = rng.normal(size=(100, 4))
        shifted = z + rng.normal(size=(100, 1)) * 50
        np.testing.assert_array_equal(predict_classes(z), predict_classes(shifted))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            loss_value(SQ, [1.0, 2.0], [1.0])
        with pytest.raises(ValueError):
            loss_value(CE, [[0.0, 1.0]], [0, 1])
        with pytest.raises(ValueError):
            loss_value(CE, [0.0, 1.0], 2)

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            Loss("hinge")


class TestLinearClassifier:
    def test_zero_weights_give_zero_logits(self, rng):
        lc = LinearClassifier.zeros(3, 4)
        np.testing.assert_array_equal(linear_forward(lc, rng.normal(size=(5, 3))), np.zeros((5, 4)))

    def test_identity_weights_pass_input_through(self, rng):
        h = rng.normal(size=(5, 3))
        lc = LinearClassifier(np.eye(3), np.zeros(3))
        np.testing.assert_array_equal(linear_forward(lc, h), h)

    def test_width_mismatch_rejected(self):
        with pytest.raises(ValueError, match="input width"):
            linear_forward(LinearClassifier.zeros(3, 2), np.zeros((4, 2)))

    def test_zero_steps_keep_parameters(self, rng):
        lc = LinearClassifier(rng.normal(size=(3, 2)), rng.normal(size=2))
        assert linear_update(lc, rng.normal(size=(8, 3)), rng.integers(0, 2, 8), 0) is lc

    def test_separable_problem_reaches_full_accuracy(self, rng):
        X = rng.normal(size=(200, 2))
        y = (X[:, 0] + 0.5 * X[:, 1] > 0).astype(int)
        X = X + np.where(y[:, None] == 1, 0.5, -0.5)  # open a margin
        lc = linear_update(LinearClassifier.zeros(2, 2, 0.1), X, y, 500)
        assert np.mean(predict_classes(linear_forward(lc, X)) == y) == 1.0

    def test_each_step_lowers_mean_cross_entropy(self, rng):
        X = rng.normal(size=(100, 8))
        y = rng.integers(0, 3, 100)
        lc = LinearClassifier.zeros(8, 3, 0.01)
        prev = mean_cross_entropy(lc, X, y)
        for _ in range(100):
            lc = linear_update(lc, X, y, 1)
            cur = mean_cross_entropy(lc, X, y)
            assert cur <= prev
            prev = cur

    def test_label_shape_checked(self):
        with pytest.raises(ValueError):
            linear_update(LinearClassifier.zeros(2, 2), np.zeros((3, 2)), [0, 1], 1)


class TestHiddenGradient:
    def test_zero_weights_zero_gradient(self, rng):
        lc = LinearClassifier(np.zeros((3, 4)), rng.normal(size=4))
        g = hidden_gradient(lc, rng.normal(size=(6, 3)), rng.integers(0, 4, 6))
        np.testing.assert_array_equal(g, np.zeros((6, 3)))

    @pytest.mark.property
    def test_single_sample_matches_finite_differences(self):
        lc = LinearClassifier(np.array([[1.5, -0.7]]), np.array([0.2, -0.1]))
        h = np.array([[0.3]])
        numeric = central_difference(lambda v: mean_cross_entropy(lc, v, [1]), h)
        assert_rel_close(hidden_gradient(lc, h, [1]), numeric)

    @pytest.mark.property
    def test_mean_reduction_matches_finite_differences(self, rng):
        for _ in range(20):
            lc = LinearClassifier(rng.normal(size=(4, 3)), rng.normal(size=3))
            h = rng.normal(size=(6, 4))
            y = rng.integers(0, 3, 6)
            numeric = central_difference(lambda v: mean_cross_entropy(lc, v, y), h)
            assert_rel_close(hidden_gradient(lc, h, y), numeric)

    def test_per_row_reduction_is_rows_times_mean(self, rng):
        lc = LinearClassifier(rng.normal(size=(4, 3)), rng.normal(size=3))
        h = rng.normal(size=(10, 4))
        y = rng.integers(0, 3, 10)
        np.testing.assert_allclose(hidden_gradient(lc, h, y, reduction="none"),
                                   10 * hidden_gradient(lc, h, y), rtol=1e-14)
        with pytest.raises(ValueError):
            hidden_gradient(lc, h, y, reduction="sum")

    def test_gradient_rows_lie_in_weight_row_space(self, rng):
        # 4 hidden units, 2 classes: every gradient row is a multiple of w0 - w1
        W = rng.normal(size=(4, 2))
        lc = LinearClassifier(W, np.zeros(2))
        g = hidden_gradient(lc, rng.normal(size=(12, 4)), rng.integers(0, 2, 12))
        assert np.linalg.matrix_rank(np.vstack([W.T, g]), tol=1e-10) == np.linalg.matrix_rank(W.T)


class TestLayer:
    def test_shape_checks(self, rng):
        f = fit_boosted(rng.normal(size=(10, 3)), rng.normal(size=(10, 2)), 1)
        Layer(f, 3, 2)
        with pytest.raises(ValueError):
            Layer(f, 3, 4)
        g = fit_boosted(rng.normal(size=(10, 2)), rng.normal(size=(10, 3)), 1)
        assert Layer(f, 3, 2, g).inverse is g
        with pytest.raises(ValueError, match="inverse"):
            Layer(f, 3, 2, f)

    def test_linear_layer_has_no_inverse(self, rng):
        lc = LinearClassifier.zeros(2, 3)
        g = fit_boosted(rng.normal(size=(10, 3)), rng.normal(size=(10, 2)), 1)
        assert Layer(lc, 2, 3).is_linear
        with pytest.raises(ValueError, match="no inverse for linear top layer"):
            Layer(lc, 2, 3, g)
