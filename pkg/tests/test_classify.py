import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ladderembed.classify import (LogRegModel, confusion, fit_1nn, fit_logistic_regression, pca_project,
                                  predict_1nn, predict_logistic_regression, predict_proba)
from ladderembed.errors import ShapeMismatch, SingleClass

SEPARABLE_X = np.array([[0, 0], [0, 1], [5, 0], [5, 1]], dtype=float)
SEPARABLE_Y = np.array([0, 0, 1, 1])


class TestLogisticRegression:
    def test_separable(self):
        model = fit_logistic_regression(SEPARABLE_X, SEPARABLE_Y)
        assert np.array_equal(predict_logistic_regression(model, SEPARABLE_X), SEPARABLE_Y)
        assert np.array_equal(predict_logistic_regression(model, [[-1, 0.5], [6, 0.5]]), [0, 1])

    def test_single_class(self):
        with pytest.raises(SingleClass):
            fit_logistic_regression(SEPARABLE_X, np.zeros(4))

    def test_probabilities_sum_to_one(self, rs):
        X = rs.normal(size=(40, 3))
        y = rs.integers(0, 4, 40)
        model = fit_logistic_regression(X, y)
        labels, proba = predict_logistic_regression(model, rs.normal(size=(25, 3)) * 10, return_proba=True)
        assert np.allclose(proba.sum(axis=1), 1.0, atol=1e-9, rtol=0)
        assert np.array_equal(labels, model.classes[np.argmax(proba, axis=1)])

    def test_objective_non_increasing(self, rs):
        X = rs.normal(size=(60, 4))
        y = (X[:, 0] + 0.5 * rs.normal(size=60) > 0).astype(int) + (X[:, 1] > 1)
        model = fit_logistic_regression(X, y)
        assert np.all(np.diff(model.objective_trace) <= 1e-12)
        assert model.n_iter <= 100 and np.isfinite(model.grad_norm)

    def test_matches_reference_solver(self, rs):
        # same objective as scikit-learn's default lbfgs multinomial fit
        sklearn = pytest.importorskip("sklearn.linear_model")
        X = rs.normal(size=(80, 3))
        y = np.argmax(X @ rs.normal(size=(3, 3)) + rs.normal(size=(80, 3)), axis=1)
        ours = fit_logistic_regression(X, y, max_iter=500)
        ref = sklearn.LogisticRegression(C=1.0, max_iter=500, tol=1e-10).fit(X, y)
        assert np.allclose(predict_proba(ours, X), ref.predict_proba(X), atol=1e-4)

    def test_zero_model_tie_breaks_low(self):
        model = LogRegModel(np.zeros((3, 2)), np.zeros(3), np.array([4, 7, 9]))
        assert predict_logistic_regression(model, np.ones((5, 2))).tolist() == [4] * 5

    def test_dimension_mismatch(self):
        model = fit_logistic_regression(SEPARABLE_X, SEPARABLE_Y)
        with pytest.raises(ShapeMismatch):
            predict_logistic_regression(model, np.zeros((2, 3)))

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (6, 2), elements=st.floats(-5, 5)), st.floats(-100, 100))
    def test_argmax_invariant_to_logit_shift(self, X, c):
        model = LogRegModel(np.array([[1.0, -1.0], [0.5, 2.0]]), np.array([0.0, 0.3]), np.array([0, 1]))
        shifted = LogRegModel(model.weights, model.bias + c, model.classes)
        assert np.array_equal(predict_logistic_regression(model, X), predict_logistic_regression(shifted, X))


class TestOneNN:
    def test_exact_match(self):
        model = fit_1nn([[0, 0], [3, 3]], ["a", "b"])
        assert predict_1nn(model, [[3, 3]]).tolist() == ["b"]

    def test_tie_goes_to_lower_index(self):
        model = fit_1nn([[1, 0], [-1, 0]], [5, 2])
        assert predict_1nn(model, [[0, 0]]).tolist() == [5]

    def test_self_prediction(self, rs):
        X = rs.normal(size=(30, 4))
        y = rs.integers(0, 3, 30)
        assert np.array_equal(predict_1nn(fit_1nn(X, y), X), y)

    def test_empty_store(self):
        with pytest.raises(ValueError):
            fit_1nn(np.zeros((0, 2)), [])

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (8, 2), elements=st.integers(-20, 20).map(float)),
           arrays(np.float64, (5, 2), elements=st.integers(-20, 20).map(float)),
           st.integers(-50, 50).map(float))
    def test_translation_invariant(self, store, queries, shift):
        y = np.arange(8)
        a = predict_1nn(fit_1nn(store, y), queries)
        b = predict_1nn(fit_1nn(store + shift, y), queries + shift)
        assert np.array_equal(a, b)


class TestConfusion:
    def test_perfect(self):
        cm = confusion([0, 1, 2, 1], [0, 1, 2, 1], [0, 1, 2])
        assert np.array_equal(cm.counts, np.diag([1, 2, 1]))
        assert cm.accuracy == 1.0
        assert set(cm.recall().values()) == {1.0} and set(cm.precision().values()) == {1.0}

    def test_hand_counted(self):
        cm = confusion(list("AABB"), list("ABBB"), ["A", "B"])
        assert cm.accuracy == 0.75
        assert cm.recall()["A"] == 0.5
        assert cm.precision()["B"] == pytest.approx(2 / 3)

    def test_never_predicted_class_has_no_precision(self):
        cm = confusion([0, 1, 2], [0, 1, 1], [0, 1, 2])
        assert cm.precision()[2] is None
        assert cm.recall()[2] == 0.0

    def test_unknown_label(self):
        with pytest.raises(ValueError):
            confusion([0, 3], [0, 0], [0, 1])

    @given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=40))
    def test_counts_and_accuracy(self, pairs):
        t, p = zip(*pairs)
        cm = confusion(t, p, [0, 1, 2, 3])
        assert cm.total == len(pairs)
        assert cm.accuracy == np.mean(np.array(t) == np.array(p))


class TestPCA:
    def test_rotation_of_centred_2d(self, rs):
        X = rs.normal(size=(20, 2))
        X -= X.mean(axis=0)
        Y = pca_project(X, 2)
        dx = np.linalg.norm(X[:, None] - X[None], axis=-1)
        dy = np.linalg.norm(Y[:, None] - Y[None], axis=-1)
        assert np.allclose(dx, dy, atol=1e-9, rtol=0)

    def test_variance_order(self, rs):
        Y = pca_project(rs.normal(size=(50, 5)) * [1, 4, 2, 0.5, 3], 2)
        assert Y[:, 0].var() >= Y[:, 1].var()

    def test_line_in_3d(self, rs):
        t = rs.normal(size=(15, 1))
        X = t * np.array([[1.0, 2.0, -2.0]])
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            Y = pca_project(X, 2)
        if Y.shape[1] == 2:
            assert Y[:, 1].var() <= 1e-20
        else:
            assert Y.shape[1] == 1 and caught
        assert np.allclose(np.abs(Y[:, 0]), np.abs(t[:, 0] - t.mean()) * 3, atol=1e-9)

    def test_sign_convention(self, rs):
        X = rs.normal(size=(30, 3)) * [5, 1, 0.2]
        Y1 = pca_project(X, 2)
        Y2 = pca_project(-X, 2)
        # flipping the data flips the scores but the loadings keep their sign rule
        assert np.allclose(Y1, -Y2, atol=1e-9)
