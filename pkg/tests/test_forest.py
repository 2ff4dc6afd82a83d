import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from canbench.candata import SyntheticConfig, generate_synthetic
from canbench.forest import (GB_DEFAULTS, RF_DEFAULTS, XGB_DEFAULTS, EnsembleModel, ForestError,
                             fit_gradient_boosting, fit_model, fit_random_forest,
                             fit_regression_tree, fit_tree, fit_xgb_style, load_model, log_loss,
                             predict_proba, save_model, split_gain, xgb_leaf_weight)

from conftest import make_ds

XOR = make_ds([[0, 0], [0, 1], [1, 0], [1, 1]], [0, 1, 1, 0])
LINE4 = make_ds([[0.], [1.], [2.], [3.]], [0, 0, 1, 1])


# Single trees --------------------------------------------------------------------------

def test_single_class_is_one_leaf():
    ds = make_ds([[0.1], [0.7], [0.3]], [1, 1, 1], ("a", "b"))
    t = fit_tree(ds)
    assert t.n_nodes == 1
    assert t.predict_proba(np.array([[0.5]])).tolist() == [[0.0, 1.0]]


def test_xor_depth2_is_perfect():
    t = fit_tree(XOR, max_depth=2)
    assert np.array_equal(t.predict_proba(XOR.X).argmax(axis=1), XOR.y)


def test_depth0_is_class_frequencies():
    ds = make_ds([[0.], [1.], [2.], [3.]], [0, 1, 1, 1])
    t = fit_tree(ds, max_depth=0)
    assert t.n_nodes == 1
    np.testing.assert_allclose(t.value[0], [0.25, 0.75])


def test_tree_errors():
    with pytest.raises(ForestError):
        fit_tree(make_ds(np.empty((0, 2)), np.empty(0, dtype=int), ("a",)))
    with pytest.raises(ForestError):
        fit_tree(make_ds(np.empty((3, 0)), [0, 1, 0]))


def test_midpoint_threshold_and_tie_break():
    # both features separate equally well; feature 0 wins the tie
    ds = make_ds([[0., 0.], [2., 2.]], [0, 1])
    t = fit_tree(ds)
    assert t.feature[0] == 0 and t.threshold[0] == 1.0


def test_predict_dimension_mismatch():
    t = fit_tree(XOR)
    with pytest.raises(ForestError):
        t.predict_proba(np.zeros((1, 3)))


# Random forest ---------------------------------------------------------------------

def test_rf_defaults():
    assert RF_DEFAULTS["n_estimators"] == 100
    assert RF_DEFAULTS["max_depth"] is None
    assert RF_DEFAULTS["max_features"] == "sqrt" and RF_DEFAULTS["bootstrap"] is True


def test_rf_degenerate_equals_tree(splits):
    rf, _ = fit_random_forest(splits.a, 1, bootstrap=False, max_features=None, seed=3)
    tree = fit_tree(splits.a, seed=3)
    X = np.random.default_rng(1).random((500, 10))
    assert np.array_equal(rf.predict_proba(X), tree.predict_proba(X))


def test_rf_deterministic(splits):
    a, _ = fit_random_forest(splits.a, 5, seed=11)
    b, _ = fit_random_forest(splits.a, 5, seed=11)
    assert np.array_equal(a.predict_proba(splits.b.X), b.predict_proba(splits.b.X))


def test_rf_smaller_forest_is_prefix(splits):
    small, _ = fit_random_forest(splits.a, 3, seed=2)
    big, _ = fit_random_forest(splits.a, 6, seed=2)
    for s, b in zip(small.trees, big.trees):
        assert np.array_equal(s.feature, b.feature) and np.array_equal(s.value, b.value)


def test_rf_zero_trees_error(splits):
    with pytest.raises(ForestError):
        fit_random_forest(splits.a, 0)


def test_rf_unanimous_pure_leaves():
    ds = make_ds([[0.], [0.1], [0.9], [1.0]], [0, 0, 1, 1])
    rf, _ = fit_random_forest(ds, 10, bootstrap=False, seed=0)
    assert predict_proba(rf, np.array([0.0])).tolist() == [1.0, 0.0]


def test_rf_threaded_matches_serial(splits):
    a, _ = fit_random_forest(splits.a, 4, seed=5, n_jobs=1)
    b, _ = fit_random_forest(splits.a, 4, seed=5, n_jobs=3)
    assert np.array_equal(a.predict_proba(splits.b.X), b.predict_proba(splits.b.X))


def test_train_report(splits):
    _, rep = fit_random_forest(splits.a, 3)
    assert rep.fit_wall_time >= 0 and rep.n_estimators == 3
    assert 0 <= rep.training_accuracy <= 1


# Gradient boosting -------------------------------------------------------------------

def test_gb_defaults():
    assert GB_DEFAULTS == {"n_estimators": 100, "learning_rate": 0.1, "max_depth": 3}


def test_gb_zero_rounds_predicts_priors():
    ds = make_ds([[0.], [1.], [2.], [3.]], [0, 1, 1, 1])
    m, _ = fit_gradient_boosting(ds, 0)
    np.testing.assert_allclose(m.predict_proba(np.array([[5.0]]))[0], [0.25, 0.75], atol=1e-12)


def test_gb_one_stump_lowers_loss():
    m0, _ = fit_gradient_boosting(LINE4, 0)
    m1, _ = fit_gradient_boosting(LINE4, 1, learning_rate=0.1, max_depth=1)
    assert log_loss(m0, LINE4) == pytest.approx(math.log(2), abs=1e-12)
    # residual +-0.5 per class, step 0.05, margin 0.1: -log(sigmoid(0.1))
    assert log_loss(m1, LINE4) == pytest.approx(0.6443966600735709, abs=1e-12)


def test_gb_rejects_bad_learning_rate():
    with pytest.raises(ForestError):
        fit_gradient_boosting(LINE4, 1, learning_rate=0.0)


def test_gb_loss_non_increasing_over_rounds():
    ds = generate_synthetic(SyntheticConfig(n=200, seed=1))
    losses = [log_loss(fit_gradient_boosting(ds, r, learning_rate=0.1)[0], ds)
              for r in range(0, 21)]
    assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))


def test_gb_equal_scores_give_uniform():
    ds = make_ds([[0.], [1.], [2.], [3.]], [0, 1, 0, 1])
    m, _ = fit_gradient_boosting(ds, 0)
    np.testing.assert_allclose(m.predict_proba(np.array([[1.0]]))[0], [0.5, 0.5])


# XGB-style ---------------------------------------------------------------------------

def test_xgb_defaults():
    assert XGB_DEFAULTS["n_estimators"] == 100
    assert XGB_DEFAULTS["learning_rate"] == 0.3 and XGB_DEFAULTS["max_depth"] == 6
    assert XGB_DEFAULTS["reg_lambda"] == 1.0 and XGB_DEFAULTS["gamma"] == 0.0


def test_leaf_weight_closed_form():
    assert xgb_leaf_weight(2.0, 4.0, 1.0) == pytest.approx(-0.4, abs=1e-12)


def test_identical_children_gain_is_minus_gamma():
    assert split_gain(1.0, 2.0, 1.0, 2.0, 1.0, 0.0) <= 0
    assert split_gain(1.0, 2.0, 1.0, 2.0, 0.0, 0.3) == pytest.approx(-0.3, abs=1e-12)


def test_xgb_zero_rounds_base_only():
    m, _ = fit_xgb_style(LINE4, 0)
    assert m.trees == ()
    np.testing.assert_allclose(m.predict_proba(LINE4.X), 0.5)


def test_xgb_rejects_negative_regularizers():
    with pytest.raises(ForestError):
        fit_xgb_style(LINE4, 1, reg_lambda=-1)
    with pytest.raises(ForestError):
        fit_xgb_style(LINE4, 1, gamma=-0.1)


def test_xgb_single_split_leaf_weights():
    X = np.array([[0.], [1.], [2.], [3.]])
    g = np.array([-1.0, -0.5, 0.5, 2.0])
    h = np.array([0.25, 0.25, 0.5, 0.5])
    t = fit_regression_tree(X, g, h, max_depth=1, reg_lambda=1.0)
    assert t.threshold[0] == 1.5
    left, right = t.left[0], t.right[0]
    assert t.value[left, 0] == pytest.approx(1.5 / 1.5, abs=1e-12)
    assert t.value[right, 0] == pytest.approx(-2.5 / 2.0, abs=1e-12)


def test_xgb_gamma_blocks_split():
    X = np.array([[0.], [1.]])
    t = fit_regression_tree(X, np.array([-1.0, 1.0]), np.array([1.0, 1.0]), 3,
                            reg_lambda=1.0, gamma=10.0)
    assert t.n_nodes == 1


# Shared contracts -----------------------------------------------------------------

@pytest.mark.parametrize("kind", ["RF", "GB", "XGB"])
def test_serialization_round_trip_bitwise(kind, splits, tmp_path):
    m, _ = fit_model(kind, splits.a, 4, seed=2)
    save_model(m, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    assert back.kind == kind and back.n_estimators == 4
    assert np.array_equal(back.predict_proba(splits.b.X), m.predict_proba(splits.b.X))


def test_load_rejects_foreign_json(tmp_path):
    p = tmp_path / "x.json"
    p.write_text('{"format": "other"}')
    with pytest.raises(ForestError):
        load_model(p)


def test_fit_model_unknown_kind(splits):
    with pytest.raises(ForestError):
        fit_model("SVM", splits.a)


@pytest.mark.parametrize("kind", ["RF", "GB", "XGB"])
def test_model_is_frozen(kind):
    m, _ = fit_model(kind, LINE4, 1)
    with pytest.raises(Exception):
        m.kind = "RF"
    assert isinstance(m, EnsembleModel)


@pytest.mark.parametrize("kind", ["RF", "GB", "XGB"])
def test_dimension_mismatch(kind):
    m, _ = fit_model(kind, LINE4, 1)
    with pytest.raises(ForestError):
        m.predict_proba(np.zeros((2, 3)))


@given(st.sampled_from(["RF", "GB", "XGB"]), st.integers(0, 2**32 - 1), st.integers(2, 4),
       st.integers(0, 3))
@settings(max_examples=60)
def test_probabilities_normalized(kind, seed, k, n_est):
    rng = np.random.default_rng(seed)
    y = np.concatenate([np.arange(k), rng.integers(0, k, 12)])
    ds = make_ds(rng.random((y.size, 3)), y)
    m, _ = fit_model(kind, ds, max(n_est, 1) if kind == "RF" else n_est, seed=seed)
    p = m.predict_proba(rng.random((20, 3)) * 2 - 0.5)
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)
