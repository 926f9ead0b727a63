from __future__ import annotations

import numpy as np
import pytest

from iotriage.dataset import split
from iotriage.detect import (
    ForestParams,
    benchmark,
    load_model,
    logreg_loss_and_grad,
    predict_batch,
    predict_proba,
    save_model,
    train_gaussian_nb,
    train_knn,
    train_logreg,
    train_random_forest,
)
from iotriage.errors import DataError
from tests.conftest import dataset_from_arrays, separable_blobs


# ---------------------------------------------------------------------------
# Random forest
# ---------------------------------------------------------------------------

def test_rf_single_class_predicts_that_class():
    ds = dataset_from_arrays(np.arange(12).reshape(6, 2), ["only"] * 6)
    model = train_random_forest(ds, ForestParams(n_trees=3, seed=1))
    assert predict_batch(model, np.zeros((4, 2))) == ["only"] * 4


def test_rf_separable_training_accuracy():
    ds = separable_blobs(100, seed=0)
    model = train_random_forest(ds, ForestParams(n_trees=15, seed=2))
    predicted = predict_batch(model, ds.feature_matrix)
    accuracy = np.mean([p == t for p, t in zip(predicted, ds.labels)])
    assert accuracy >= 0.99


def test_rf_deterministic_for_seed():
    ds = separable_blobs(60, seed=1)
    held_out = np.random.default_rng(5).normal(3, 2, size=(40, 2))
    one = train_random_forest(ds, ForestParams(n_trees=10, seed=33))
    two = train_random_forest(ds, ForestParams(n_trees=10, seed=33))
    assert predict_batch(one, held_out) == predict_batch(two, held_out)


def test_rf_beats_any_single_tree_out_of_bag():
    ds = separable_blobs(80, seed=2)
    model = train_random_forest(ds, ForestParams(n_trees=12, seed=9))
    predicted = predict_batch(model, ds.feature_matrix)
    rf_accuracy = np.mean([p == t for p, t in zip(predicted, ds.labels)])
    oob = model.train_meta["oob_accuracies"]
    assert oob, "bootstrap mode should record out-of-bag accuracies"
    assert rf_accuracy >= max(oob) - 1e-12


def test_rf_rejects_empty_and_nonfinite():
    ds = dataset_from_arrays(np.zeros((0, 2)), [])
    with pytest.raises(DataError, match="empty training set"):
        train_random_forest(ds, ForestParams(n_trees=2, seed=1))
    bad = dataset_from_arrays(np.array([[1.0, np.nan], [0.0, 1.0]]), ["a", "b"])
    with pytest.raises(DataError, match="non-finite"):
        train_random_forest(bad, ForestParams(n_trees=2, seed=1))


def test_rf_respects_max_depth():
    ds = separable_blobs(60, seed=16)
    stumps = train_random_forest(ds, ForestParams(n_trees=5, max_depth=1, seed=3))
    for tree in stumps.state.trees:
        internal = tree.feature >= 0
        assert internal.sum() <= 1  # at most the root splits
    # depth-0 forests degenerate to the majority class
    roots = train_random_forest(ds, ForestParams(n_trees=3, max_depth=0, seed=3))
    predictions = set(predict_batch(roots, ds.feature_matrix))
    assert len(predictions) == 1


def test_forest_params_invariants():
    with pytest.raises(DataError):
        ForestParams(n_trees=0)
    with pytest.raises(DataError):
        ForestParams(min_samples_split=1)
    assert ForestParams(features_per_split="sqrt").resolve_mtry(16) == 4
    assert ForestParams(features_per_split="log2").resolve_mtry(16) == 4
    assert ForestParams(features_per_split=3).resolve_mtry(2) == 2


# ---------------------------------------------------------------------------
# k-nearest neighbors
# ---------------------------------------------------------------------------

def test_knn_nearest_is_self():
    X = np.array([[0.0, 0.0], [5.0, 5.0], [9.0, 0.0]])
    ds = dataset_from_arrays(X, ["a", "b", "c"])
    model = train_knn(ds, k=1)
    assert predict_batch(model, X) == ["a", "b", "c"]


def test_knn_hand_placed_distances():
    ds = dataset_from_arrays(np.array([[1.0], [2.0], [9.0]]), ["A", "A", "B"])
    model = train_knn(ds, k=3)
    assert predict_batch(model, np.array([[0.0]])) == ["A"]


def test_knn_all_neighbors_vote_majority():
    ds = dataset_from_arrays(np.array([[0.0], [0.1], [5.0]]), ["A", "A", "B"])
    model = train_knn(ds, k=3)
    assert predict_batch(model, np.array([[100.0], [-100.0]])) == ["A", "A"]


def test_knn_vote_tie_breaks_by_distance_then_class_order():
    # 1-1 vote: the class with the nearer neighbor wins (ay at distance 1)
    ds = dataset_from_arrays(np.array([[2.0], [-1.0]]), ["zed", "ay"])
    model = train_knn(ds, k=2)
    assert predict_batch(model, np.array([[0.0]])) == ["ay"]
    # vote and distance both tied: class-set order decides (ay < zed)
    tie = dataset_from_arrays(np.array([[1.0], [-1.0]]), ["zed", "ay"])
    model = train_knn(tie, k=2)
    assert predict_batch(model, np.array([[0.0]])) == ["ay"]


def test_knn_k_out_of_range():
    ds = dataset_from_arrays(np.zeros((3, 1)), ["a", "b", "c"])
    with pytest.raises(DataError, match="k must be"):
        train_knn(ds, k=0)
    with pytest.raises(DataError, match="k must be"):
        train_knn(ds, k=4)


# ---------------------------------------------------------------------------
# Gaussian naive Bayes
# ---------------------------------------------------------------------------

def test_gnb_prior_wins_on_neutral_input():
    X = np.zeros((10, 1))
    ds = dataset_from_arrays(X, ["major"] * 9 + ["minor"])
    model = train_gaussian_nb(ds)
    assert predict_batch(model, np.zeros((3, 1))) == ["major"] * 3


def test_gnb_likelihood_dominates_separated_means():
    X = np.array([[-1.0], [0.0], [1.0], [9.0], [10.0], [11.0]])
    ds = dataset_from_arrays(X, ["low", "low", "low", "high", "high", "high"])
    model = train_gaussian_nb(ds)
    assert predict_batch(model, np.array([[9.0]])) == ["high"]
    assert predict_batch(model, np.array([[1.0]])) == ["low"]


def test_gnb_constant_feature_uses_variance_floor():
    X = np.array([[1.0, 0.0], [1.0, 1.0], [1.0, 0.2], [1.0, 0.9]])
    ds = dataset_from_arrays(X, ["a", "b", "a", "b"])
    model = train_gaussian_nb(ds)
    assert (model.state.variances >= 1e-9).all()
    assert len(predict_batch(model, X)) == 4


def test_gnb_posteriors_sum_to_one():
    ds = separable_blobs(30, seed=3)
    model = train_gaussian_nb(ds)
    probs = predict_proba(model, ds.feature_matrix)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)


# ---------------------------------------------------------------------------
# Logistic regression
# ---------------------------------------------------------------------------

def test_logreg_zero_epochs_uniform():
    ds = separable_blobs(20, seed=4)
    model = train_logreg(ds, epochs=0)
    probs = predict_proba(model, ds.feature_matrix[:5])
    np.testing.assert_allclose(probs, 0.5, atol=1e-12)
    assert predict_batch(model, ds.feature_matrix[:5]) == ["alpha"] * 5


def test_logreg_learns_separable_toy():
    ds = separable_blobs(100, seed=5)
    model = train_logreg(ds, epochs=500, learning_rate=0.1)
    predicted = predict_batch(model, ds.feature_matrix)
    accuracy = np.mean([p == t for p, t in zip(predicted, ds.labels)])
    assert accuracy >= 0.95


def test_logreg_gradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(10, 3))
    y = rng.integers(0, 3, size=10)
    Xb = np.hstack([np.ones((10, 1)), X])
    Y = np.zeros((10, 3))
    Y[np.arange(10), y] = 1.0
    for W in (np.zeros((4, 3)), rng.normal(scale=0.5, size=(4, 3))):
        _, grad = logreg_loss_and_grad(W, Xb, Y, l2=1e-3)
        h = 1e-6
        numeric = np.zeros_like(W)
        for i in range(W.shape[0]):
            for j in range(W.shape[1]):
                up = W.copy()
                up[i, j] += h
                down = W.copy()
                down[i, j] -= h
                numeric[i, j] = (
                    logreg_loss_and_grad(up, Xb, Y, 1e-3)[0]
                    - logreg_loss_and_grad(down, Xb, Y, 1e-3)[0]
                ) / (2 * h)
        denom = max(np.abs(numeric).max(), 1e-12)
        assert np.abs(grad - numeric).max() / denom < 1e-5


def test_logreg_loss_non_increasing():
    ds = separable_blobs(50, seed=6)
    model = train_logreg(ds, epochs=200, learning_rate=0.1)
    history = model.train_meta["loss_history"]
    assert all(b <= a + 1e-12 for a, b in zip(history, history[1:]))


def test_logreg_nonfinite_loss_names_epoch():
    # an absurd step size overflows the weights within a few epochs
    ds = separable_blobs(20, seed=21)
    with pytest.raises(DataError, match=r"non-finite loss at epoch \d"):
        train_logreg(ds, epochs=20, learning_rate=1e200)


def test_logreg_posteriors_sum_to_one():
    ds = separable_blobs(25, seed=8)
    model = train_logreg(ds, epochs=50)
    probs = predict_proba(model, ds.feature_matrix)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)


# ---------------------------------------------------------------------------
# predict_batch and serialization
# ---------------------------------------------------------------------------

def test_predict_batch_empty_matrix():
    ds = separable_blobs(10, seed=9)
    model = train_knn(ds, k=1)
    assert predict_batch(model, np.zeros((0, 2))) == []


def test_predict_batch_width_mismatch():
    ds = separable_blobs(10, seed=10)
    model = train_gaussian_nb(ds)
    with pytest.raises(DataError, match="width mismatch"):
        predict_batch(model, np.zeros((3, 5)))


@pytest.mark.parametrize("trainer", ["rf", "knn", "gnb", "logreg"])
def test_serialization_round_trip(tmp_path, trainer):
    ds = separable_blobs(40, seed=11)
    model = {
        "rf": lambda: train_random_forest(ds, ForestParams(n_trees=5, seed=3)),
        "knn": lambda: train_knn(ds, k=3),
        "gnb": lambda: train_gaussian_nb(ds),
        "logreg": lambda: train_logreg(ds, epochs=30),
    }[trainer]()
    queries = np.random.default_rng(12).normal(3, 3, size=(30, 2))
    before = predict_batch(model, queries)
    path = tmp_path / "model.json"
    save_model(model, path)
    reloaded = load_model(path)
    assert predict_batch(reloaded, queries) == before
    assert reloaded.class_set == model.class_set


def test_load_model_rejects_version_mismatch(tmp_path):
    ds = separable_blobs(10, seed=13)
    model = train_gaussian_nb(ds)
    path = tmp_path / "model.json"
    save_model(model, path)
    import json

    payload = json.loads(path.read_text())
    payload["format_version"] = 99
    path.write_text(json.dumps(payload))
    with pytest.raises(DataError, match="format version"):
        load_model(path)


# ---------------------------------------------------------------------------
# benchmark
# ---------------------------------------------------------------------------

def test_benchmark_accepts_external_plugin_models():
    # the benchmark table stays extensible: anything exposing the trained
    # model surface (kind, class_set, state.predict_indices) slots in
    class MajorityStub:
        def __init__(self, index):
            self.index = index

        def predict_indices(self, X):
            return np.full(len(X), self.index, dtype=np.int64)

    from iotriage.detect import TrainedModel

    ds = separable_blobs(40, seed=15)
    pair = split(ds, 0.8, seed=2)
    plugin = TrainedModel(
        kind="xgb-plugin",
        class_set=pair.train.class_set,
        params={},
        state=MajorityStub(0),
        train_meta={"n_features": pair.train.n_features, "train_seconds": 0.0},
    )
    rf = train_random_forest(pair.train, ForestParams(n_trees=5, seed=6))
    rows = benchmark([plugin, rf], pair)
    kinds = [r.kind for r in rows]
    assert set(kinds) == {"xgb-plugin", "rf"}
    assert kinds[0] == "rf"  # stub predicts one class, sorts below


def test_benchmark_perfect_model_and_ordering():
    ds = separable_blobs(100, seed=14)
    pair = split(ds, 0.8, seed=1)
    rf = train_random_forest(pair.train, ForestParams(n_trees=10, seed=4))
    gnb = train_gaussian_nb(pair.train)
    rows = benchmark([gnb, rf], pair)

    assert rows[0].macro_f1 >= rows[1].macro_f1  # sorted descending
    rf_row = next(r for r in rows if r.kind == "rf")
    gnb_row = next(r for r in rows if r.kind == "gnb")
    assert rf_row.macro_f1 >= gnb_row.macro_f1
    assert rf_row.macro_f1 == 1.0
    assert rf_row.accuracy == 1.0
    assert 0.0 <= rf_row.weighted_f1 <= 1.0
