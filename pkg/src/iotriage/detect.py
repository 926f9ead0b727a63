"""Multi-class flow classifiers behind one model interface.

Random forest (the framework's detector), k-nearest neighbors, Gaussian
naive Bayes, and multinomial logistic regression, all trained on numeric
feature matrices from the dataset module. Every trainer is deterministic
given (data, params, seed), and models serialize to a versioned JSON file
that reloads with identical predictions.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import LabeledDataset, SplitPair
from .errors import DataError
from .metrics import confusion, report

MODEL_FORMAT_VERSION = 1

MODEL_KINDS = ("rf", "knn", "gnb", "logreg")


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    max_depth: int | None = None
    min_samples_split: int = 2
    features_per_split: str | int = "sqrt"  # "sqrt" | "log2" | fixed k
    bootstrap: bool = True
    seed: int = 42

    def __post_init__(self):
        if self.n_trees < 1:
            raise DataError("n_trees must be >= 1")
        if self.min_samples_split < 2:
            raise DataError("min_samples_split must be >= 2")

    def resolve_mtry(self, n_features: int) -> int:
        if isinstance(self.features_per_split, int):
            k = self.features_per_split
        elif self.features_per_split == "sqrt":
            k = int(math.sqrt(n_features))
        elif self.features_per_split == "log2":
            k = int(math.log2(n_features)) if n_features > 1 else 1
        else:
            raise DataError(f"unknown features_per_split: {self.features_per_split!r}")
        return min(max(k, 1), n_features)


@dataclass
class TrainedModel:
    """A fitted classifier: kind tag, label order, and learned state."""

    kind: str
    class_set: tuple[str, ...]
    params: dict
    state: object
    train_meta: dict = field(default_factory=dict)


@dataclass(frozen=True)
class BenchmarkRow:
    kind: str
    macro_precision: float
    macro_recall: float
    macro_f1: float
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float
    accuracy: float
    train_seconds: float
    test_seconds: float


def _check_features(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DataError(f"feature matrix must be 2-D, got shape {X.shape}")
    if X.size and not np.isfinite(X).all():
        raise DataError("non-finite values in feature matrix")
    return X


def _training_arrays(train: LabeledDataset) -> tuple[np.ndarray, np.ndarray]:
    if train.n_rows == 0:
        raise DataError("empty training set")
    X = _check_features(train.feature_matrix)
    index = {label: i for i, label in enumerate(train.class_set)}
    y = np.array([index[label] for label in train.labels], dtype=np.int64)
    return X, y


# ---------------------------------------------------------------------------
# Random forest
# ---------------------------------------------------------------------------

class _Tree:
    """CART arrays: feature < 0 marks a leaf, whose class sits in ``leaf``."""

    __slots__ = ("feature", "threshold", "left", "right", "leaf")

    def __init__(self, feature, threshold, left, right, leaf):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=np.float64)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.leaf = np.asarray(leaf, dtype=np.int64)

    def predict_indices(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        while True:
            internal = self.feature[node] >= 0
            if not internal.any():
                break
            idx = np.flatnonzero(internal)
            cur = node[idx]
            go_left = X[idx, self.feature[cur]] <= self.threshold[cur]
            node[idx] = np.where(go_left, self.left[cur], self.right[cur])
        return self.leaf[node]


def _best_split(
    X: np.ndarray, y: np.ndarray, rows: np.ndarray, feats: np.ndarray, n_classes: int
) -> tuple[int, float] | None:
    """Exhaustive Gini search over candidate features for one node.

    Returns (feature, threshold) of the lowest weighted child impurity, or
    None when no candidate feature separates the rows. Ties keep the first
    candidate in ``feats`` order and the lowest threshold, so growth is
    deterministic for a given feature draw.
    """
    n = len(rows)
    y_node = y[rows]
    best_score = np.inf
    best: tuple[int, float] | None = None
    for feat in feats:
        x = X[rows, feat]
        order = np.argsort(x, kind="stable")
        xs = x[order]
        if xs[0] == xs[-1]:
            continue
        boundaries = np.flatnonzero(xs[:-1] < xs[1:])
        ys = y_node[order]
        onehot = np.zeros((n, n_classes), dtype=np.float64)
        onehot[np.arange(n), ys] = 1.0
        cum = np.cumsum(onehot, axis=0)
        total = cum[-1]

        n_left = (boundaries + 1).astype(np.float64)
        n_right = n - n_left
        left = cum[boundaries]
        right = total - left
        gini_left = 1.0 - np.sum((left / n_left[:, None]) ** 2, axis=1)
        gini_right = 1.0 - np.sum((right / n_right[:, None]) ** 2, axis=1)
        weighted = (n_left * gini_left + n_right * gini_right) / n

        k = int(np.argmin(weighted))
        if weighted[k] < best_score - 1e-12:
            best_score = float(weighted[k])
            pos = boundaries[k]
            best = (int(feat), float((xs[pos] + xs[pos + 1]) / 2.0))
    return best


def _grow_tree(
    X: np.ndarray,
    y: np.ndarray,
    n_classes: int,
    params: ForestParams,
    rng: np.random.Generator,
) -> tuple[_Tree, np.ndarray]:
    """Grow one CART on a bootstrap sample; returns the tree and its sample."""
    n = len(y)
    if params.bootstrap:
        sample = rng.integers(0, n, n)
    else:
        sample = np.arange(n)
    mtry = params.resolve_mtry(X.shape[1])

    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    leaf: list[int] = []

    def new_node() -> int:
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        leaf.append(-1)
        return len(feature) - 1

    root = new_node()
    stack: list[tuple[int, np.ndarray, int]] = [(root, sample, 0)]
    while stack:
        node_id, rows, depth = stack.pop()
        counts = np.bincount(y[rows], minlength=n_classes)
        majority = int(np.argmax(counts))  # ties -> lowest class index
        pure = counts[majority] == len(rows)
        depth_capped = params.max_depth is not None and depth >= params.max_depth
        if pure or depth_capped or len(rows) < params.min_samples_split:
            leaf[node_id] = majority
            continue

        feats = rng.choice(X.shape[1], size=mtry, replace=False)
        split_at = _best_split(X, y, rows, feats, n_classes)
        if split_at is None:
            leaf[node_id] = majority
            continue

        feat, thr = split_at
        mask = X[rows, feat] <= thr
        left_rows = rows[mask]
        right_rows = rows[~mask]
        if len(left_rows) == 0 or len(right_rows) == 0:
            leaf[node_id] = majority
            continue

        feature[node_id] = feat
        threshold[node_id] = thr
        left_id = new_node()
        right_id = new_node()
        left[node_id] = left_id
        right[node_id] = right_id
        stack.append((right_id, right_rows, depth + 1))
        stack.append((left_id, left_rows, depth + 1))

    return _Tree(feature, threshold, left, right, leaf), sample


class _ForestState:
    def __init__(self, trees: list[_Tree], n_classes: int):
        self.trees = trees
        self.n_classes = n_classes

    def predict_indices(self, X: np.ndarray) -> np.ndarray:
        votes = np.zeros((len(X), self.n_classes), dtype=np.int64)
        rows = np.arange(len(X))
        for tree in self.trees:
            votes[rows, tree.predict_indices(X)] += 1
        return np.argmax(votes, axis=1)  # vote ties -> class-set order

    def to_jsonable(self) -> dict:
        return {
            "n_classes": self.n_classes,
            "trees": [
                {
                    "feature": t.feature.tolist(),
                    "threshold": t.threshold.tolist(),
                    "left": t.left.tolist(),
                    "right": t.right.tolist(),
                    "leaf": t.leaf.tolist(),
                }
                for t in self.trees
            ],
        }

    @classmethod
    def from_jsonable(cls, data: dict) -> "_ForestState":
        trees = [
            _Tree(t["feature"], t["threshold"], t["left"], t["right"], t["leaf"])
            for t in data["trees"]
        ]
        return cls(trees, int(data["n_classes"]))


def train_random_forest(train: LabeledDataset, params: ForestParams) -> TrainedModel:
    """Grow ``n_trees`` Gini CARTs on bootstrap samples; majority vote.

    Per-tree seeds are spawned from the master seed up front, so growth
    order cannot change results. Prediction ties break by class-set order.
    """
    X, y = _training_arrays(train)
    n_classes = len(train.class_set)
    started = time.perf_counter()

    seeds = np.random.SeedSequence(params.seed).spawn(params.n_trees)
    trees: list[_Tree] = []
    oob_accuracies: list[float] = []
    all_rows = np.arange(len(y))
    for seq in seeds:
        tree, sample = _grow_tree(X, y, n_classes, params, np.random.default_rng(seq))
        trees.append(tree)
        if params.bootstrap:
            oob = np.setdiff1d(all_rows, sample)
            if len(oob):
                acc = float(np.mean(tree.predict_indices(X[oob]) == y[oob]))
                oob_accuracies.append(acc)

    elapsed = time.perf_counter() - started
    return TrainedModel(
        kind="rf",
        class_set=train.class_set,
        params={
            "n_trees": params.n_trees,
            "max_depth": params.max_depth,
            "min_samples_split": params.min_samples_split,
            "features_per_split": params.features_per_split,
            "bootstrap": params.bootstrap,
            "seed": params.seed,
        },
        state=_ForestState(trees, n_classes),
        train_meta={
            "seed": params.seed,
            "train_seconds": elapsed,
            "n_rows": len(y),
            "n_features": X.shape[1],
            "oob_accuracies": oob_accuracies,
        },
    )


# ---------------------------------------------------------------------------
# k-nearest neighbors
# ---------------------------------------------------------------------------

class _KnnState:
    def __init__(self, X: np.ndarray, y: np.ndarray, k: int, n_classes: int):
        self.X = X
        self.y = y
        self.k = k
        self.n_classes = n_classes

    def predict_indices(self, X: np.ndarray) -> np.ndarray:
        out = np.empty(len(X), dtype=np.int64)
        train_sq = np.sum(self.X**2, axis=1)
        # cap the distance block at ~5M doubles to bound peak memory
        chunk = max(1, int(5e6) // max(1, len(self.X)))
        for start in range(0, len(X), chunk):
            q = X[start : start + chunk]
            d2 = np.maximum(
                np.sum(q**2, axis=1)[:, None] - 2.0 * q @ self.X.T + train_sq[None, :],
                0.0,
            )
            # stable argsort: equal distances fall back to train index order
            order = np.argsort(d2, axis=1, kind="stable")[:, : self.k]
            for i in range(len(q)):
                neighbors = order[i]
                votes = np.bincount(self.y[neighbors], minlength=self.n_classes)
                top = np.flatnonzero(votes == votes.max())
                if len(top) == 1:
                    out[start + i] = top[0]
                    continue
                # vote tie: nearest tied class wins, exact ties by class order
                labels = self.y[neighbors]
                best_class = top[0]
                best_dist = np.inf
                for cls in top:  # ascending class index
                    dist = float(d2[i, neighbors[labels == cls]].min())
                    if dist < best_dist:
                        best_dist = dist
                        best_class = cls
                out[start + i] = best_class
        return out

    def to_jsonable(self) -> dict:
        return {
            "X": self.X.tolist(),
            "y": self.y.tolist(),
            "k": self.k,
            "n_classes": self.n_classes,
        }

    @classmethod
    def from_jsonable(cls, data: dict) -> "_KnnState":
        return cls(
            np.array(data["X"], dtype=np.float64),
            np.array(data["y"], dtype=np.int64),
            int(data["k"]),
            int(data["n_classes"]),
        )


def train_knn(train: LabeledDataset, k: int = 5) -> TrainedModel:
    """Store the (already standardized) training matrix for Euclidean k-vote."""
    X, y = _training_arrays(train)
    if not 1 <= k <= len(y):
        raise DataError(f"k must be in [1, {len(y)}], got {k}")
    started = time.perf_counter()
    state = _KnnState(X, y, k, len(train.class_set))
    return TrainedModel(
        kind="knn",
        class_set=train.class_set,
        params={"k": k},
        state=state,
        train_meta={
            "train_seconds": time.perf_counter() - started,
            "n_rows": len(y),
            "n_features": X.shape[1],
        },
    )


# ---------------------------------------------------------------------------
# Gaussian naive Bayes
# ---------------------------------------------------------------------------

VARIANCE_FLOOR = 1e-9


class _GnbState:
    def __init__(self, log_priors, means, variances):
        self.log_priors = np.asarray(log_priors, dtype=np.float64)
        self.means = np.asarray(means, dtype=np.float64)
        self.variances = np.asarray(variances, dtype=np.float64)

    def log_joint(self, X: np.ndarray) -> np.ndarray:
        # (n, C): log prior + sum of per-feature Gaussian log densities
        diff = X[:, None, :] - self.means[None, :, :]
        log_like = -0.5 * np.sum(
            np.log(2.0 * np.pi * self.variances)[None, :, :]
            + diff**2 / self.variances[None, :, :],
            axis=2,
        )
        return self.log_priors[None, :] + log_like

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        joint = self.log_joint(X)
        joint -= joint.max(axis=1, keepdims=True)
        p = np.exp(joint)
        return p / p.sum(axis=1, keepdims=True)

    def predict_indices(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.log_joint(X), axis=1)

    def to_jsonable(self) -> dict:
        return {
            "log_priors": self.log_priors.tolist(),
            "means": self.means.tolist(),
            "variances": self.variances.tolist(),
        }

    @classmethod
    def from_jsonable(cls, data: dict) -> "_GnbState":
        return cls(data["log_priors"], data["means"], data["variances"])


def train_gaussian_nb(train: LabeledDataset) -> TrainedModel:
    """Per-class feature means and floored variances; log-space argmax."""
    X, y = _training_arrays(train)
    n_classes = len(train.class_set)
    started = time.perf_counter()
    counts = np.bincount(y, minlength=n_classes)
    if (counts == 0).any():
        empty = train.class_set[int(np.argmin(counts))]
        raise DataError(f"empty class in training set: {empty!r}")
    means = np.empty((n_classes, X.shape[1]))
    variances = np.empty((n_classes, X.shape[1]))
    for c in range(n_classes):
        rows = X[y == c]
        means[c] = rows.mean(axis=0)
        variances[c] = np.maximum(rows.var(axis=0), VARIANCE_FLOOR)
    log_priors = np.log(counts / counts.sum())
    return TrainedModel(
        kind="gnb",
        class_set=train.class_set,
        params={},
        state=_GnbState(log_priors, means, variances),
        train_meta={
            "train_seconds": time.perf_counter() - started,
            "n_rows": len(y),
            "n_features": X.shape[1],
        },
    )


# ---------------------------------------------------------------------------
# Multinomial logistic regression
# ---------------------------------------------------------------------------

def logreg_loss_and_grad(
    W: np.ndarray, Xb: np.ndarray, Y: np.ndarray, l2: float
) -> tuple[float, np.ndarray]:
    """Mean cross-entropy with L2 penalty (bias row exempt) and its gradient.

    ``Xb`` carries a leading all-ones bias column; ``W`` is (d+1, C);
    ``Y`` is one-hot (n, C).
    """
    n = len(Xb)
    # diverging weights overflow to inf here; the caller checks finiteness
    with np.errstate(over="ignore", invalid="ignore"):
        scores = Xb @ W
        scores -= scores.max(axis=1, keepdims=True)
        exp = np.exp(scores)
        probs = exp / exp.sum(axis=1, keepdims=True)
        log_probs = scores - np.log(exp.sum(axis=1, keepdims=True))
        penalty_mask = np.ones_like(W)
        penalty_mask[0, :] = 0.0
        loss = -np.sum(Y * log_probs) / n + 0.5 * l2 * np.sum((penalty_mask * W) ** 2)
        grad = Xb.T @ (probs - Y) / n + l2 * (penalty_mask * W)
    return float(loss), grad


class _LogRegState:
    def __init__(self, W: np.ndarray):
        self.W = np.asarray(W, dtype=np.float64)

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        Xb = np.hstack([np.ones((len(X), 1)), X])
        scores = Xb @ self.W
        scores -= scores.max(axis=1, keepdims=True)
        p = np.exp(scores)
        return p / p.sum(axis=1, keepdims=True)

    def predict_indices(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=1)

    def to_jsonable(self) -> dict:
        return {"W": self.W.tolist()}

    @classmethod
    def from_jsonable(cls, data: dict) -> "_LogRegState":
        return cls(np.array(data["W"], dtype=np.float64))


def train_logreg(
    train: LabeledDataset,
    epochs: int = 300,
    learning_rate: float = 0.1,
    l2: float = 1e-4,
) -> TrainedModel:
    """Softmax regression by full-batch gradient descent from zero weights."""
    X, y = _training_arrays(train)
    n_classes = len(train.class_set)
    started = time.perf_counter()
    Xb = np.hstack([np.ones((len(X), 1)), X])
    Y = np.zeros((len(y), n_classes))
    Y[np.arange(len(y)), y] = 1.0

    W = np.zeros((Xb.shape[1], n_classes))
    loss_history: list[float] = []
    for epoch in range(epochs):
        loss, grad = logreg_loss_and_grad(W, Xb, Y, l2)
        if not math.isfinite(loss):
            raise DataError(f"non-finite loss at epoch {epoch}")
        loss_history.append(loss)
        W -= learning_rate * grad
    final_loss, _ = logreg_loss_and_grad(W, Xb, Y, l2)
    loss_history.append(final_loss)

    return TrainedModel(
        kind="logreg",
        class_set=train.class_set,
        params={"epochs": epochs, "learning_rate": learning_rate, "l2": l2},
        state=_LogRegState(W),
        train_meta={
            "train_seconds": time.perf_counter() - started,
            "n_rows": len(y),
            "n_features": X.shape[1],
            "loss_history": loss_history,
        },
    )


# ---------------------------------------------------------------------------
# Shared surface
# ---------------------------------------------------------------------------

def predict_batch(model: TrainedModel, features: np.ndarray) -> list[str]:
    """One label per row, drawn from the model's class set."""
    X = _check_features(features)
    if len(X) == 0:
        return []
    expected = model.train_meta.get("n_features")
    if expected is not None and X.shape[1] != expected:
        raise DataError(
            f"feature width mismatch: model expects {expected}, got {X.shape[1]}"
        )
    indices = model.state.predict_indices(X)
    return [model.class_set[i] for i in indices]


def predict_proba(model: TrainedModel, features: np.ndarray) -> np.ndarray:
    """Per-class probabilities for models that expose them (gnb, logreg)."""
    X = _check_features(features)
    if not hasattr(model.state, "predict_proba"):
        raise DataError(f"model kind {model.kind!r} has no probability output")
    return model.state.predict_proba(X)


_STATE_CLASSES = {
    "rf": _ForestState,
    "knn": _KnnState,
    "gnb": _GnbState,
    "logreg": _LogRegState,
}


def save_model(model: TrainedModel, path: str | Path) -> None:
    payload = {
        "format_version": MODEL_FORMAT_VERSION,
        "kind": model.kind,
        "class_set": list(model.class_set),
        "params": model.params,
        "train_meta": model.train_meta,
        "state": model.state.to_jsonable(),
    }
    Path(path).write_text(json.dumps(payload), encoding="utf-8")


def load_model(path: str | Path) -> TrainedModel:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    version = payload.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise DataError(
            f"model format version {version} not supported (expected {MODEL_FORMAT_VERSION})"
        )
    kind = payload["kind"]
    if kind not in _STATE_CLASSES:
        raise DataError(f"unknown model kind: {kind!r}")
    return TrainedModel(
        kind=kind,
        class_set=tuple(payload["class_set"]),
        params=payload["params"],
        state=_STATE_CLASSES[kind].from_jsonable(payload["state"]),
        train_meta=payload["train_meta"],
    )


def benchmark(models: list[TrainedModel], split_pair: SplitPair) -> list[BenchmarkRow]:
    """Score each model on the test side; rows sorted by macro-F1 descending."""
    rows = []
    test = split_pair.test
    for model in models:
        started = time.perf_counter()
        predicted = predict_batch(model, test.feature_matrix)
        test_seconds = time.perf_counter() - started
        rep = report(confusion(test.labels, predicted, model.class_set))
        rows.append(
            BenchmarkRow(
                kind=model.kind,
                macro_precision=rep.macro_precision,
                macro_recall=rep.macro_recall,
                macro_f1=rep.macro_f1,
                weighted_precision=rep.weighted_precision,
                weighted_recall=rep.weighted_recall,
                weighted_f1=rep.weighted_f1,
                accuracy=rep.accuracy,
                train_seconds=float(model.train_meta.get("train_seconds", 0.0)),
                test_seconds=test_seconds,
            )
        )
    rows.sort(key=lambda r: -r.macro_f1)
    return rows
