"""CART trees and the three ensembles under test: RF, GB and XGB-style boosting.

Trees are stored as flat node arrays (``feature == -1`` marks a leaf) so the
ensemble can hand all of them to one traversal kernel. Every fit is
single-threaded and deterministic for a given seed unless ``n_jobs > 1``.
"""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import _kernels
from .candata import LabeledDataset

PROB_FLOOR = 1e-12
HESSIAN_FLOOR = 1e-12
MODEL_FORMAT = "canbench-model"
MODEL_VERSION = 1

# Reference-library defaults ("default configurations").
RF_DEFAULTS = {"n_estimators": 100, "max_depth": None, "min_samples_leaf": 1,
               "criterion": "gini", "max_features": "sqrt", "bootstrap": True}
GB_DEFAULTS = {"n_estimators": 100, "learning_rate": 0.1, "max_depth": 3}
XGB_DEFAULTS = {"n_estimators": 100, "learning_rate": 0.3, "max_depth": 6,
                "reg_lambda": 1.0, "gamma": 0.0, "min_child_weight": 1.0}
KINDS = ("RF", "GB", "XGB")


class ForestError(ValueError):
    pass


@dataclass(frozen=True)
class DecisionTree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # (n_nodes, n_outputs): class distribution or leaf weight
    n_features: int
    max_depth: int | None = None

    def __post_init__(self):
        for name, dtype in (("feature", np.intp), ("threshold", np.float64),
                            ("left", np.intp), ("right", np.intp)):
            arr = np.ascontiguousarray(getattr(self, name), dtype=dtype)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        value = np.ascontiguousarray(self.value, dtype=np.float64)
        if value.ndim == 1:
            value = value[:, None]
        value.setflags(write=False)
        object.__setattr__(self, "value", value)

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    @property
    def is_leaf(self) -> np.ndarray:
        return self.feature < 0

    def depth(self) -> int:
        best = 0
        stack = [(0, 0)]
        while stack:
            node, d = stack.pop()
            best = max(best, d)
            if self.feature[node] >= 0:
                stack.append((self.left[node], d + 1))
                stack.append((self.right[node], d + 1))
        return best

    def apply_values(self, X, backend: str | None = None) -> np.ndarray:
        X = _as_matrix(X, self.n_features)
        return _kernels.get(backend).accumulate(X, self.feature, self.threshold,
                                                self.left, self.right, self.value, [0])

    def predict_proba(self, X, backend: str | None = None) -> np.ndarray:
        return self.apply_values(X, backend)

    def to_dict(self) -> dict:
        return {"feature": self.feature.tolist(), "threshold": self.threshold.tolist(),
                "left": self.left.tolist(), "right": self.right.tolist(),
                "value": self.value.tolist(), "n_features": self.n_features,
                "max_depth": self.max_depth}

    @classmethod
    def from_dict(cls, d: dict) -> DecisionTree:
        return cls(np.array(d["feature"]), np.array(d["threshold"]),
                   np.array(d["left"]), np.array(d["right"]),
                   np.array(d["value"], dtype=np.float64).reshape(len(d["feature"]), -1),
                   d["n_features"], d["max_depth"])


def _as_matrix(X, n_features: int) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != n_features:
        raise ForestError(f"expected {n_features} features, got shape {X.shape}")
    return np.ascontiguousarray(X)


class _TreeBuilder:
    """Depth-first growth into flat node lists."""

    def __init__(self, max_depth, n_outputs):
        self.max_depth = max_depth
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[np.ndarray] = []
        self.n_outputs = n_outputs

    def new_node(self, value) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(value)
        return len(self.feature) - 1

    def grow(self, X, idx, leaf_value, find_split, n_features):
        root = self.new_node(leaf_value(idx))
        stack = [(root, idx, 0)]
        while stack:
            node, rows, depth = stack.pop()
            if self.max_depth is not None and depth >= self.max_depth:
                continue
            f, thr = find_split(rows)
            if f < 0:
                continue
            go_left = X[rows, f] <= thr
            lrows, rrows = rows[go_left], rows[~go_left]
            self.feature[node] = f
            self.threshold[node] = thr
            lnode = self.new_node(leaf_value(lrows))
            rnode = self.new_node(leaf_value(rrows))
            self.left[node] = lnode
            self.right[node] = rnode
            # right pushed first so the left subtree gets lower node ids
            stack.append((rnode, rrows, depth + 1))
            stack.append((lnode, lrows, depth + 1))
        return DecisionTree(np.array(self.feature), np.array(self.threshold),
                            np.array(self.left), np.array(self.right),
                            np.array(self.value).reshape(-1, self.n_outputs),
                            n_features, self.max_depth)


def _resolve_max_features(choice, d: int) -> int | None:
    if choice is None:
        return None
    if choice == "sqrt":
        return max(1, int(math.sqrt(d)))
    if choice == "log2":
        return max(1, int(math.log2(d)))
    k = int(choice)
    if not 1 <= k <= d:
        raise ForestError(f"max_features={choice} outside 1..{d}")
    return None if k == d else k


def _feature_picker(max_features, d, rng):
    all_features = np.arange(d, dtype=np.intp)
    if max_features is None:
        return lambda: all_features
    return lambda: np.sort(rng.choice(d, size=max_features, replace=False)).astype(np.intp)


def fit_tree(ds: LabeledDataset, max_depth: int | None = None, min_samples_leaf: int = 1,
             criterion: str = "gini", feature_subsample=None, seed: int = 0,
             sample_indices=None) -> DecisionTree:
    """Greedy CART classification tree storing class frequencies in leaves.

    Splits at midpoints of sorted distinct values; ties go to the lowest
    feature index, then the lowest threshold. ``sample_indices`` (with
    repeats) supports bootstrap resampling.
    """
    if len(ds) == 0:
        raise ForestError("cannot fit a tree on an empty dataset")
    if ds.n_features == 0:
        raise ForestError("dataset has no features")
    if criterion != "gini":
        raise ForestError(f"unsupported classification criterion {criterion!r}")
    if max_depth is not None and max_depth < 0:
        raise ForestError("max_depth must be >= 0")
    X = np.ascontiguousarray(ds.X)
    y = np.ascontiguousarray(ds.y, dtype=np.intp)
    K = ds.n_classes
    d = ds.n_features
    rng = np.random.default_rng(seed)
    pick = _feature_picker(_resolve_max_features(feature_subsample, d), d, rng)
    idx = np.arange(len(ds), dtype=np.intp) if sample_indices is None \
        else np.asarray(sample_indices, dtype=np.intp)

    def leaf_value(rows):
        counts = np.bincount(y[rows], minlength=K).astype(np.float64)
        return counts / counts.sum()

    def find_split(rows):
        if np.all(y[rows] == y[rows[0]]):
            return -1, 0.0
        f, thr, _ = _kernels.best_split_gini(X, y, rows, pick(), K, min_samples_leaf)
        return f, thr

    return _TreeBuilder(max_depth, K).grow(X, idx, leaf_value, find_split, d)


def xgb_leaf_weight(G: float, H: float, reg_lambda: float) -> float:
    return -G / max(H + reg_lambda, HESSIAN_FLOOR)


def split_gain(GL: float, HL: float, GR: float, HR: float, reg_lambda: float,
               gamma: float) -> float:
    """Regularized second-order split gain; non-positive means no split."""
    def score(G, H):
        return G * G / max(H + reg_lambda, HESSIAN_FLOOR)
    return 0.5 * (score(GL, HL) + score(GR, HR) - score(GL + GR, HL + HR)) - gamma


def fit_regression_tree(X: np.ndarray, grad: np.ndarray, hess: np.ndarray,
                        max_depth: int | None, reg_lambda: float = 0.0, gamma: float = 0.0,
                        min_samples_leaf: int = 1, min_child_weight: float = 0.0
                        ) -> DecisionTree:
    """Second-order regression tree; leaf weight -G/(H + lambda).

    With unit hessians and ``reg_lambda = 0`` this is a squared-error tree
    on the negative gradients (leaf = mean residual).
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    g = np.ascontiguousarray(grad, dtype=np.float64)
    h = np.ascontiguousarray(hess, dtype=np.float64)
    d = X.shape[1]
    features = np.arange(d, dtype=np.intp)

    def leaf_value(rows):
        return np.array([xgb_leaf_weight(g[rows].sum(), h[rows].sum(), reg_lambda)])

    def find_split(rows):
        f, thr, _ = _kernels.best_split_second_order(
            X, g, h, rows, features, reg_lambda, gamma, min_samples_leaf, min_child_weight)
        return f, thr

    idx = np.arange(X.shape[0], dtype=np.intp)
    return _TreeBuilder(max_depth, 1).grow(X, idx, leaf_value, find_split, d)


@dataclass(frozen=True)
class TrainReport:
    fit_wall_time: float
    n_estimators: int
    training_accuracy: float


@dataclass(frozen=True)
class EnsembleModel:
    """Fitted RF / GB / XGB ensemble; immutable.

    RF: ``trees`` are classification trees, probability = mean leaf
    distribution. GB/XGB: ``trees`` hold one regression tree per class per
    round (round-major), ``tree_class`` names its class, probability =
    softmax(base_scores + learning_rate * sum of leaf weights).
    """

    kind: str
    trees: tuple[DecisionTree, ...]
    n_estimators: int
    class_names: tuple[str, ...]
    n_features: int
    learning_rate: float = 1.0
    base_scores: np.ndarray | None = None
    tree_class: tuple[int, ...] = ()
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ForestError(f"unknown model kind {self.kind!r}")
        object.__setattr__(self, "trees", tuple(self.trees))
        object.__setattr__(self, "class_names", tuple(self.class_names))
        object.__setattr__(self, "tree_class", tuple(int(k) for k in self.tree_class))
        if self.base_scores is not None:
            base = np.array(self.base_scores, dtype=np.float64)
            base.setflags(write=False)
            object.__setattr__(self, "base_scores", base)
        object.__setattr__(self, "_flat", self._flatten())

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def _flatten(self):
        K = self.n_classes
        feats, thrs, lefts, rights, vals, roots = [], [], [], [], [], []
        offset = 0
        for i, tree in enumerate(self.trees):
            internal = tree.feature >= 0
            feats.append(tree.feature)
            thrs.append(tree.threshold)
            lefts.append(np.where(internal, tree.left + offset, -1))
            rights.append(np.where(internal, tree.right + offset, -1))
            if self.kind == "RF":
                vals.append(tree.value)
            else:
                v = np.zeros((tree.n_nodes, K))
                v[:, self.tree_class[i]] = self.learning_rate * tree.value[:, 0]
                vals.append(v)
            roots.append(offset)
            offset += tree.n_nodes
        if not self.trees:
            empty_i = np.zeros(0, dtype=np.intp)
            return (empty_i, np.zeros(0), empty_i, empty_i, np.zeros((0, K)),
                    np.zeros(0, dtype=np.intp))
        return (np.concatenate(feats).astype(np.intp), np.concatenate(thrs),
                np.concatenate(lefts).astype(np.intp), np.concatenate(rights).astype(np.intp),
                np.ascontiguousarray(np.vstack(vals)), np.array(roots, dtype=np.intp))

    def decision_scores(self, X, backend: str | None = None) -> np.ndarray:
        """Raw summed leaf rows (RF: distribution sums; boosting: logits)."""
        X = _as_matrix(X, self.n_features)
        feature, threshold, left, right, values, roots = self._flat
        acc = _kernels.get(backend).accumulate(X, feature, threshold, left, right, values, roots)
        if self.kind != "RF":
            acc += self.base_scores
        return acc

    def predict_proba(self, X, backend: str | None = None) -> np.ndarray:
        """Class probabilities; ``backend`` picks the traversal kernel."""
        single = np.asarray(X).ndim == 1
        scores = self.decision_scores(X, backend)
        if self.kind == "RF":
            proba = scores / len(self.trees)
        else:
            proba = softmax(scores)
        return proba[0] if single else proba

    def predict(self, X) -> np.ndarray:
        return np.argmax(np.atleast_2d(self.predict_proba(X)), axis=1)


def softmax(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def predict_proba(model: EnsembleModel, x, backend: str | None = None) -> np.ndarray:
    return model.predict_proba(x, backend)


def _training_accuracy(model, ds) -> float:
    return float(np.mean(model.predict(ds.X) == ds.y))


def _check_single_thread_ok(n_jobs: int):
    if n_jobs < 1:
        raise ForestError("n_jobs must be >= 1")


def fit_random_forest(ds: LabeledDataset, n_trees: int = RF_DEFAULTS["n_estimators"],
                      max_depth: int | None = None, min_samples_leaf: int = 1,
                      max_features="sqrt", bootstrap: bool = True, seed: int = 0,
                      n_jobs: int = 1, clock: Callable[[], float] = time.perf_counter):
    """Bagged CART ensemble; tree ``i`` is seeded from child ``i`` of ``seed``.

    Because of the per-tree seeding a forest of ``n`` trees is a prefix of
    any larger forest with the same seed.
    """
    if n_trees < 1:
        raise ForestError("n_trees must be >= 1")
    _check_single_thread_ok(n_jobs)
    t0 = clock()
    children = np.random.SeedSequence(seed).spawn(n_trees)
    n = len(ds)

    def one(child):
        rng = np.random.default_rng(child)
        rows = rng.integers(0, n, size=n) if bootstrap else None
        tree_seed = int(rng.integers(2**63 - 1)) if bootstrap or max_features else 0
        return fit_tree(ds, max_depth, min_samples_leaf, "gini", max_features,
                        tree_seed, sample_indices=rows)

    if n_jobs == 1:
        trees = [one(c) for c in children]
    else:
        with ThreadPoolExecutor(n_jobs) as pool:
            trees = list(pool.map(one, children))
    model = EnsembleModel("RF", trees, n_trees, ds.class_names, ds.n_features,
                          params={"max_depth": max_depth, "min_samples_leaf": min_samples_leaf,
                                  "max_features": max_features, "bootstrap": bootstrap,
                                  "seed": seed})
    elapsed = clock() - t0
    return model, TrainReport(elapsed, n_trees, _training_accuracy(model, ds))


def _prior_scores(ds: LabeledDataset) -> np.ndarray:
    counts = ds.class_counts().astype(np.float64)
    prior = np.maximum(counts / counts.sum(), PROB_FLOOR)
    return np.log(prior)


def _boost(ds, kind, n_rounds, learning_rate, max_depth, reg_lambda, gamma,
           min_child_weight, second_order, clock, n_jobs):
    if n_rounds < 0:
        raise ForestError("n_rounds must be >= 0")
    if not learning_rate > 0:
        raise ForestError("learning_rate must be > 0")
    _check_single_thread_ok(n_jobs)
    t0 = clock()
    X = np.ascontiguousarray(ds.X)
    K = ds.n_classes
    onehot = np.eye(K)[ds.y]
    base = _prior_scores(ds)
    scores = np.tile(base, (len(ds), 1))
    trees, tree_class = [], []
    pool = ThreadPoolExecutor(n_jobs) if n_jobs > 1 else None
    try:
        for _ in range(n_rounds):
            p = softmax(scores)
            grad = p - onehot
            hess = np.maximum(p * (1.0 - p), HESSIAN_FLOOR) if second_order \
                else np.ones_like(p)

            def one(k):
                return fit_regression_tree(X, grad[:, k], hess[:, k], max_depth, reg_lambda,
                                           gamma, 1, min_child_weight)

            round_trees = list(pool.map(one, range(K))) if pool else [one(k) for k in range(K)]
            for k, tree in enumerate(round_trees):
                scores[:, k] += learning_rate * tree.apply_values(X)[:, 0]
                trees.append(tree)
                tree_class.append(k)
    finally:
        if pool:
            pool.shutdown()
    params = {"max_depth": max_depth}
    if second_order:
        params.update(reg_lambda=reg_lambda, gamma=gamma, min_child_weight=min_child_weight)
    model = EnsembleModel(kind, trees, n_rounds, ds.class_names, ds.n_features,
                          learning_rate, base, tree_class, params)
    elapsed = clock() - t0
    return model, TrainReport(elapsed, n_rounds, _training_accuracy(model, ds))


def fit_gradient_boosting(ds: LabeledDataset, n_rounds: int = GB_DEFAULTS["n_estimators"],
                          learning_rate: float = GB_DEFAULTS["learning_rate"],
                          max_depth: int = GB_DEFAULTS["max_depth"], seed: int = 0,
                          n_jobs: int = 1, clock: Callable[[], float] = time.perf_counter):
    """Multinomial gradient boosting with squared-error trees on residuals.

    ``seed`` is accepted for interface symmetry; without row or column
    subsampling the fit has no randomness.
    """
    return _boost(ds, "GB", n_rounds, learning_rate, max_depth, 0.0, 0.0, 0.0,
                  False, clock, n_jobs)


def fit_xgb_style(ds: LabeledDataset, n_rounds: int = XGB_DEFAULTS["n_estimators"],
                  learning_rate: float = XGB_DEFAULTS["learning_rate"],
                  max_depth: int = XGB_DEFAULTS["max_depth"],
                  reg_lambda: float = XGB_DEFAULTS["reg_lambda"],
                  gamma: float = XGB_DEFAULTS["gamma"], seed: int = 0,
                  min_child_weight: float = XGB_DEFAULTS["min_child_weight"],
                  n_jobs: int = 1, clock: Callable[[], float] = time.perf_counter):
    """Second-order boosting of the softmax log-loss with L2-regularized leaves."""
    if reg_lambda < 0 or gamma < 0 or min_child_weight < 0:
        raise ForestError("reg_lambda, gamma and min_child_weight must be >= 0")
    return _boost(ds, "XGB", n_rounds, learning_rate, max_depth, reg_lambda, gamma,
                  min_child_weight, True, clock, n_jobs)


def fit_model(kind: str, ds: LabeledDataset, n_estimators: int | None = None,
              seed: int = 0, clock: Callable[[], float] = time.perf_counter, n_jobs: int = 1,
              **params):
    """Dispatch on ``kind`` with the library defaults for anything not given."""
    kind = kind.upper()
    if kind == "RF":
        p = {**RF_DEFAULTS, **params}
        p.pop("criterion")
        n = p.pop("n_estimators") if n_estimators is None else n_estimators
        p.pop("n_estimators", None)
        return fit_random_forest(ds, n, seed=seed, clock=clock, n_jobs=n_jobs, **p)
    if kind == "GB":
        p = {**GB_DEFAULTS, **params}
        n = p.pop("n_estimators") if n_estimators is None else n_estimators
        p.pop("n_estimators", None)
        return fit_gradient_boosting(ds, n, seed=seed, clock=clock, n_jobs=n_jobs, **p)
    if kind == "XGB":
        p = {**XGB_DEFAULTS, **params}
        n = p.pop("n_estimators") if n_estimators is None else n_estimators
        p.pop("n_estimators", None)
        return fit_xgb_style(ds, n, seed=seed, clock=clock, n_jobs=n_jobs, **p)
    raise ForestError(f"unknown model kind {kind!r}")


def log_loss(model: EnsembleModel, ds: LabeledDataset) -> float:
    p = np.clip(np.atleast_2d(model.predict_proba(ds.X)), PROB_FLOOR, 1.0)
    return float(-np.mean(np.log(p[np.arange(len(ds)), ds.y])))


# Serialization ---------------------------------------------------------------

def model_to_dict(model: EnsembleModel) -> dict:
    return {
        "format": MODEL_FORMAT, "version": MODEL_VERSION, "kind": model.kind,
        "n_estimators": model.n_estimators, "class_names": list(model.class_names),
        "n_features": model.n_features, "learning_rate": model.learning_rate,
        "base_scores": None if model.base_scores is None else model.base_scores.tolist(),
        "tree_class": list(model.tree_class), "params": model.params,
        "trees": [t.to_dict() for t in model.trees],
    }


def model_from_dict(d: dict) -> EnsembleModel:
    if d.get("format") != MODEL_FORMAT or d.get("version") != MODEL_VERSION:
        raise ForestError("unrecognized model file format/version")
    base = d["base_scores"]
    return EnsembleModel(d["kind"], [DecisionTree.from_dict(t) for t in d["trees"]],
                         d["n_estimators"], d["class_names"], d["n_features"],
                         d["learning_rate"], None if base is None else np.array(base),
                         d["tree_class"], d["params"])


def save_model(model: EnsembleModel, path) -> None:
    # json writes floats with repr(), which round-trips float64 exactly
    Path(path).write_text(json.dumps(model_to_dict(model), separators=(",", ":")) + "\n")


def load_model(path) -> EnsembleModel:
    return model_from_dict(json.loads(Path(path).read_text()))
