"""Bagged CART forests with leaf-co-membership locality weights.

Trees are grown by scikit-learn (variance-reduction CART); this module pins
the hyperparameters, derives per-tree seeds from the root seed and turns
leaf membership of the in-bag training rows into QRF-style weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp

from ..errors import ConfigurationError


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    min_leaf: int | None = None  # None: max(1, n // 20) of the data being fit
    mtry: int | None = None      # None: ceil(d/3) regression, ceil(sqrt(d)) classification
    bootstrap: bool = True
    seed: int = 0
    n_jobs: int | None = None

    def __post_init__(self):
        if self.n_trees < 1:
            raise ConfigurationError("n_trees must be >= 1")
        if self.min_leaf is not None and self.min_leaf < 1:
            raise ConfigurationError("min_leaf must be >= 1")
        if self.mtry is not None and self.mtry < 1:
            raise ConfigurationError("mtry must be >= 1")

    def resolved(self, n: int, d: int, classification: bool = False) -> "ForestParams":
        min_leaf = self.min_leaf if self.min_leaf is not None else max(1, n // 20)
        if self.mtry is None:
            mtry = math.ceil(math.sqrt(d)) if classification else math.ceil(d / 3)
        else:
            mtry = self.mtry
        if mtry > d:
            raise ConfigurationError(f"mtry={mtry} exceeds d={d}")
        return replace(self, min_leaf=min_leaf, mtry=mtry)


class Forest:
    """Fitted regression forest.

    ``leaf_members[t][l]`` is the sorted array of unique in-bag training
    indices in leaf ``l`` of tree ``t``.
    """

    def __init__(self, model, params: ForestParams, X_train: np.ndarray):
        self._model = model
        self.params = params
        self.n_train, self.d = X_train.shape
        self._build_membership(X_train)

    @property
    def trees(self):
        return self._model.estimators_

    def _build_membership(self, X):
        n = self.n_train
        blocks = []
        self.leaf_offset = []
        self.leaf_members = []
        offset = 0
        for tree, inbag in zip(self._model.estimators_, self._model.estimators_samples_):
            inbag = np.unique(inbag)
            leaves = tree.apply(X[inbag])
            n_nodes = tree.tree_.node_count
            counts = np.bincount(leaves, minlength=n_nodes).astype(float)
            vals = 1.0 / counts[leaves]
            blocks.append(sp.csr_matrix((vals, (leaves, inbag)), shape=(n_nodes, n)))
            self.leaf_offset.append(offset)
            offset += n_nodes
            order = np.argsort(leaves, kind="stable")
            ls, idx = leaves[order], inbag[order]
            cuts = np.flatnonzero(np.diff(ls)) + 1
            self.leaf_members.append(dict(zip(ls[np.r_[0, cuts]].tolist(), np.split(idx, cuts))))
        self._M = sp.vstack(blocks).tocsr()
        self._n_nodes_total = offset

    def apply(self, X) -> np.ndarray:
        """Leaf index of each row in every tree, shape ``(m, n_trees)``."""
        return self._model.apply(np.asarray(X, dtype=float))

    def predict(self, X) -> np.ndarray:
        return self._model.predict(np.asarray(X, dtype=float))

    __call__ = predict

    def weights(self, X) -> np.ndarray:
        """Locality weights ``(m, n_train)``; each row sums to one.

        ``w_i(x) = mean_t I[i in leaf_t(x)] / |leaf_t(x)|`` over unique
        in-bag members.
        """
        leaves = self.apply(X)
        m, T = leaves.shape
        cols = (leaves + np.asarray(self.leaf_offset)[None, :]).ravel()
        rows = np.repeat(np.arange(m), T)
        Q = sp.csr_matrix((np.ones(m * T), (rows, cols)), shape=(m, self._n_nodes_total))
        W = np.asarray((Q @ self._M).todense()) / T
        return W / W.sum(axis=1, keepdims=True)


def _check_xy(X, y):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float)
    if X.shape[0] != y.shape[0]:
        raise ConfigurationError("X and y row counts differ")
    return X, y


def _sk_forest(cls, X, y, params: ForestParams):
    n, d = X.shape
    if n < 2 * params.min_leaf:
        raise ConfigurationError(f"need n >= 2*min_leaf, got n={n}, min_leaf={params.min_leaf}")
    seed = int(np.random.SeedSequence(params.seed).generate_state(1)[0])
    model = cls(
        n_estimators=params.n_trees,
        min_samples_leaf=params.min_leaf,
        max_features=params.mtry,
        bootstrap=params.bootstrap,
        random_state=seed,
        n_jobs=params.n_jobs,
    )
    return model.fit(X, y)


def fit_forest(X, y, params: ForestParams | None = None) -> Forest:
    """Bagged regression forest; deterministic given ``params.seed``."""
    from sklearn.ensemble import RandomForestRegressor

    X, y = _check_xy(X, y)
    params = (params or ForestParams()).resolved(*X.shape)
    model = _sk_forest(RandomForestRegressor, X, y, params)
    return Forest(model, params, X)


def forest_weights(forest: Forest, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return forest.weights(x[None, :])[0]
    return forest.weights(x)


@dataclass
class ForestClassifier:
    """Probability forest with outputs clipped to ``[clip, 1 - clip]``."""

    model: object
    params: ForestParams
    clip: float = 0.01

    def predict_proba_raw(self, X) -> np.ndarray:
        proba = self.model.predict_proba(np.asarray(X, dtype=float))
        return proba[:, list(self.model.classes_).index(1)]

    def predict_proba(self, X) -> np.ndarray:
        return np.clip(self.predict_proba_raw(X), self.clip, 1.0 - self.clip)

    __call__ = predict_proba

    def clip_count(self, X) -> int:
        p = self.predict_proba_raw(X)
        return int(np.sum((p < self.clip) | (p > 1.0 - self.clip)))


def fit_forest_classifier(X, a, params: ForestParams | None = None) -> ForestClassifier:
    from sklearn.ensemble import RandomForestClassifier

    from ..errors import PreconditionError

    X, a = _check_xy(X, a)
    if np.unique(a).size < 2:
        raise PreconditionError("forest classifier needs both classes present")
    params = (params or ForestParams()).resolved(*X.shape, classification=True)
    model = _sk_forest(RandomForestClassifier, X, a.astype(int), params)
    return ForestClassifier(model, params)
