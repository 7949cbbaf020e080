"""Gradient-boosted regression trees with a squared-error objective.

Exact greedy splits (no histogramming): feature columns are argsorted
once per tree and the sort orders are partitioned top-down, so split
search is a cumulative-sum scan per node.  Leaf values are the mean
residual, which makes per-round training MSE nonincreasing for any
learning rate in (0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EPS_GAIN = 1e-12


@dataclass(frozen=True)
class GbdtParams:
    max_depth: int = 6
    n_trees: int = 200
    learning_rate: float = 0.1
    min_samples_leaf: int = 1
    subsample: float = 1.0
    seed: int = 0
    objective: str = "mse"

    def __post_init__(self):
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if not (0.0 < self.learning_rate <= 1.0):
            raise ValueError("learning_rate must be in (0, 1]")
        if not (0.0 < self.subsample <= 1.0):
            raise ValueError("subsample must be in (0, 1]")
        if self.objective == "rel":
            # Config hook for a relative-error objective; not implemented.
            raise NotImplementedError("relative-error objective is a config hook only")
        if self.objective not in ("mse", "log-mse"):
            raise ValueError(f"unknown objective {self.objective!r}")


# Paper-scale preset, retained for completeness; desk-scale default above.
PAPER_SCALE = GbdtParams(max_depth=7, n_trees=1500, learning_rate=0.03)


class Tree:
    """Flat-array binary regression tree; leaves self-loop for batch predict."""

    __slots__ = ("feature", "threshold", "left", "right", "value", "max_depth")

    def __init__(self, feature, threshold, left, right, value, max_depth):
        self.feature = np.asarray(feature, dtype=np.int32)
        self.threshold = np.asarray(threshold, dtype=np.float64)
        self.left = np.asarray(left, dtype=np.int32)
        self.right = np.asarray(right, dtype=np.int32)
        self.value = np.asarray(value, dtype=np.float64)
        self.max_depth = int(max_depth)

    def predict(self, X: np.ndarray) -> np.ndarray:
        m = len(X)
        rows = np.arange(m)
        node = np.zeros(m, dtype=np.int32)
        for _ in range(self.max_depth):
            feat = np.maximum(self.feature[node], 0)
            go_left = X[rows, feat] < self.threshold[node]
            node = np.where(go_left, self.left[node], self.right[node])
        return self.value[node]

    def arrays(self) -> dict[str, np.ndarray]:
        return {"feature": self.feature, "threshold": self.threshold,
                "left": self.left, "right": self.right, "value": self.value}


class _TreeBuilder:
    def __init__(self, max_depth: int, min_leaf: int):
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[float] = []

    def _new_node(self) -> int:
        i = len(self.feature)
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(i)
        self.right.append(i)
        self.value.append(0.0)
        return i

    def build(self, X: np.ndarray, g: np.ndarray, order: np.ndarray) -> Tree:
        root = self._new_node()
        self._grow(root, X, g, order, depth=0)
        return Tree(self.feature, self.threshold, self.left, self.right,
                    self.value, self.max_depth)

    def _grow(self, node: int, Xn, gn, order, depth: int) -> None:
        n = len(gn)
        self.value[node] = float(gn.mean())
        if depth >= self.max_depth or n < 2 * self.min_leaf or n < 2:
            return
        split = self._best_split(Xn, gn, order)
        if split is None:
            return
        f, thr, mask = split
        self.feature[node] = f
        self.threshold[node] = thr
        order_l, order_r = _partition_order(order, mask)
        left = self._new_node()
        right = self._new_node()
        self.left[node] = left
        self.right[node] = right
        self._grow(left, Xn[mask], gn[mask], order_l, depth + 1)
        self._grow(right, Xn[~mask], gn[~mask], order_r, depth + 1)

    def _best_split(self, Xn, gn, order):
        n, d = Xn.shape
        Xs = np.take_along_axis(Xn, order, axis=0)
        csum = np.cumsum(gn[order], axis=0)
        total = float(gn.sum())
        n_left = np.arange(1, n, dtype=np.float64)[:, None]
        left_sum = csum[:-1]
        score = left_sum ** 2 / n_left + (total - left_sum) ** 2 / (n - n_left)
        valid = Xs[1:] > Xs[:-1]
        if self.min_leaf > 1:
            k = self.min_leaf
            valid[: k - 1] = False
            if k > 1:
                valid[n - k:] = False
        score = np.where(valid, score, -np.inf)
        flat = int(np.argmax(score))
        baseline = total * total / n
        if not np.isfinite(score.flat[flat]) or score.flat[flat] <= baseline + EPS_GAIN:
            return None
        i, f = divmod(flat, d)
        thr = 0.5 * (Xs[i, f] + Xs[i + 1, f])
        if not (thr > Xs[i, f]):
            thr = Xs[i + 1, f]
        mask = Xn[:, f] < thr
        return f, float(thr), mask


def _partition_order(order: np.ndarray, mask: np.ndarray):
    """Split per-feature sort orders into left/right, preserving order."""
    d = order.shape[1]
    M = mask[order]
    n_l = int(mask.sum())
    raw_l = order.T[M.T].reshape(d, n_l).T
    raw_r = order.T[~M.T].reshape(d, len(mask) - n_l).T
    relabel_l = np.cumsum(mask) - 1
    relabel_r = np.cumsum(~mask) - 1
    return relabel_l[raw_l], relabel_r[raw_r]


class GbdtModel:
    """Additive ensemble: base prediction + lr-weighted tree outputs."""

    def __init__(self, base_prediction: float, trees: list[Tree], params: GbdtParams,
                 n_features: int, train_mse: list[float]):
        self.base_prediction = float(base_prediction)
        self.trees = trees
        self.params = params
        self.n_features = int(n_features)
        self.train_mse = list(train_mse)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        if single:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise ValueError(
                f"feature arity mismatch: model expects {self.n_features}, got {X.shape[1]}")
        if not np.all(np.isfinite(X)):
            raise ValueError("non-finite features")
        out = np.full(len(X), self.base_prediction)
        lr = self.params.learning_rate
        for tree in self.trees:
            out += lr * tree.predict(X)
        if self.params.objective == "log-mse":
            out = np.exp(out)
        return out[0] if single else out


def predict_gbdt(model: GbdtModel, regressor_input) -> float:
    """Predict final throughput (Mbps) for one model-ready input."""
    features = getattr(regressor_input, "features", regressor_input)
    return float(model.predict(np.asarray(features, dtype=np.float64)))


def train_gbdt(X: np.ndarray, y: np.ndarray, params: GbdtParams = GbdtParams()) -> GbdtModel:
    """Fit boosted trees to (features, target) pairs by residual fitting."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or len(X) == 0:
        raise ValueError("X must be a nonempty 2-D array")
    if len(X) != len(y):
        raise ValueError("X and y length mismatch")
    if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
        raise ValueError("NaN or infinite values in training data")
    if params.objective == "log-mse":
        # squared error in log space: relative-error-like behavior on
        # targets spanning orders of magnitude
        if np.any(y <= 0):
            raise ValueError("log-mse requires positive targets")
        y = np.log(y)

    n, _ = X.shape
    base = float(y.mean())
    pred = np.full(n, base)
    rng = np.random.default_rng(params.seed)
    full_order = np.argsort(X, axis=0, kind="stable")

    trees: list[Tree] = []
    train_mse: list[float] = []
    for _ in range(params.n_trees):
        residual = y - pred
        if params.subsample < 1.0:
            m = max(2 * params.min_samples_leaf, int(round(params.subsample * n)))
            rows = np.sort(rng.choice(n, size=min(m, n), replace=False))
            Xs, gs = X[rows], residual[rows]
            order = np.argsort(Xs, axis=0, kind="stable")
        else:
            Xs, gs, order = X, residual, full_order
        builder = _TreeBuilder(params.max_depth, params.min_samples_leaf)
        tree = builder.build(Xs, gs, order)
        trees.append(tree)
        pred = pred + params.learning_rate * tree.predict(X)
        train_mse.append(float(np.mean((y - pred) ** 2)))

    return GbdtModel(base, trees, params, X.shape[1], train_mse)
