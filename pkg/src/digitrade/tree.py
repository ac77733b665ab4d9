"""Least-squares regression trees grown best-first, and boosted ensembles.

Split search is exact: every boundary between adjacent distinct values of
every feature is scored by the squared-error reduction it would achieve,
using prefix sums over presorted columns.  Growth is best-first (largest
reduction anywhere in the frontier) up to a split budget, and a node may
be split only while it holds at least ``min_parent`` samples.  Ties are
broken toward the lowest feature index, then the lowest threshold, so
refitting is bit-for-bit reproducible.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from .errors import ComputationError

__all__ = ["RegressionTree", "HyperParams", "BoostedEnsemble", "fit_tree", "fit_ensemble"]


@dataclass
class RegressionTree:
    feature: np.ndarray  # split feature index per node, -1 at leaves
    threshold: np.ndarray  # split threshold per node, nan at leaves
    left: np.ndarray  # child ids, -1 at leaves
    right: np.ndarray
    value: np.ndarray  # node mean of the fitted targets
    n_samples: np.ndarray  # samples present when the node was formed

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_splits(self) -> int:
        return int((self.feature >= 0).sum())

    @property
    def depth(self) -> int:
        depths = np.zeros(self.n_nodes, dtype=int)
        for node in range(self.n_nodes):
            for child in (self.left[node], self.right[node]):
                if child >= 0:
                    depths[child] = depths[node] + 1
        return int(depths.max(initial=0))

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        out = np.empty(len(X))
        stack = [(0, np.arange(len(X)))]
        while stack:
            node, idx = stack.pop()
            if self.feature[node] < 0 or idx.size == 0:
                out[idx] = self.value[node]
                continue
            go_left = X[idx, self.feature[node]] < self.threshold[node]
            stack.append((int(self.left[node]), idx[go_left]))
            stack.append((int(self.right[node]), idx[~go_left]))
        return out

    def to_jsonable(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": [None if np.isnan(t) else t for t in self.threshold],
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "n_samples": self.n_samples.tolist(),
        }

    @classmethod
    def from_jsonable(cls, payload: dict) -> "RegressionTree":
        return cls(
            feature=np.asarray(payload["feature"], dtype=int),
            threshold=np.asarray(
                [np.nan if t is None else t for t in payload["threshold"]], dtype=float
            ),
            left=np.asarray(payload["left"], dtype=int),
            right=np.asarray(payload["right"], dtype=int),
            value=np.asarray(payload["value"], dtype=float),
            n_samples=np.asarray(payload["n_samples"], dtype=int),
        )


def _best_split(X, y, member, presort):
    """Best (gain, feature, threshold) over all exact splits of one node.

    Returns gain -inf when no legal split exists.  Gains are squared-error
    reductions, evaluated for every feature at once: node rows are pulled
    out of the presorted order, so each feature column arrives already
    ascending and prefix sums score all boundaries in one pass.  First-best
    selection makes the lowest feature index win cross-feature ties and the
    lowest threshold win ties within a feature.
    """
    n = int(member.sum())
    if n < 2:
        return -np.inf, -1, np.nan
    n_features = X.shape[1]
    # Column-wise compress keeps exactly the node's rows per feature, in
    # ascending feature order; every column has the same count, so the
    # flattened extraction reshapes cleanly.
    keep = member[presort]
    sel = presort.T[keep.T].reshape(n_features, n)
    xs = np.take_along_axis(X.T, sel, axis=1)
    ys = y[sel]

    centered = ys - ys.mean(axis=1, keepdims=True)
    sums = np.cumsum(centered, axis=1)
    prefix = sums[:, :-1]
    total = sums[:, -1:]
    n_left = np.arange(1, n, dtype=float)
    n_right = n - n_left
    gains = prefix**2 / n_left + (total - prefix) ** 2 / n_right - total**2 / n
    gains[xs[:, :-1] >= xs[:, 1:]] = -np.inf

    per_feature_pos = np.argmax(gains, axis=1)
    per_feature_gain = gains[np.arange(n_features), per_feature_pos]
    f = int(np.argmax(per_feature_gain))
    gain = float(per_feature_gain[f])
    if not np.isfinite(gain):
        return -np.inf, -1, np.nan
    i = int(per_feature_pos[f])
    threshold = float((xs[f, i] + xs[f, i + 1]) / 2.0)
    return gain, f, threshold


def fit_tree(
    X: np.ndarray,
    y: np.ndarray,
    max_splits: int,
    min_parent: int,
    presort: np.ndarray | None = None,
) -> RegressionTree:
    """Grow one tree on (features, targets) under the split budget."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("features and targets must align")
    if len(y) == 0:
        raise ValueError("empty training set")
    if max_splits < 0 or min_parent < 2:
        raise ValueError("max_splits must be >= 0 and min_parent >= 2")
    if presort is None:
        presort = np.argsort(X, axis=0, kind="stable")

    feature = [-1]
    threshold = [np.nan]
    left = [-1]
    right = [-1]
    value = [float(y.mean())]
    n_samples = [len(y)]
    members = {0: np.ones(len(y), dtype=bool)}

    heap: list[tuple[float, int, int, int, float]] = []
    tick = 0

    def consider(node: int) -> None:
        nonlocal tick
        member = members[node]
        count = int(member.sum())
        if count < min_parent or np.ptp(y[member]) == 0.0:
            return
        gain, f, thr = _best_split(X, y, member, presort)
        if gain <= 0.0 or f < 0:
            return
        heapq.heappush(heap, (-gain, tick, node, f, thr))
        tick += 1

    consider(0)
    splits = 0
    while heap and splits < max_splits:
        _, _, node, f, thr = heapq.heappop(heap)
        member = members.pop(node)
        go_left = member & (X[:, f] < thr)
        go_right = member & ~ (X[:, f] < thr)
        feature[node] = f
        threshold[node] = thr
        for side in (go_left, go_right):
            child = len(feature)
            feature.append(-1)
            threshold.append(np.nan)
            left.append(-1)
            right.append(-1)
            value.append(float(y[side].mean()))
            n_samples.append(int(side.sum()))
            members[child] = side
            if side is go_left:
                left[node] = child
            else:
                right[node] = child
            consider(child)
        splits += 1

    return RegressionTree(
        feature=np.asarray(feature, dtype=int),
        threshold=np.asarray(threshold, dtype=float),
        left=np.asarray(left, dtype=int),
        right=np.asarray(right, dtype=int),
        value=np.asarray(value, dtype=float),
        n_samples=np.asarray(n_samples, dtype=int),
    )


@dataclass(frozen=True)
class HyperParams:
    max_splits: int
    min_parent: int
    learn_rate: float = 0.1
    n_cycles: int = 150


@dataclass
class BoostedEnsemble:
    """Stagewise sum of shrunken regression trees over a constant base."""

    params: HyperParams
    base: float
    trees: list[RegressionTree]
    feature_names: tuple[str, ...] | None = None
    train_mse: list[float] = field(default_factory=list)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        out = np.full(len(X), self.base)
        for tree in self.trees:
            out += self.params.learn_rate * tree.predict(X)
        return out

    def staged_predict(self, X: np.ndarray):
        X = np.asarray(X, dtype=float)
        out = np.full(len(X), self.base)
        yield out.copy()
        for tree in self.trees:
            out += self.params.learn_rate * tree.predict(X)
            yield out.copy()


def fit_ensemble(
    X: np.ndarray,
    y: np.ndarray,
    params: HyperParams,
    feature_names: tuple[str, ...] | None = None,
) -> BoostedEnsemble:
    """Fit the boosted model: each cycle regresses the current residuals.

    Training MSE is recorded after every cycle and checked to be
    non-increasing; leaf values are residual means, so shrinkage in (0, 1]
    mathematically cannot raise it, and any increase indicates a bug.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(X) != len(y) or len(y) == 0:
        raise ValueError("features and targets must align and be non-empty")
    if not 0.0 <= params.learn_rate <= 1.0:
        raise ValueError("learn_rate must be in [0, 1]")
    if params.n_cycles < 1:
        raise ValueError("need at least one cycle")

    presort = np.argsort(X, axis=0, kind="stable")
    current = np.full(len(y), float(y.mean()))
    ensemble = BoostedEnsemble(
        params=params, base=float(y.mean()), trees=[], feature_names=feature_names
    )
    mse = float(np.mean((y - current) ** 2))
    ensemble.train_mse.append(mse)
    for _ in range(params.n_cycles):
        tree = fit_tree(
            X, y - current, params.max_splits, params.min_parent, presort=presort
        )
        current += params.learn_rate * tree.predict(X)
        ensemble.trees.append(tree)
        new_mse = float(np.mean((y - current) ** 2))
        if new_mse > mse * (1.0 + 1e-9) + 1e-30:
            raise ComputationError(
                f"training MSE increased ({mse} -> {new_mse}); residual fit is broken"
            )
        mse = new_mse
        ensemble.train_mse.append(mse)
    return ensemble
