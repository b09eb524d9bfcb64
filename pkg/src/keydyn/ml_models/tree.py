"""Greedy binary trees: CART (Gini / variance) and second-order boosting trees."""

from __future__ import annotations

import numpy as np


class _Nodes:
    """Flat array storage for a binary tree built depth-first."""

    def __init__(self):
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list = []

    def add(self, value) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(value)
        return len(self.feature) - 1


def _sorted_views(X: np.ndarray, rows: np.ndarray):
    """Per-feature stable sort of the node's rows."""
    sub = X[rows]
    order = np.argsort(sub, axis=0, kind="stable")
    xs = np.take_along_axis(sub, order, axis=0)
    return order, xs


def _valid_cuts(xs: np.ndarray, min_leaf: int) -> np.ndarray:
    """Boolean (n-1, d): cut after position i separates distinct values and
    leaves at least ``min_leaf`` rows each side."""
    n = xs.shape[0]
    ok = xs[1:] > xs[:-1]
    left_n = np.arange(1, n)[:, None]
    ok &= (left_n >= min_leaf) & (n - left_n >= min_leaf)
    return ok


def _first_best(score: np.ndarray, ok: np.ndarray):
    """Lowest score among valid cuts, earliest feature then earliest cut."""
    masked = np.where(ok, score, np.inf)
    # column-major scan so ties resolve to the lowest feature index first
    flat = masked.T.ravel()
    j = int(np.argmin(flat))
    if not np.isfinite(flat[j]):
        return None
    n_cut = masked.shape[0]
    return j % n_cut, j // n_cut, flat[j]


class DecisionTree:
    """CART with Gini impurity (classification) or variance reduction (regression)."""

    def __init__(self, task: str = "classify", max_depth: int = 5, min_samples_leaf: int = 1):
        self.task = task
        self.max_depth = int(max_depth)
        self.min_samples_leaf = int(min_samples_leaf)

    def fit(self, X, y, sample_weight=None, n_classes: int | None = None):
        X = np.asarray(X, dtype=float)
        n = X.shape[0]
        w = np.ones(n) if sample_weight is None else np.asarray(sample_weight, dtype=float)
        nodes = _Nodes()
        if self.task == "classify":
            y = np.asarray(y, dtype=np.int64)
            self.n_classes = int(n_classes if n_classes is not None else y.max() + 1)
            target = np.zeros((n, self.n_classes))
            target[np.arange(n), y] = w
        else:
            target = np.asarray(y, dtype=float)
        self._grow(nodes, X, target, w, np.arange(n), 0)
        self.feature = np.array(nodes.feature, dtype=np.int64)
        self.threshold = np.array(nodes.threshold, dtype=float)
        self.left = np.array(nodes.left, dtype=np.int64)
        self.right = np.array(nodes.right, dtype=np.int64)
        self.value = np.array(nodes.value, dtype=float)
        return self

    def _leaf_value(self, target, w, rows):
        if self.task == "classify":
            return target[rows].sum(axis=0)
        ws = w[rows].sum()
        return float((w[rows] * target[rows]).sum() / ws) if ws > 0 else 0.0

    def _grow(self, nodes, X, target, w, rows, depth):
        node = nodes.add(self._leaf_value(target, w, rows))
        if depth >= self.max_depth or len(rows) < 2 * self.min_samples_leaf:
            return node
        split = self._best_split(X, target, w, rows)
        if split is None:
            return node
        f, thr = split
        go_left = X[rows, f] <= thr
        nodes.feature[node] = f
        nodes.threshold[node] = thr
        nodes.left[node] = self._grow(nodes, X, target, w, rows[go_left], depth + 1)
        nodes.right[node] = self._grow(nodes, X, target, w, rows[~go_left], depth + 1)
        return node

    def _best_split(self, X, target, w, rows):
        order, xs = _sorted_views(X, rows)
        ok = _valid_cuts(xs, self.min_samples_leaf)
        if not ok.any():
            return None
        if self.task == "classify":
            t = target[rows]                              # (n, C) weighted one-hot
            cum = np.cumsum(t[order], axis=0)             # (n, d, C)
            total = t.sum(axis=0)
            left = cum[:-1]
            right = total - left
            wl = left.sum(axis=2)
            wr = right.sum(axis=2)
            W = total.sum()
            with np.errstate(divide="ignore", invalid="ignore"):
                gl = wl - (left ** 2).sum(axis=2) / wl
                gr = wr - (right ** 2).sum(axis=2) / wr
            score = np.nan_to_num(gl) + np.nan_to_num(gr)   # W * weighted child Gini
            parent = W - (total ** 2).sum() / W
        else:
            wt = w[rows]
            yt = target[rows]
            cw = np.cumsum(wt[order], axis=0)
            c1 = np.cumsum((wt * yt)[order], axis=0)
            c2 = np.cumsum((wt * yt * yt)[order], axis=0)
            W, S1, S2 = wt.sum(), (wt * yt).sum(), (wt * yt * yt).sum()
            wl, s1l, s2l = cw[:-1], c1[:-1], c2[:-1]
            wr, s1r, s2r = W - wl, S1 - s1l, S2 - s2l
            with np.errstate(divide="ignore", invalid="ignore"):
                score = (s2l - s1l ** 2 / wl) + (s2r - s1r ** 2 / wr)
            score = np.nan_to_num(score, nan=np.inf)
            parent = S2 - S1 ** 2 / W
        best = _first_best(score, ok)
        if best is None:
            return None
        i, f, s = best
        if not s < parent - 1e-12 * max(1.0, abs(parent)):
            return None
        thr = (xs[i, f] + xs[i + 1, f]) / 2.0
        return int(f), float(thr)

    def apply(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        idx = np.zeros(X.shape[0], dtype=np.int64)
        active = self.feature[idx] >= 0
        while active.any():
            a = np.flatnonzero(active)
            node = idx[a]
            go_left = X[a, self.feature[node]] <= self.threshold[node]
            idx[a] = np.where(go_left, self.left[node], self.right[node])
            active = self.feature[idx] >= 0
        return idx

    def predict_value(self, X) -> np.ndarray:
        return self.value[self.apply(X)]

    def predict(self, X) -> np.ndarray:
        v = self.predict_value(X)
        if self.task == "classify":
            return np.argmax(v, axis=1)
        return v


class BoostTree:
    """Regression tree on gradient/hessian statistics with L2-regularised leaves."""

    def __init__(self, max_depth: int = 3, lambda_reg: float = 1.0, min_child_weight: float = 1.0,
                 gamma: float = 0.0):
        self.max_depth = int(max_depth)
        self.lambda_reg = float(lambda_reg)
        self.min_child_weight = float(min_child_weight)
        self.gamma = float(gamma)

    def fit(self, X, grad, hess, scale: float = 1.0):
        X = np.asarray(X, dtype=float)
        nodes = _Nodes()
        self._scale = scale
        self._grow(nodes, X, np.asarray(grad, float), np.asarray(hess, float), np.arange(X.shape[0]), 0)
        self.feature = np.array(nodes.feature, dtype=np.int64)
        self.threshold = np.array(nodes.threshold, dtype=float)
        self.left = np.array(nodes.left, dtype=np.int64)
        self.right = np.array(nodes.right, dtype=np.int64)
        self.value = np.array(nodes.value, dtype=float)
        del self._scale
        return self

    def _grow(self, nodes, X, g, h, rows, depth):
        G, H = g[rows].sum(), h[rows].sum()
        node = nodes.add(-G / (H + self.lambda_reg) * self._scale)
        if depth >= self.max_depth or len(rows) < 2:
            return node
        order, xs = _sorted_views(X, rows)
        ok = _valid_cuts(xs, 1)
        gl = np.cumsum(g[rows][order], axis=0)[:-1]
        hl = np.cumsum(h[rows][order], axis=0)[:-1]
        gr, hr = G - gl, H - hl
        ok &= (hl >= self.min_child_weight) & (hr >= self.min_child_weight)
        lam = self.lambda_reg
        gain = 0.5 * (gl ** 2 / (hl + lam) + gr ** 2 / (hr + lam) - G ** 2 / (H + lam)) - self.gamma
        best = _first_best(-gain, ok)
        if best is None or not -best[2] > 1e-12:
            return node
        i, f, _ = best
        thr = (xs[i, f] + xs[i + 1, f]) / 2.0
        go_left = X[rows, f] <= thr
        nodes.feature[node] = int(f)
        nodes.threshold[node] = float(thr)
        nodes.left[node] = self._grow(nodes, X, g, h, rows[go_left], depth + 1)
        nodes.right[node] = self._grow(nodes, X, g, h, rows[~go_left], depth + 1)
        return node

    apply = DecisionTree.apply

    def predict(self, X) -> np.ndarray:
        return self.value[self.apply(X)]
