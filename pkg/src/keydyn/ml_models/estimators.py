"""Classical learners operating on integer class codes or real targets."""

from __future__ import annotations

import numpy as np

from .tree import BoostTree, DecisionTree


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class NaiveBayes:
    """Gaussian naive Bayes."""

    def __init__(self, var_floor: float = 1e-9):
        self.var_floor = var_floor

    def fit(self, X, y, n_classes):
        self.theta = np.zeros((n_classes, X.shape[1]))
        self.var = np.ones((n_classes, X.shape[1]))
        self.log_prior = np.full(n_classes, -np.inf)
        for c in range(n_classes):
            Xc = X[y == c]
            if len(Xc) == 0:
                continue
            self.theta[c] = Xc.mean(axis=0)
            self.var[c] = np.maximum(Xc.var(axis=0), self.var_floor)
            self.log_prior[c] = np.log(len(Xc) / len(X))
        return self

    def decision_function(self, X):
        ll = -0.5 * (np.log(2 * np.pi * self.var)[None] + (X[:, None, :] - self.theta[None]) ** 2 / self.var[None])
        return ll.sum(axis=2) + self.log_prior[None]


class KNN:
    def __init__(self, task="classify", k: int = 5):
        self.task = task
        self.k = int(k)

    def fit(self, X, y, n_classes=None):
        self.X = X.copy()
        self.y = y.copy()
        self.n_classes = n_classes
        return self

    def neighbours(self, X):
        d2 = ((X[:, None, :] - self.X[None, :, :]) ** 2).sum(axis=2)
        k = min(self.k, self.X.shape[0])
        return np.argsort(d2, axis=1, kind="stable")[:, :k]

    def decision_function(self, X):
        nn = self.neighbours(X)
        votes = np.zeros((X.shape[0], self.n_classes))
        for c in range(self.n_classes):
            votes[:, c] = (self.y[nn] == c).sum(axis=1)
        return votes

    def predict_value(self, X):
        return self.y[self.neighbours(X)].mean(axis=1)


class CART:
    def __init__(self, task="classify", max_depth: int = 5, min_samples_leaf: int = 1):
        self.task = task
        self.tree = DecisionTree(task, max_depth, min_samples_leaf)

    def fit(self, X, y, n_classes=None):
        self.tree.fit(X, y, n_classes=n_classes)
        return self

    def decision_function(self, X):
        return self.tree.predict_value(X)

    def predict_value(self, X):
        return self.tree.predict_value(X)


class AdaBoost:
    """SAMME with depth-1 stumps."""

    def __init__(self, n_rounds: int = 50):
        self.n_rounds = int(n_rounds)

    def fit(self, X, y, n_classes):
        n = X.shape[0]
        C = n_classes
        w = np.full(n, 1.0 / n)
        self.stumps, self.alphas, self.errors = [], [], []
        for _ in range(self.n_rounds):
            stump = DecisionTree("classify", max_depth=1).fit(X, y, sample_weight=w, n_classes=C)
            miss = stump.predict(X) != y
            err = float(w[miss].sum() / w.sum())
            if err >= 1.0 - 1.0 / C:
                if not self.stumps:
                    self.stumps.append(stump)
                    self.alphas.append(1.0)
                    self.errors.append(err)
                break
            eps = max(err, 1e-10)
            alpha = np.log((1.0 - eps) / eps) + np.log(C - 1.0)
            self.stumps.append(stump)
            self.alphas.append(float(alpha))
            self.errors.append(err)
            if err <= 0.0:
                break
            w = w * np.exp(alpha * miss)
            w /= w.sum()
        self.n_classes = C
        self.alphas = np.array(self.alphas)
        return self

    def staged_decision(self, X):
        score = np.zeros((X.shape[0], self.n_classes))
        for stump, a in zip(self.stumps, self.alphas):
            score[np.arange(X.shape[0]), stump.predict(X)] += a
            yield score.copy()

    def decision_function(self, X):
        score = np.zeros((X.shape[0], self.n_classes))
        for s in self.staged_decision(X):
            score = s
        return score


class LinearSVM:
    """Linear SVM / SVR: lam*||w||^2 + mean hinge (or eps-insensitive) loss,
    minimised by epoch-shuffled per-sample subgradient steps."""

    def __init__(self, task="classify", lam: float = 1e-3, epochs: int = 30, eta0: float = 0.1,
                 epsilon: float = 0.1, seed: int = 0):
        self.task = task
        self.lam = float(lam)
        self.epochs = int(epochs)
        self.eta0 = float(eta0)
        self.epsilon = float(epsilon)
        self.seed = int(seed)

    def _sgd(self, X, targets, loss):
        n, d = X.shape
        rng = np.random.default_rng(self.seed)
        W = np.zeros((targets.shape[1], d))
        b = np.zeros(targets.shape[1])
        t = 0
        for _ in range(self.epochs):
            for i in rng.permutation(n):
                eta = self.eta0 / (1.0 + self.eta0 * 2.0 * self.lam * t)
                t += 1
                s = W @ X[i] + b
                if loss == "hinge":
                    active = targets[i] * s < 1.0
                    g = np.where(active, -targets[i], 0.0)
                else:
                    r = s - targets[i]
                    g = np.where(np.abs(r) > self.epsilon, np.sign(r), 0.0)
                W -= eta * (2.0 * self.lam * W + g[:, None] * X[i][None, :])
                b -= eta * g
        return W, b

    def fit(self, X, y, n_classes=None):
        if self.task == "classify":
            self.n_classes = n_classes
            if n_classes == 2:
                targets = np.where(y == 1, 1.0, -1.0)[:, None]
            else:
                targets = np.where(y[:, None] == np.arange(n_classes)[None, :], 1.0, -1.0)
            self.W, self.b = self._sgd(X, targets, "hinge")
        else:
            self.y_mean = float(y.mean())
            self.y_std = float(y.std()) or 1.0
            targets = ((y - self.y_mean) / self.y_std)[:, None]
            self.W, self.b = self._sgd(X, targets, "eps")
        return self

    def decision_function(self, X):
        s = X @ self.W.T + self.b
        if self.n_classes == 2:
            return np.hstack([-s, s])
        return s

    def predict_value(self, X):
        return (X @ self.W.T + self.b)[:, 0] * self.y_std + self.y_mean


class MLP1:
    """One hidden layer of rectified units, full-batch gradient descent."""

    def __init__(self, task="classify", hidden: int = 64, lr: float = 0.1, epochs: int = 300,
                 seed: int = 0):
        self.task = task
        self.hidden = int(hidden)
        self.lr = float(lr)
        self.epochs = int(epochs)
        self.seed = int(seed)

    def _forward(self, X):
        a = X @ self.W1 + self.b1
        h = np.maximum(a, 0.0)
        return a, h, h @ self.W2 + self.b2

    def fit(self, X, y, n_classes=None):
        n, d = X.shape
        out = n_classes if self.task == "classify" else 1
        rng = np.random.default_rng(self.seed)
        lim1 = np.sqrt(6.0 / (d + self.hidden))
        lim2 = np.sqrt(6.0 / (self.hidden + out))
        self.W1 = rng.uniform(-lim1, lim1, (d, self.hidden))
        self.b1 = np.zeros(self.hidden)
        self.W2 = rng.uniform(-lim2, lim2, (self.hidden, out))
        self.b2 = np.zeros(out)
        if self.task == "classify":
            self.n_classes = n_classes
            T = np.zeros((n, out))
            T[np.arange(n), y] = 1.0
        else:
            self.y_mean = float(y.mean())
            self.y_std = float(y.std()) or 1.0
            T = ((y - self.y_mean) / self.y_std)[:, None]
            if not T.any():
                # constant target: a zero output layer is already exact and stays put
                self.W2[:] = 0.0
        for _ in range(self.epochs):
            a, h, z = self._forward(X)
            if self.task == "classify":
                dz = (np.exp(_log_softmax(z)) - T) / n
            else:
                dz = 2.0 * (z - T) / n
            dW2 = h.T @ dz
            db2 = dz.sum(axis=0)
            da = (dz @ self.W2.T) * (a > 0)
            dW1 = X.T @ da
            db1 = da.sum(axis=0)
            self.W1 -= self.lr * dW1
            self.b1 -= self.lr * db1
            self.W2 -= self.lr * dW2
            self.b2 -= self.lr * db2
        return self

    def decision_function(self, X):
        return self._forward(X)[2]

    def predict_value(self, X):
        return self._forward(X)[2][:, 0] * self.y_std + self.y_mean


class GBT:
    """Second-order gradient boosting of regression trees.

    Classification uses logistic loss (one booster per class beyond two,
    one-vs-rest); regression uses squared loss. No row/column subsampling.
    """

    def __init__(self, task="classify", n_trees: int = 100, eta: float = 0.1, depth: int = 3,
                 lambda_reg: float = 1.0, min_child_weight: float = 1.0):
        self.task = task
        self.n_trees = int(n_trees)
        self.eta = float(eta)
        self.depth = int(depth)
        self.lambda_reg = float(lambda_reg)
        self.min_child_weight = float(min_child_weight)

    def _boost(self, X, y, loss):
        if loss == "logistic":
            p = np.clip(y.mean(), 1e-6, 1 - 1e-6)
            base = float(np.log(p / (1 - p)))
        else:
            base = float(y.mean())
        F = np.full(X.shape[0], base)
        trees = []
        if self.eta == 0.0:
            return base, trees
        for _ in range(self.n_trees):
            if loss == "logistic":
                p = _sigmoid(F)
                g, h = p - y, p * (1 - p)
            else:
                g, h = F - y, np.ones_like(F)
            tree = BoostTree(self.depth, self.lambda_reg, self.min_child_weight).fit(X, g, h, self.eta)
            F = F + tree.predict(X)
            trees.append(tree)
        return base, trees

    def fit(self, X, y, n_classes=None):
        if self.task == "classify":
            self.n_classes = n_classes
            targets = [y == 1] if n_classes == 2 else [y == c for c in range(n_classes)]
            boosters = [self._boost(X, t.astype(float), "logistic") for t in targets]
        else:
            boosters = [self._boost(X, y.astype(float), "squared")]
        self.base = np.array([b for b, _ in boosters])
        self.boosters = [t for _, t in boosters]
        return self

    def raw_score(self, X):
        out = np.tile(self.base, (X.shape[0], 1))
        for j, trees in enumerate(self.boosters):
            for t in trees:
                out[:, j] += t.predict(X)
        return out

    def decision_function(self, X):
        s = self.raw_score(X)
        if self.n_classes == 2:
            return np.hstack([-s, s])
        return s

    def predict_value(self, X):
        return self.raw_score(X)[:, 0]
