"""Training-fitted preprocessing: impute, standardize, MI-select, oversample."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import DimensionMismatch, KTooLarge, LengthMismatch, TooFewMinority


@dataclass(frozen=True)
class Standardizer:
    per_feature_mean: np.ndarray
    per_feature_std: np.ndarray
    fitted_on: tuple[str, ...] = ()
    constant: tuple[int, ...] = ()

    @classmethod
    def fit(cls, matrix: np.ndarray, masks: np.ndarray | None = None,
            user_ids: Sequence[str] = ()) -> "Standardizer":
        """Per-feature mean and population std over the unmasked entries."""
        X = np.asarray(matrix, dtype=float)
        M = np.zeros_like(X, dtype=bool) if masks is None else np.asarray(masks, dtype=bool)
        if X.shape != M.shape:
            raise DimensionMismatch(f"matrix {X.shape} vs mask {M.shape}")
        observed = ~M
        n_obs = observed.sum(axis=0)
        safe = np.where(observed, X, 0.0)
        with np.errstate(invalid="ignore", divide="ignore"):
            mu = np.where(n_obs > 0, safe.sum(axis=0) / np.maximum(n_obs, 1), 0.0)
            var = np.where(observed, (X - mu) ** 2, 0.0).sum(axis=0) / np.maximum(n_obs, 1)
        sd = np.sqrt(var)
        flat = (sd <= 1e-12) | (n_obs == 0)
        sd = np.where(flat, 1.0, sd)
        return cls(mu, sd, tuple(user_ids), tuple(int(i) for i in np.flatnonzero(flat)))

    def to_dict(self, names: Sequence[str] | None = None) -> dict:
        return {
            "names": list(names) if names is not None else None,
            "mean": self.per_feature_mean.tolist(),
            "std": self.per_feature_std.tolist(),
            "constant": list(self.constant),
            "fitted_on": list(self.fitted_on),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Standardizer":
        return cls(np.array(d["mean"], dtype=float), np.array(d["std"], dtype=float),
                   tuple(d.get("fitted_on", ())), tuple(d.get("constant", ())))


def impute_and_standardize(matrix: np.ndarray, masks: np.ndarray | None,
                           standardizer: Standardizer) -> np.ndarray:
    X = np.array(matrix, dtype=float)
    if X.ndim != 2 or X.shape[1] != len(standardizer.per_feature_mean):
        raise DimensionMismatch(
            f"matrix has {X.shape[-1]} features, standardizer {len(standardizer.per_feature_mean)}"
        )
    if masks is not None:
        M = np.asarray(masks, dtype=bool)
        if M.shape != X.shape:
            raise DimensionMismatch(f"matrix {X.shape} vs mask {M.shape}")
        X = np.where(M, standardizer.per_feature_mean, X)
    Z = (X - standardizer.per_feature_mean) / standardizer.per_feature_std
    if standardizer.constant:
        Z[:, list(standardizer.constant)] = 0.0
    return Z


# ---------------------------------------------------------------------------
# mutual information


def equal_frequency_bins(x: np.ndarray, bins: int) -> np.ndarray:
    """Bin ids from ranks: equal-frequency bins whose edges sit on quantiles.

    Tied values share a bin (coinciding edges merge), so the binning depends
    only on the ordering of ``x``.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    ranks = rankdata(x, method="min", axis=0).astype(np.int64) - 1
    return (ranks * bins) // n


def _codes(y) -> tuple[np.ndarray, int]:
    _, inv = np.unique(np.asarray(y), return_inverse=True)
    inv = inv.reshape(-1)
    return inv, int(inv.max()) + 1 if inv.size else 0


def _mi_from_codes(b: np.ndarray, c: np.ndarray, n_bins: int, n_classes: int) -> np.ndarray:
    """MI in nats for each column of bin-code matrix ``b`` against class codes ``c``."""
    n, d = b.shape
    joint_idx = b * n_classes + c[:, None] + (np.arange(d) * n_bins * n_classes)[None, :]
    counts = np.bincount(joint_idx.ravel(), minlength=d * n_bins * n_classes)
    counts = counts.reshape(d, n_bins, n_classes).astype(float)
    pb = counts.sum(axis=2, keepdims=True)
    pc = counts.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(counts > 0, counts / n * np.log(counts * n / (pb * pc)), 0.0)
    return np.maximum(terms.sum(axis=(1, 2)), 0.0)


def mutual_information(x, y, bins: int = 10) -> float:
    """MI (nats) between an equal-frequency-binned real feature and class labels."""
    x = np.asarray(x, dtype=float)
    if len(x) != len(y):
        raise LengthMismatch(f"{len(x)} values vs {len(y)} labels")
    c, n_classes = _codes(y)
    b = equal_frequency_bins(x, bins)
    return float(_mi_from_codes(b[:, None], c, bins, max(n_classes, 1))[0])


def mi_scores(matrix: np.ndarray, y, bins: int = 10) -> np.ndarray:
    X = np.asarray(matrix, dtype=float)
    if X.shape[0] != len(y):
        raise LengthMismatch(f"{X.shape[0]} rows vs {len(y)} labels")
    c, n_classes = _codes(y)
    b = equal_frequency_bins(X, bins)
    return _mi_from_codes(b, c, bins, max(n_classes, 1))


@dataclass(frozen=True)
class MISelector:
    scores: np.ndarray
    selected: tuple[int, ...]
    bins: int = 10
    target_binning: str | None = None
    fitted_on: tuple[str, ...] = ()

    def transform(self, matrix: np.ndarray) -> np.ndarray:
        return np.asarray(matrix)[:, list(self.selected)]

    def with_k(self, k: int) -> "MISelector":
        return MISelector(self.scores, rank_features(self.scores)[:k], self.bins,
                          self.target_binning, self.fitted_on)

    def to_dict(self, names: Sequence[str] | None = None) -> dict:
        return {
            "names": list(names) if names is not None else None,
            "scores": self.scores.tolist(),
            "selected": list(self.selected),
            "bins": self.bins,
            "target_binning": self.target_binning,
            "fitted_on": list(self.fitted_on),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MISelector":
        return cls(np.array(d["scores"], dtype=float), tuple(d["selected"]), d["bins"],
                   d["target_binning"], tuple(d.get("fitted_on", ())))


def rank_features(scores: np.ndarray) -> tuple[int, ...]:
    """Indices by score descending, ties by lower index."""
    order = np.lexsort((np.arange(len(scores)), -np.asarray(scores)))
    return tuple(int(i) for i in order)


def quartile_classes(y) -> np.ndarray:
    return equal_frequency_bins(np.asarray(y, dtype=float), 4)


def select_top_k(matrix: np.ndarray, labels, k: int, target_binning: str | None = None,
                 bins: int = 10, user_ids: Sequence[str] = ()) -> MISelector:
    """Score every feature by MI with the target and keep the best ``k``.

    Regression targets use ``target_binning="quartile"`` (4 rank classes).
    """
    X = np.asarray(matrix, dtype=float)
    if k > X.shape[1]:
        raise KTooLarge(f"k={k} exceeds {X.shape[1]} features")
    y = quartile_classes(labels) if target_binning == "quartile" else np.asarray(labels)
    scores = mi_scores(X, y, bins)
    return MISelector(scores, rank_features(scores)[:k], bins, target_binning, tuple(user_ids))


# ---------------------------------------------------------------------------
# borderline SMOTE


@dataclass(frozen=True)
class SmoteConfig:
    k_generate: int = 5
    m_danger: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.k_generate < 1:
            raise ValueError("k_generate must be >= 1")
        if self.m_danger < self.k_generate:
            raise ValueError("m_danger must be >= k_generate")


def smote_interpolate(x: np.ndarray, neighbor: np.ndarray, rng) -> np.ndarray:
    """A point on the segment from ``x`` to ``neighbor`` at u ~ U[0, 1]."""
    x = np.asarray(x, dtype=float)
    neighbor = np.asarray(neighbor, dtype=float)
    if x.shape != neighbor.shape:
        raise DimensionMismatch(f"{x.shape} vs {neighbor.shape}")
    u = rng.random()
    return (1.0 - u) * x + u * neighbor


@dataclass
class SmoteResult:
    X: np.ndarray
    y: np.ndarray
    danger: dict = field(default_factory=dict)
    fallback: list = field(default_factory=list)
    skipped: list = field(default_factory=list)

    def __iter__(self):
        return iter((self.X, self.y))


def _nearest(D: np.ndarray, row: int, candidates: np.ndarray, m: int) -> np.ndarray:
    cand = candidates[candidates != row]
    order = np.argsort(D[row, cand], kind="stable")
    return cand[order[:m]]


def borderline_smote(matrix: np.ndarray, labels, cfg: SmoteConfig = SmoteConfig(),
                     skip_small: bool = False) -> SmoteResult:
    """Borderline-SMOTE1: oversample every non-majority class to the majority count.

    Only minority samples whose neighbourhood is at least half (but not
    entirely) other-class seed the interpolation. With no such sample the
    class falls back to plain SMOTE over all its members. Original rows are
    returned first and unchanged.
    """
    X = np.asarray(matrix, dtype=float)
    y = np.asarray(labels)
    if X.shape[0] != y.shape[0]:
        raise LengthMismatch(f"{X.shape[0]} rows vs {y.shape[0]} labels")
    classes, counts = np.unique(y, return_counts=True)
    n_max = counts.max()
    rng = np.random.default_rng(cfg.seed)
    sq = (X * X).sum(axis=1)
    D = np.sqrt(np.maximum(sq[:, None] + sq[None, :] - 2.0 * X @ X.T, 0.0))
    all_idx = np.arange(X.shape[0])
    new_X, new_y = [X], [y]
    result = SmoteResult(X, y)
    for cls, n_c in zip(classes, counts):
        if n_c == n_max:
            continue
        if n_c < 2:
            if skip_small:
                result.skipped.append(cls.item() if hasattr(cls, "item") else cls)
                continue
            raise TooFewMinority(cls)
        members = all_idx[y == cls]
        m = min(cfg.m_danger, X.shape[0] - 1)
        danger = []
        for i in members:
            nn = _nearest(D, i, all_idx, m)
            m_other = int((y[nn] != cls).sum())
            if m / 2 <= m_other < m:
                danger.append(i)
        key = cls.item() if hasattr(cls, "item") else cls
        result.danger[key] = len(danger)
        seeds = danger
        if not seeds:
            seeds = list(members)
            result.fallback.append(key)
        k = min(cfg.k_generate, n_c - 1)
        neighbours = {i: _nearest(D, i, members, k) for i in seeds}
        need = int(n_max - n_c)
        synth = np.empty((need, X.shape[1]))
        for j in range(need):
            i = seeds[j % len(seeds)]
            nb = neighbours[i][rng.integers(len(neighbours[i]))]
            synth[j] = smote_interpolate(X[i], X[nb], rng)
        new_X.append(synth)
        new_y.append(np.full(need, cls, dtype=y.dtype))
    result.X = np.vstack(new_X)
    result.y = np.concatenate(new_y)
    return result


def dump_json(standardizer: Standardizer, selector: MISelector, names: Sequence[str]) -> str:
    doc = {"standardizer": standardizer.to_dict(names), "selector": selector.to_dict(names)}
    return json.dumps(doc, indent=2, sort_keys=True)
