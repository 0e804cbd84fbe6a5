"""Stability-ranked recursive feature elimination plus mutual-information cutoff."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.ensemble import RandomForestClassifier

from .data import Dataset, split_sizes, stratified_order
from .errors import SingleClassError


@dataclass
class SelectionConfig:
    n_splits: int = 5
    test_fraction: float = 0.2
    quantile: float = 0.4
    ensemble_trees: int = 25
    max_tree_depth: int = 6
    mi_bins: int = 10
    # Cap on rows used by each RFE fit; None uses the whole training split.
    rfe_max_samples: int | None = None

    def __post_init__(self):
        if self.n_splits < 1:
            raise ValueError("n_splits must be positive")
        if not 0 < self.test_fraction < 1:
            raise ValueError("test_fraction must lie in (0, 1)")
        if not 0 < self.quantile <= 1:
            raise ValueError("quantile must lie in (0, 1]")
        if self.ensemble_trees < 1 or self.max_tree_depth < 1 or self.mi_bins < 1:
            raise ValueError("ensemble_trees, max_tree_depth and mi_bins must be positive")


@dataclass
class FeatureRanking:
    per_split_ranks: np.ndarray
    feature_names: list[str]

    @property
    def mean_rank(self) -> np.ndarray:
        return self.per_split_ranks.mean(axis=0)


def stratified_splits(labels, cfg: SelectionConfig, seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    labels = np.asarray(labels)
    if np.unique(labels).size < 2:
        raise SingleClassError("stratified splitting needs both classes")
    n = len(labels)
    n_test = split_sizes(n, [1 - cfg.test_fraction, cfg.test_fraction])[1]
    n_test = min(max(n_test, 1), n - 1)
    out = []
    for i in range(cfg.n_splits):
        order = stratified_order(labels, np.random.default_rng([seed, i]))
        out.append((np.sort(order[n_test:]), np.sort(order[:n_test])))
    return out


def _importances(x, y, cfg: SelectionConfig, seed) -> np.ndarray:
    forest = RandomForestClassifier(
        n_estimators=cfg.ensemble_trees, max_depth=cfg.max_tree_depth,
        max_features="sqrt", criterion="gini", random_state=seed)
    forest.fit(x, y)
    return forest.feature_importances_


def rfe_rank(data: Dataset, train_idx, cfg: SelectionConfig, seed: int) -> np.ndarray:
    """Eliminate one feature per round; the eliminated feature takes the
    current worst rank. Equal importance removes the highest index first.
    Constant features carry zero importance and therefore end up last."""
    d = data.n_features
    if d < 2:
        raise ValueError("recursive elimination needs at least two features")
    train_idx = np.asarray(train_idx)
    if cfg.rfe_max_samples is not None and train_idx.size > cfg.rfe_max_samples:
        rng = np.random.default_rng([seed, 7])
        order = stratified_order(data.labels[train_idx], rng)
        train_idx = np.sort(train_idx[order[:cfg.rfe_max_samples]])
    x = data.features[train_idx]
    y = data.labels[train_idx]
    if np.unique(y).size < 2:
        raise SingleClassError("training split holds a single class")

    ranks = np.zeros(d, dtype=np.int64)
    remaining = list(range(d))
    step = 0
    while len(remaining) > 1:
        imp = _importances(x[:, remaining], y, cfg, seed + step)
        low = imp.min()
        worst = max(i for i, v in zip(remaining, imp) if v == low)
        ranks[worst] = len(remaining)
        remaining.remove(worst)
        step += 1
    ranks[remaining[0]] = 1
    return ranks


def _quantile_bins(feature: np.ndarray, n_bins: int) -> np.ndarray:
    # 'lower' edges are observed values, so the binning depends on ranks only
    edges = np.quantile(feature, np.arange(1, n_bins) / n_bins, method="lower")
    edges = np.unique(edges)
    return np.searchsorted(edges, feature, side="right")


def mutual_information(feature, labels, mi_bins: int = 10) -> float:
    """Plug-in estimate of I(X; Y) in nats with equal-frequency bins on X."""
    feature = np.asarray(feature, dtype=np.float64)
    labels = np.asarray(labels)
    if feature.shape != labels.shape or feature.size < 2:
        raise ValueError("feature and labels must be equal-length vectors of length >= 2")
    bx = _quantile_bins(feature, mi_bins)
    _, by = np.unique(labels, return_inverse=True)
    joint = np.zeros((bx.max() + 1, by.max() + 1))
    np.add.at(joint, (bx, by), 1.0)
    joint /= joint.sum()
    px = joint.sum(axis=1, keepdims=True)
    py = joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    mi = float((joint[nz] * np.log(joint[nz] / (px @ py)[nz])).sum())
    return max(mi, 0.0)


@dataclass
class SelectionResult:
    selected: list[str]
    ranking: FeatureRanking
    mi_scores: np.ndarray
    cutoff: float

    def rows(self) -> list[dict]:
        mean = self.ranking.mean_rank
        chosen = set(self.selected)
        return [
            {"feature": n, "mean_rank": float(mean[i]), "mi": float(self.mi_scores[i]),
             "selected": n in chosen}
            for i, n in enumerate(self.ranking.feature_names)
        ]


def rank_features(data: Dataset, cfg: SelectionConfig, seed: int) -> FeatureRanking:
    splits = stratified_splits(data.labels, cfg, seed)
    ranks = np.vstack([rfe_rank(data, tr, cfg, seed + 1000 * i) for i, (tr, _) in enumerate(splits)])
    return FeatureRanking(ranks, list(data.feature_names))


def select_features(data: Dataset, cfg: SelectionConfig, seed: int) -> SelectionResult:
    """Keep features whose MI reaches the (1 - quantile) quantile of all MI
    scores (ties at the cutoff are kept), ordered by ascending mean RFE rank."""
    ranking = rank_features(data, cfg, seed)
    mi = np.array([mutual_information(data.features[:, j], data.labels, cfg.mi_bins)
                   for j in range(data.n_features)])
    cutoff = float(np.quantile(mi, 1 - cfg.quantile))
    keep = np.flatnonzero(mi >= cutoff)
    mean = ranking.mean_rank
    keep = keep[np.lexsort((keep, mean[keep]))]
    return SelectionResult([data.feature_names[j] for j in keep], ranking, mi, cutoff)


def write_feature_list(names, path) -> None:
    with open(path, "w") as fh:
        fh.write("".join(f"{n}\n" for n in names))


def read_feature_list(path) -> list[str]:
    with open(path) as fh:
        return [line.strip() for line in fh if line.strip()]
