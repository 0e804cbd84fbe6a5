"""Confusion counts, the four detection metrics and per-zone evaluation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .anomaly import AnomalyScoreConfig, weighted_score
from .data import Dataset
from .errors import EmptyEvaluationError


@dataclass
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @classmethod
    def from_predictions(cls, y_true, y_pred) -> "ConfusionCounts":
        t = np.asarray(y_true).astype(bool)
        p = np.asarray(y_pred).astype(bool)
        return cls(int(np.sum(t & p)), int(np.sum(~t & p)), int(np.sum(~t & ~p)),
                   int(np.sum(t & ~p)))

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp,
                               self.tn + other.tn, self.fn + other.fn)

    def as_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    precision: float
    recall: float
    f1: float

    def as_dict(self) -> dict:
        return {"accuracy": self.accuracy, "precision": self.precision,
                "recall": self.recall, "f1": self.f1}


def compute_metrics(cc: ConfusionCounts) -> Metrics:
    """Accuracy, precision, recall and F1; undefined ratios are reported as 0."""
    if cc.total <= 0:
        raise EmptyEvaluationError("no samples were evaluated")
    accuracy = (cc.tp + cc.tn) / cc.total
    precision = cc.tp / (cc.tp + cc.fp) if cc.tp + cc.fp else 0.0
    recall = cc.tp / (cc.tp + cc.fn) if cc.tp + cc.fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return Metrics(accuracy, precision, recall, f1)


def recall_of(cc: ConfusionCounts) -> float:
    return cc.tp / (cc.tp + cc.fn) if cc.tp + cc.fn else 0.0


@dataclass
class ConfigEvaluation:
    config: AnomalyScoreConfig
    overall: ConfusionCounts
    per_family: dict[str, ConfusionCounts]
    withheld: ConfusionCounts

    @property
    def metrics(self) -> Metrics:
        return compute_metrics(self.overall)

    @property
    def withheld_recall(self) -> float:
        return recall_of(self.withheld)


def evaluate_scores(lam_a, lam_c, lam_u, holdout: Dataset, configs, withheld=()) -> list[ConfigEvaluation]:
    """Tally confusion counts, overall and per family, for every score config."""
    out = []
    fams = holdout.families
    is_withheld = np.isin(fams, list(withheld))
    for cfg in configs:
        _, flagged = weighted_score(lam_a, lam_c, lam_u, cfg)
        overall = ConfusionCounts.from_predictions(holdout.labels, flagged)
        per_family = {
            str(f): ConfusionCounts.from_predictions(holdout.labels[fams == f], flagged[fams == f])
            for f in np.unique(fams)
        }
        wh = ConfusionCounts.from_predictions(holdout.labels[is_withheld], flagged[is_withheld])
        out.append(ConfigEvaluation(cfg, overall, per_family, wh))
    return out


def evaluate_zone(zone_model, holdout: Dataset, universal, ae, ae_reference,
                  configs: list[AnomalyScoreConfig], withheld=()) -> list[ConfigEvaluation]:
    """Score a zone's holdout with its local model, the frozen universal model
    and the autoencoder signal, for each score config."""
    lam_a = ae_reference.normalize(ae.errors(holdout.features))
    lam_u = universal.predict_proba(holdout.features)
    lam_c = zone_model.predict_proba(holdout.features)
    return evaluate_scores(lam_a, lam_c, lam_u, holdout, configs, withheld)
