import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import toy_dataset
from zoneids.anomaly import AnomalyScoreConfig
from zoneids.errors import EmptyEvaluationError
from zoneids.metrics import ConfusionCounts, compute_metrics, evaluate_scores


@pytest.mark.parametrize("counts,expected", [
    ((50, 0, 50, 0), (1.0, 1.0, 1.0, 1.0)),
    ((1, 1, 1, 1), (0.5, 0.5, 0.5, 0.5)),
    ((0, 0, 100, 0), (1.0, 0.0, 0.0, 0.0)),
])
def test_metric_examples(counts, expected):
    m = compute_metrics(ConfusionCounts(*counts))
    assert (m.accuracy, m.precision, m.recall, m.f1) == expected


def test_empty_evaluation():
    with pytest.raises(EmptyEvaluationError):
        compute_metrics(ConfusionCounts())


def test_from_predictions_and_addition():
    cc = ConfusionCounts.from_predictions([1, 1, 0, 0, 1], [1, 0, 1, 0, 1])
    assert cc.as_dict() == {"tp": 2, "fp": 1, "tn": 1, "fn": 1}
    assert (cc + cc).total == 10


def _signals(n, seed):
    rng = np.random.default_rng(seed)
    return rng.random(n), rng.random(n), rng.random(n)


def test_perfect_local_model_scores_one():
    hold = toy_dataset(60, families=("benign", "scan", "mitm"))
    lam_a, _, lam_u = _signals(60, 0)
    lam_c = hold.labels.astype(float)
    (ev,) = evaluate_scores(lam_a, lam_c, lam_u, hold, [AnomalyScoreConfig(0, 1, 0, 1)], ("mitm",))
    m = ev.metrics
    assert (m.accuracy, m.precision, m.recall, m.f1) == (1.0, 1.0, 1.0, 1.0)
    assert ev.withheld_recall == 1.0 and ev.withheld.total == 20


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from([0.25, 0.5, 2.0, 4.0]))
def test_family_breakdown_and_scaling_invariance(seed, k):
    hold = toy_dataset(90, seed=seed % 1000, families=("benign", "scan", "mitm", "ddos"))
    sig = _signals(90, seed)
    cfg = AnomalyScoreConfig(1, 1.5, 1.5, 2.5)
    base, scaled = evaluate_scores(*sig, hold, [cfg, cfg.scaled(k)], ("mitm", "ddos"))
    assert base.overall == scaled.overall
    total = ConfusionCounts()
    for cc in base.per_family.values():
        total = total + cc
    assert total == base.overall
    assert base.withheld == base.per_family["mitm"] + base.per_family["ddos"]
