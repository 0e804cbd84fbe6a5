"""Zone-adaptive intrusion detection with adapters and federated averaging."""

from .anomaly import AnomalyScoreConfig, PseudoLabel, PseudoLabelConfig, dynamic_threshold, weighted_score
from .config import ExperimentConfig
from .federation import fed_avg, run_federation, run_round
from .metrics import ConfusionCounts, compute_metrics
from .nn import Network, ParameterSet
from .runner import run_experiment

__all__ = [
    "AnomalyScoreConfig", "ConfusionCounts", "ExperimentConfig", "Network", "ParameterSet",
    "PseudoLabel", "PseudoLabelConfig", "compute_metrics", "dynamic_threshold", "fed_avg",
    "run_experiment", "run_federation", "run_round", "weighted_score",
]
