"""Weighted parameter averaging and the synchronous round protocol with fallback."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import netsim
from .adapters import ZoneModel, extract_shared, load_shared, train_zone
from .anomaly import (
    AnomalyScoreConfig,
    PseudoLabel,
    PseudoLabelConfig,
    ReconError,
    dynamic_threshold_values,
    pseudo_label,
)
from .data import Dataset
from .errors import EmptyUpdateSetError
from .metrics import ConfigEvaluation, evaluate_scores
from .models import TrainConfig
from .nn import ParameterSet

log = logging.getLogger(__name__)

CURRENT = "current_global"
LAST_RECEIVED = "last_received_global"
INITIAL = "initial_deployed"


def fed_avg(updates: list[ParameterSet]) -> ParameterSet:
    """Sample-count weighted mean of congruent parameter sets."""
    if not updates:
        raise EmptyUpdateSetError("no updates to aggregate")
    first = updates[0]
    for u in updates[1:]:
        first.check_congruent(u)
    counts = np.array([u.sample_count for u in updates], dtype=np.float64)
    if np.any(counts <= 0):
        raise ValueError("every update needs a positive sample count")
    weights = counts / counts.sum()
    out = []
    for name in first:
        acc = np.zeros_like(first[name])
        for w, u in zip(weights, updates):
            acc += w * u[name]
        # rounding must not leave the hull of the inputs (keeps identical sets exact)
        stack = np.stack([u[name] for u in updates])
        out.append((name, np.clip(acc, stack.min(axis=0), stack.max(axis=0))))
    return ParameterSet(out, sample_count=int(counts.sum()))


@dataclass
class RoundConfig:
    rounds: int = 5
    local_epochs: int = 2
    local_learning_rate: float = 5e-4
    timeout: float = 50.0
    batch_size: int = 128
    seed: int = 0
    refresh_pseudo_labels: bool = True

    def __post_init__(self):
        if self.rounds < 0 or self.local_epochs < 0:
            raise ValueError("rounds and local_epochs must be nonnegative")
        if self.local_learning_rate <= 0 or self.timeout <= 0:
            raise ValueError("local_learning_rate and timeout must be positive")


@dataclass
class ZoneRuntime:
    zone_id: int
    model: ZoneModel
    initial_deployed: ParameterSet
    local_data: Dataset
    holdout: Dataset | None = None
    last_received_global: ParameterSet | None = None
    active_source: str = INITIAL
    # Labels used for the next local training run; -1 marks quarantined rows.
    train_labels: np.ndarray | None = None

    def training_set(self) -> tuple[Dataset, np.ndarray]:
        if self.train_labels is None:
            return self.local_data, self.local_data.labels
        keep = np.flatnonzero(self.train_labels >= 0)
        return self.local_data.take(keep), self.train_labels[keep]


@dataclass
class Coordinator:
    """Server state: the initially deployed shared set and the latest aggregate."""

    initial: ParameterSet
    stored: ParameterSet | None = None

    @property
    def latest(self) -> ParameterSet:
        return self.stored if self.stored is not None else self.initial


@dataclass
class RoundOutcome:
    round_index: int
    contributors: list[tuple[int, int]]
    aggregate: ParameterSet | None
    upload_failures: list[int]
    timeouts: list[int]
    server_model_used: bool
    sources: dict[int, str]
    clock: float
    idle: list[int] = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "round": self.round_index,
            "contributors": [{"zone": z, "samples": m} for z, m in self.contributors],
            "aggregated": self.aggregate is not None,
            "upload_failures": list(self.upload_failures),
            "broadcast_timeouts": list(self.timeouts),
            "idle_zones": list(self.idle),
            "server_model_used": self.server_model_used,
            "active_source": {str(z): s for z, s in sorted(self.sources.items())},
            "sim_clock_seconds": round(self.clock, 9),
        }


def zone_seed(seed: int, zone_id: int, round_index: int) -> int:
    return int(np.random.SeedSequence([seed, zone_id, round_index]).generate_state(1)[0])


def run_round(server: Coordinator, zones: list[ZoneRuntime], link: netsim.LinkModel,
              cfg: RoundConfig, round_index: int, clock: netsim.SimClock | None = None,
              trace: list | None = None) -> RoundOutcome:
    """Local training, upload, aggregation and broadcast for one round.

    Zones whose upload is lost or late simply do not contribute. When nobody
    contributes the server rebroadcasts its latest stored model. A zone that
    misses the broadcast reverts to its last received global model, or to
    its initially deployed one if it never received any.
    """
    clock = clock if clock is not None else netsim.SimClock()
    updates, idle = {}, []
    for z in zones:
        data, labels = z.training_set()
        if len(labels) == 0:
            idle.append(z.zone_id)
            continue
        if cfg.local_epochs:
            tcfg = TrainConfig(cfg.local_epochs, cfg.batch_size, cfg.local_learning_rate,
                               seed=zone_seed(cfg.seed, z.zone_id, round_index))
            train_zone(z.model, data, tcfg, labels=labels)
        updates[z.zone_id] = extract_shared(z.model, len(labels))

    pending = {zid: netsim.transmit(link, u, zid, netsim.SERVER, clock, round_index)
               for zid, u in updates.items()}
    received, failures = [], []
    for zid, delivery in pending.items():
        if netsim.await_with_timeout(delivery, cfg.timeout, clock, trace):
            received.append(zid)
        else:
            failures.append(zid)

    aggregate = None
    if received:
        aggregate = fed_avg([updates[zid] for zid in received])
        server.stored = aggregate
    broadcast = server.latest

    pending = {z.zone_id: netsim.transmit(link, broadcast, netsim.SERVER, z.zone_id, clock,
                                          round_index)
               for z in zones}
    timeouts, sources = [], {}
    for z in zones:
        if netsim.await_with_timeout(pending[z.zone_id], cfg.timeout, clock, trace):
            load_shared(z.model, broadcast)
            z.last_received_global = broadcast.copy()
            z.active_source = CURRENT
        else:
            timeouts.append(z.zone_id)
            if z.last_received_global is not None:
                load_shared(z.model, z.last_received_global)
                z.active_source = LAST_RECEIVED
            else:
                load_shared(z.model, z.initial_deployed)
                z.active_source = INITIAL
        sources[z.zone_id] = z.active_source

    return RoundOutcome(round_index, [(zid, updates[zid].sample_count) for zid in received],
                        aggregate, failures, timeouts, not received, sources, clock.now, idle)


# ---------------------------------------------------------------------------
# Full federation with pseudo-labelling and per-round evaluation
# ---------------------------------------------------------------------------


@dataclass
class Signals:
    """Frozen per-sample signals that do not change across rounds."""

    lam_a: np.ndarray
    lam_u: np.ndarray


def frozen_signals(data: Dataset, universal, ae, ae_reference: ReconError) -> Signals:
    return Signals(ae_reference.normalize(ae.errors(data.features)),
                   universal.predict_proba(data.features))


@dataclass
class PseudoLabelStats:
    normal: int
    abnormal: int
    quarantine: int
    tau: float

    def as_dict(self) -> dict:
        return {"normal": self.normal, "abnormal": self.abnormal,
                "quarantine": self.quarantine, "tau": self.tau}


def assign_pseudo_labels(zone: ZoneRuntime, sig: Signals, cfg: PseudoLabelConfig,
                         labelled_mask: np.ndarray | None = None) -> PseudoLabelStats:
    lam_c = zone.model.predict_proba(zone.local_data.features)
    tau = dynamic_threshold_values(sig.lam_a)
    labels = np.asarray(pseudo_label(sig.lam_a, lam_c, sig.lam_u, cfg, tau=tau), dtype=np.int64)
    if labelled_mask is not None:
        labels = np.where(labelled_mask, zone.local_data.labels, labels)
    zone.train_labels = labels
    return PseudoLabelStats(int(np.sum(labels == PseudoLabel.NORMAL)),
                            int(np.sum(labels == PseudoLabel.ABNORMAL)),
                            int(np.sum(labels == PseudoLabel.QUARANTINE)), float(tau))


@dataclass
class FederationResult:
    outcomes: list[RoundOutcome]
    # evaluations[round][zone_id] -> per-config evaluation; round 0 is pre-federation
    evaluations: list[dict[int, list[ConfigEvaluation]]]
    pseudo_labels: list[dict[int, PseudoLabelStats]]
    trace: list


def run_federation(universal, ae, ae_reference: ReconError, zones: list[ZoneRuntime],
                   link: netsim.LinkModel, cfg: RoundConfig, pl_cfg: PseudoLabelConfig,
                   score_configs: list[AnomalyScoreConfig], withheld=(),
                   labelled_fraction: float = 0.0) -> FederationResult:
    """Run ``cfg.rounds`` rounds, relabelling each zone's local traffic before
    every local training run and evaluating every zone's holdout after each
    round (index 0 holds the pre-federation evaluation)."""
    local_sig = {z.zone_id: frozen_signals(z.local_data, universal, ae, ae_reference) for z in zones}
    hold_sig = {z.zone_id: frozen_signals(z.holdout, universal, ae, ae_reference)
                for z in zones if z.holdout is not None}
    labelled = {}
    for z in zones:
        rng = np.random.default_rng([cfg.seed, z.zone_id, 99])
        labelled[z.zone_id] = rng.random(len(z.local_data)) < labelled_fraction

    def evaluate_all():
        out = {}
        for z in zones:
            if z.holdout is None:
                continue
            s = hold_sig[z.zone_id]
            lam_c = z.model.predict_proba(z.holdout.features)
            out[z.zone_id] = evaluate_scores(s.lam_a, lam_c, s.lam_u, z.holdout,
                                             score_configs, withheld)
        return out

    server = Coordinator(initial=zones[0].initial_deployed.copy())
    clock = netsim.SimClock()
    trace: list = []
    outcomes, evaluations, pl_stats = [], [evaluate_all()], []
    for r in range(1, cfg.rounds + 1):
        stats = {}
        for z in zones:
            if cfg.refresh_pseudo_labels or z.train_labels is None:
                stats[z.zone_id] = assign_pseudo_labels(z, local_sig[z.zone_id], pl_cfg,
                                                        labelled[z.zone_id])
        pl_stats.append(stats)
        outcomes.append(run_round(server, zones, link, cfg, r, clock, trace))
        evaluations.append(evaluate_all())
    return FederationResult(outcomes, evaluations, pl_stats, trace)
