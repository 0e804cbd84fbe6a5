"""End-to-end experiment pipeline and report emission.

A run is split into stages (data, selection, universal, autoencoder,
deploy, federate, evaluate). ``SeedRun`` keeps every stage's artifacts in
memory; ``run_experiment`` chains all stages for each configured seed and
the command-line verbs persist and reload individual stages.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import os

import numpy as np

from .adapters import (
    ZoneModel,
    attach_adapters,
    extract_shared,
    init_adapter_training,
    load_zone,
    parameter_ratio,
    save_zone,
)
from .anomaly import ReconError
from .config import ExperimentConfig
from .data import (
    Dataset,
    Scaler,
    ZeroDaySplit,
    apply_scale,
    fit_scale,
    ingest_csv,
    make_synthetic,
    partition_zones,
    stratified_partition,
    zero_day_split,
)
from .featsel import SelectionResult, select_features
from .federation import FederationResult, ZoneRuntime, run_federation
from .metrics import ConfigEvaluation, ConfusionCounts, compute_metrics, evaluate_zone, recall_of
from .models import (
    AutoencoderModel,
    TrainConfig,
    TrainingLog,
    UniversalModel,
    build_autoencoder,
    build_universal,
    load_autoencoder,
    load_universal,
    save_autoencoder,
    save_universal,
    train_autoencoder,
    train_universal,
)

log = logging.getLogger(__name__)

REPORT_FORMAT = "zoneids-report/1"
STAGES = ("data", "selection", "universal", "autoencoder", "deploy", "federate", "evaluate")
METRIC_COLUMNS = ("accuracy", "precision", "recall", "f1")

# Stage tags keep the RNG streams of different stages apart.
_TAG = {name: i for i, name in enumerate(STAGES)}


def derive_seed(seed: int, *tags: int) -> int:
    return int(np.random.SeedSequence([int(seed), *map(int, tags)]).generate_state(1)[0])


def _seeded(cfg: TrainConfig, seed: int, stage: str) -> TrainConfig:
    return dataclasses.replace(cfg, seed=derive_seed(seed, _TAG[stage], cfg.seed))


def load_dataset(cfg: ExperimentConfig, seed: int) -> Dataset:
    if cfg.scenario == "synthetic":
        return make_synthetic(cfg.synthetic, seed)
    parts = [ingest_csv(p, cfg.csv_schema) for p in cfg.csv_paths]
    names = parts[0].feature_names
    for p, part in zip(cfg.csv_paths, parts):
        if part.feature_names != names:
            raise ValueError(f"{p}: feature columns differ from {cfg.csv_paths[0]}")
    data = Dataset.concat(parts)
    data.diagnostics = {"files": [dict(path=str(p), **part.diagnostics)
                                  for p, part in zip(cfg.csv_paths, parts)]}
    return data


@dataclasses.dataclass
class ScaledSplit:
    train: Dataset
    val: Dataset
    test: Dataset
    reserve: Dataset
    scaler: Scaler


def scale_split(split: ZeroDaySplit, features: list[str]) -> ScaledSplit:
    """Fit min-max statistics on the universal training rows only."""
    train = fit_scale(split.universal_train.select(features))
    sc = train.scaler
    return ScaledSplit(train, apply_scale(split.val.select(features), sc),
                       apply_scale(split.test.select(features), sc),
                       apply_scale(split.zone_reserve.select(features), sc), sc)


def split_reserve(reserve: Dataset, withheld, init_fraction: float, seed: int):
    """Known-family reserve rows are divided between adapter initialisation
    and the zones; withheld-family rows all go to the zones."""
    is_withheld = np.isin(reserve.families, list(withheld))
    known = np.flatnonzero(~is_withheld)
    rng = np.random.default_rng([seed, _TAG["deploy"], 1])
    a, b = stratified_partition(reserve.families[known], [init_fraction, 1 - init_fraction], rng)
    pool = np.sort(np.concatenate([known[b], np.flatnonzero(is_withheld)]))
    return reserve.take(known[a]), reserve.take(pool)


def build_zones(pool: Dataset, count: int, holdout_fraction: float, seed: int) -> list[tuple[Dataset, Dataset]]:
    out = []
    for i, part in enumerate(partition_zones(pool, count, derive_seed(seed, _TAG["deploy"], 2))):
        rng = np.random.default_rng([seed, _TAG["deploy"], 3, i])
        local, hold = stratified_partition(part.families, [1 - holdout_fraction, holdout_fraction], rng)
        out.append((part.take(local), part.take(hold)))
    return out


# ---------------------------------------------------------------------------
# Report fragments
# ---------------------------------------------------------------------------


def _evaluation_entry(ev: ConfigEvaluation) -> dict:
    return {
        "config": ev.config.label,
        "counts": ev.overall.as_dict(),
        "metrics": ev.metrics.as_dict(),
        "withheld_counts": ev.withheld.as_dict(),
        "withheld_recall": ev.withheld_recall,
        "per_family": {f: c.as_dict() for f, c in sorted(ev.per_family.items())},
    }


def pooled_rows(per_zone: dict[int, list[ConfigEvaluation]]) -> list[dict]:
    """One row per score config, confusion counts summed across zones."""
    zones = sorted(per_zone)
    rows = []
    for ci, first in enumerate(per_zone[zones[0]]):
        overall, withheld = ConfusionCounts(), ConfusionCounts()
        for z in zones:
            overall = overall + per_zone[z][ci].overall
            withheld = withheld + per_zone[z][ci].withheld
        m = compute_metrics(overall)
        rows.append({"config": first.config.label, **m.as_dict(),
                     "withheld_recall": recall_of(withheld)})
    return rows


def mean_rows(tables: list[list[dict]]) -> list[dict]:
    keys = METRIC_COLUMNS + ("withheld_recall",)
    return [{"config": rows[0]["config"], **{k: float(np.mean([r[k] for r in rows])) for k in keys}}
            for rows in zip(*tables)]


def _log_summary(tlog: TrainingLog) -> dict:
    return {"best_epoch": tlog.best_epoch, "aborted": tlog.aborted, "epochs": tlog.rows()}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if np.isfinite(x) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


# ---------------------------------------------------------------------------
# Per-seed pipeline
# ---------------------------------------------------------------------------


class SeedRun:
    """All stages of one seed; ``report`` accumulates as stages complete."""

    def __init__(self, cfg: ExperimentConfig, seed: int):
        self.cfg = cfg
        self.seed = int(seed)
        self.report: dict = {"seed": self.seed, "status": "running", "completed_stages": []}
        self.split: ZeroDaySplit | None = None
        self.selection: SelectionResult | None = None
        self.features: list[str] | None = None
        self.scaled: ScaledSplit | None = None
        self.universal: UniversalModel | None = None
        self.autoencoder: AutoencoderModel | None = None
        self.ae_reference: ReconError | None = None
        self.zone_init: ZoneModel | None = None
        self.zones: list[ZoneRuntime] | None = None
        self.federation: FederationResult | None = None

    def _done(self, stage: str, fragment: dict) -> None:
        self.report[stage] = _jsonable(fragment)
        self.report["completed_stages"].append(stage)

    # -- stages ----------------------------------------------------------
    def stage_data(self) -> None:
        data = load_dataset(self.cfg, self.seed)
        self.split = zero_day_split(data, self.cfg.protocol, derive_seed(self.seed, _TAG["data"]))
        self._done("data", {
            "rows": len(data),
            "features": data.n_features,
            "families": data.family_counts(),
            "withheld_families": list(self.cfg.protocol.withheld_families),
            "split_rows": {k: len(v) for k, v in self.split._asdict().items()},
            "diagnostics": data.diagnostics,
        })

    def stage_selection(self) -> None:
        self.selection = select_features(self.split.universal_train, self.cfg.selection,
                                         derive_seed(self.seed, _TAG["selection"]) % 2**31)
        self.features = list(self.selection.selected)
        self._done("selection", {"selected": self.features, "mi_cutoff": self.selection.cutoff,
                                 "features": self.selection.rows()})

    def use_features(self, features: list[str]) -> None:
        self.features = list(features)

    def _ensure_scaled(self) -> None:
        if self.scaled is None:
            self.scaled = scale_split(self.split, self.features)

    def stage_universal(self) -> None:
        self._ensure_scaled()
        m = self.cfg.model
        s = self.scaled
        model = build_universal(len(self.features), m.scale, derive_seed(self.seed, _TAG["universal"]),
                                m.batch_norm)
        self.universal, tlog = train_universal(model, s.train, s.val,
                                               _seeded(m.universal, self.seed, "universal"))
        p = self.universal.predict_proba(s.test.features)
        cc = ConfusionCounts.from_predictions(s.test.labels, p >= 0.5)
        self._done("universal", {"parameters": self.universal.net.params.num_params,
                                 "test_counts": cc.as_dict(),
                                 "test_metrics": compute_metrics(cc).as_dict(),
                                 "training": _log_summary(tlog)})

    def stage_autoencoder(self) -> None:
        self._ensure_scaled()
        m = self.cfg.model
        s = self.scaled
        model = build_autoencoder(len(self.features), m.scale,
                                  derive_seed(self.seed, _TAG["autoencoder"]))
        self.autoencoder, tlog = train_autoencoder(
            model, s.train.normal_only(), _seeded(m.autoencoder, self.seed, "autoencoder"),
            val=s.val.normal_only())
        self.ae_reference = ReconError.from_raw(self.autoencoder.errors(s.train.normal_only().features))
        self._done("autoencoder", {"parameters": self.autoencoder.net.params.num_params,
                                   "reference_min": self.ae_reference.min_raw,
                                   "reference_max": self.ae_reference.max_raw,
                                   "training": _log_summary(tlog)})

    def stage_deploy(self) -> None:
        self._ensure_scaled()
        a = self.cfg.adapter
        withheld = self.cfg.protocol.withheld_families
        init, pool = split_reserve(self.scaled.reserve, withheld, a.init_fraction, self.seed)
        rng = np.random.default_rng([self.seed, _TAG["deploy"], 4])
        fit_idx, val_idx = stratified_partition(init.labels, [1 - a.init_val_fraction,
                                                              a.init_val_fraction], rng)
        zone = attach_adapters(self.universal, a.reduction, derive_seed(self.seed, _TAG["deploy"]),
                               a.aggregate_head)
        zone, tlog = init_adapter_training(zone, init.take(fit_idx), _seeded(a.init, self.seed, "deploy"),
                                           val=init.take(val_idx), withheld=withheld)
        self.zone_init = zone
        self._make_zones(pool)
        self._done("deploy", {
            "parameter_ratio": parameter_ratio(zone, self.universal),
            "trainable_parameters": sum(zone.net.params[k].size for k in zone.trainable_names()),
            "adapter_init_rows": len(init),
            "zones": [{"zone": z.zone_id, "local_rows": len(z.local_data),
                       "holdout_rows": len(z.holdout),
                       "local_families": z.local_data.family_counts()} for z in self.zones],
            "training": _log_summary(tlog),
        })

    def _make_zones(self, pool: Dataset | None = None) -> None:
        if pool is None:
            _, pool = split_reserve(self.scaled.reserve, self.cfg.protocol.withheld_families,
                                    self.cfg.adapter.init_fraction, self.seed)
        self.zones = []
        for i, (local, hold) in enumerate(build_zones(pool, self.cfg.zones.count,
                                                      self.cfg.zones.holdout_fraction, self.seed)):
            model = self.zone_init.copy()
            self.zones.append(ZoneRuntime(i, model, extract_shared(model, max(len(local), 1)),
                                          local, hold))

    def stage_federate(self) -> None:
        cfg = self.cfg
        rcfg = dataclasses.replace(cfg.federation,
                                   seed=derive_seed(self.seed, _TAG["federate"], cfg.federation.seed))
        link = cfg.link.build(derive_seed(self.seed, _TAG["federate"], 1))
        self.federation = run_federation(
            self.universal, self.autoencoder, self.ae_reference, self.zones, link, rcfg,
            cfg.pseudo_label.build(), cfg.score_configs(),
            withheld=cfg.protocol.withheld_families,
            labelled_fraction=cfg.pseudo_label.labelled_fraction)
        self._done("federate", {
            "rounds": [o.summary() for o in self.federation.outcomes],
            "pseudo_labels": [{str(z): s.as_dict() for z, s in sorted(r.items())}
                              for r in self.federation.pseudo_labels],
            "transfers": len(self.federation.trace),
            "round_tables": [pooled_rows(ev) for ev in self.federation.evaluations],
        })

    def _evaluate_models(self, models: dict[int, ZoneModel]) -> dict[int, list[ConfigEvaluation]]:
        cfg = self.cfg
        return {z.zone_id: evaluate_zone(models[z.zone_id], z.holdout, self.universal,
                                         self.autoencoder, self.ae_reference, cfg.score_configs(),
                                         cfg.protocol.withheld_families)
                for z in self.zones}

    def stage_evaluate(self) -> None:
        """Metric tables of the federated zones.

        After an in-process federation every round's evaluation is at hand.
        Otherwise the initially deployed and the saved final zone models are
        scored again and the per-round history comes from the federate stage.
        """
        rounds = len(self.report["federate"]["round_tables"]) - 1
        if self.federation is not None:
            evaluations = list(enumerate(self.federation.evaluations))
        else:
            initial = {z.zone_id: self.zone_init for z in self.zones}
            final = {z.zone_id: z.model for z in self.zones}
            evaluations = [(0, self._evaluate_models(initial))]
            if rounds:
                evaluations.append((rounds, self._evaluate_models(final)))
        history = self.report["federate"]["round_tables"]
        tables = {
            "pre_federation": pooled_rows(evaluations[0][1]),
            "final_round_across_zones": pooled_rows(evaluations[-1][1]),
            "mean_over_rounds": mean_rows(history[1:] or history[:1]),
        }
        by_round = [{"round": r, "zones": {str(z): [_evaluation_entry(e) for e in evs]
                                           for z, evs in sorted(ev.items())}}
                    for r, ev in evaluations]
        self._done("evaluate", {"tables": tables, "by_round": by_round})

    def run_all(self) -> dict:
        for stage in STAGES:
            getattr(self, f"stage_{stage}")()
        self.report["status"] = "ok"
        return self.report


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Run every configured seed; the first failure stops the run and the
    report is returned with status ``failed`` and whatever had completed."""
    report = {"format": REPORT_FORMAT, "status": "running", "config": cfg.to_dict(), "runs": []}
    for seed in cfg.seeds:
        run = SeedRun(cfg, seed)
        report["runs"].append(run.report)
        try:
            run.run_all()
        except Exception as exc:  # any module error aborts the experiment
            stage = STAGES[len(run.report["completed_stages"])]
            log.error("seed %d failed in stage %s: %s", seed, stage, exc)
            run.report["status"] = "failed"
            run.report["error"] = {"stage": stage, "type": type(exc).__name__, "message": str(exc)}
            report["status"] = "failed"
            return report
    report["status"] = "ok"
    report["summary"] = summarize(report["runs"])
    return report


def summarize(runs: list[dict]) -> dict:
    """Seed means of each metric table."""
    names = runs[0]["evaluate"]["tables"].keys()
    return {name: mean_rows([r["evaluate"]["tables"][name] for r in runs]) for name in names}


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------


def dumps_report(report: dict) -> str:
    return json.dumps(_jsonable(report), indent=2, sort_keys=True) + "\n"


def table_rows(report: dict) -> list[dict]:
    rows = []
    for run in report.get("runs", []):
        tables = run.get("evaluate", {}).get("tables", {})
        for name, table in tables.items():
            rows += [{"seed": run["seed"], "aggregation": name, **row} for row in table]
    for name, table in report.get("summary", {}).items():
        rows += [{"seed": "mean", "aggregation": name, **row} for row in table]
    return rows


def write_report(report: dict, path) -> tuple[str, str]:
    """Write the JSON report to ``path`` and the flat metrics table next to it."""
    path = str(path)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        fh.write(dumps_report(report))
    table = os.path.splitext(path)[0] + ".metrics.csv"
    with open(table, "w", newline="") as fh:
        cols = ["seed", "aggregation", "config", *METRIC_COLUMNS, "withheld_recall"]
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for row in table_rows(report):
            w.writerow({k: (repr(float(v)) if k in cols[3:] else v) for k, v in row.items()})
    return path, table


# ---------------------------------------------------------------------------
# Stage persistence used by the command-line verbs
# ---------------------------------------------------------------------------


class Workdir:
    """Artifact directory of one seed: ``<root>/seed-<n>/``."""

    def __init__(self, root, seed: int):
        self.path = os.path.join(str(root), f"seed-{int(seed)}")
        os.makedirs(self.path, exist_ok=True)

    def file(self, *parts) -> str:
        return os.path.join(self.path, *parts)

    def has(self, *parts) -> bool:
        return os.path.exists(self.file(*parts))

    def write_json(self, name: str, obj) -> None:
        with open(self.file(name), "w") as fh:
            fh.write(dumps_report(obj))

    def read_json(self, name: str):
        with open(self.file(name)) as fh:
            return json.load(fh)


def _require(wd: Workdir, name: str, verb: str) -> None:
    if not wd.has(name):
        raise FileNotFoundError(f"{wd.file(name)} missing; run `{verb}` first")


def save_stage(run: SeedRun, stage: str, wd: Workdir) -> None:
    wd.write_json(f"{stage}.json", run.report.get(stage, {}))
    if stage == "selection":
        wd.write_json("features.json", run.features)
    elif stage == "universal":
        save_universal(run.universal, wd.file("universal"))
        wd.write_json("scaler.json", {"minimum": run.scaled.scaler.minimum,
                                      "maximum": run.scaled.scaler.maximum})
    elif stage == "autoencoder":
        save_autoencoder(run.autoencoder, wd.file("autoencoder"))
        wd.write_json("ae_reference.json", {"min_raw": run.ae_reference.min_raw,
                                            "max_raw": run.ae_reference.max_raw})
    elif stage == "deploy":
        save_zone(run.zone_init, wd.file("zone_init"))
    elif stage == "federate":
        for z in run.zones:
            save_zone(z.model, wd.file("zones", f"zone-{z.zone_id}"))


def restore_through(run: SeedRun, stage: str, wd: Workdir) -> None:
    """Rebuild in-memory state needed before ``stage`` from saved artifacts.

    The data split is recomputed from (config, seed); trained models are
    loaded from disk so that no stage is silently retrained.
    """
    need = STAGES[:STAGES.index(stage)]
    run.stage_data()
    if "selection" in need:
        _require(wd, "features.json", "select-features")
        run.use_features(wd.read_json("features.json"))
        run._ensure_scaled()
    if "universal" in need and stage != "autoencoder":
        _require(wd, "universal", "train-universal")
        run.universal = load_universal(wd.file("universal"))
    if "autoencoder" in need:
        _require(wd, "autoencoder", "train-autoencoder")
        run.autoencoder = load_autoencoder(wd.file("autoencoder"))
        ref = wd.read_json("ae_reference.json")
        run.ae_reference = ReconError(np.zeros(0), np.zeros(0), ref["min_raw"], ref["max_raw"])
    if "deploy" in need:
        _require(wd, "zone_init", "deploy-zones")
        run.zone_init = load_zone(wd.file("zone_init"))
        run._make_zones()
    if "federate" in need:
        _require(wd, "federate.json", "federate")
        for z in run.zones:
            z.model = load_zone(wd.file("zones", f"zone-{z.zone_id}"))
    for s in need:
        if s != "data" and wd.has(f"{s}.json"):
            run.report[s] = wd.read_json(f"{s}.json")
            run.report["completed_stages"].append(s)
