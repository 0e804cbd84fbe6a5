"""Experiment configuration: JSON document <-> validated dataclasses."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .anomaly import DEFAULT_GRID, AnomalyScoreConfig, PseudoLabelConfig
from .data import CsvSchema, SyntheticConfig, ZeroDayProtocol
from .errors import ConfigError
from .featsel import SelectionConfig
from .federation import RoundConfig
from .models import TrainConfig
from .netsim import LinkModel, ScriptedOutcome, load_schedule


def _build(cls, raw, where: str):
    if raw is None:
        return cls()
    if isinstance(raw, cls):
        return raw
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected an object, got {type(raw).__name__}")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


@dataclass
class ModelSection:
    scale: float = 0.25
    batch_norm: bool = True
    universal: TrainConfig = field(default_factory=lambda: TrainConfig(30, 128, 0.2))
    autoencoder: TrainConfig = field(default_factory=lambda: TrainConfig(30, 128, 0.2))


@dataclass
class AdapterSection:
    reduction: int = 4
    aggregate_head: bool = True
    # Share of the zone reserve's known-family rows used to initialise adapters.
    init_fraction: float = 0.5
    init_val_fraction: float = 0.15
    init: TrainConfig = field(default_factory=lambda: TrainConfig(10, 128, 0.2))


@dataclass
class ZoneSection:
    count: int = 4
    holdout_fraction: float = 0.3


@dataclass
class PseudoLabelSection:
    score: list = field(default_factory=lambda: [1, 1.5, 1.5, 2.5])
    hi_conf: float = 0.9
    lo_conf: float = 0.1
    labelled_fraction: float = 0.0

    def build(self) -> PseudoLabelConfig:
        return PseudoLabelConfig(AnomalyScoreConfig.from_list(self.score), self.hi_conf,
                                 self.lo_conf)


@dataclass
class LinkSection:
    one_way_delay: float = 0.25
    loss_probability: float = 0.0
    jitter: float = 0.0
    schedule_csv: str | None = None
    # Inline schedule rows: [round, zone, direction, outcome]
    schedule: list = field(default_factory=list)

    def build(self, seed: int) -> LinkModel:
        link = LinkModel(self.one_way_delay, self.loss_probability, self.jitter, seed=seed)
        if self.schedule_csv:
            link.schedule.update(load_schedule(self.schedule_csv))
        for row in self.schedule:
            r, z, direction, outcome = row
            r, z, direction = int(r), int(z), str(direction)
            if outcome == "drop":
                link.script(r, z, direction, ScriptedOutcome(drop=True))
            elif outcome == "ok":
                link.script(r, z, direction, ScriptedOutcome())
            else:
                link.script(r, z, direction, ScriptedOutcome(delay=float(outcome)))
        return link


@dataclass
class ExperimentConfig:
    scenario: str = "synthetic"
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    csv_paths: list = field(default_factory=list)
    csv_schema: CsvSchema | None = None
    protocol: ZeroDayProtocol = field(default_factory=lambda: ZeroDayProtocol(("ddos", "mitm")))
    selection: SelectionConfig = field(default_factory=lambda: SelectionConfig(
        n_splits=2, ensemble_trees=10, rfe_max_samples=1000))
    model: ModelSection = field(default_factory=ModelSection)
    adapter: AdapterSection = field(default_factory=AdapterSection)
    zones: ZoneSection = field(default_factory=ZoneSection)
    federation: RoundConfig = field(default_factory=lambda: RoundConfig(
        rounds=5, local_epochs=2, local_learning_rate=0.1))
    pseudo_label: PseudoLabelSection = field(default_factory=PseudoLabelSection)
    link: LinkSection = field(default_factory=LinkSection)
    score_grid: list = field(default_factory=lambda: [list(c) for c in DEFAULT_GRID])
    seeds: list = field(default_factory=lambda: [0])

    def __post_init__(self):
        self.validate()

    # -- helpers -------------------------------------------------------
    def score_configs(self) -> list[AnomalyScoreConfig]:
        return [AnomalyScoreConfig.from_list(c) for c in self.score_grid]

    def validate(self) -> None:
        if self.scenario not in ("synthetic", "csv"):
            raise ConfigError("scenario must be 'synthetic' or 'csv'")
        if self.scenario == "csv":
            if not self.csv_paths:
                raise ConfigError("csv scenario needs csv_paths")
            if self.csv_schema is None:
                raise ConfigError("csv scenario needs csv_schema")
        else:
            fams = set(self.synthetic.known_families) | set(self.synthetic.withheld_families)
            missing = [f for f in self.protocol.withheld_families if f not in fams]
            if missing:
                raise ConfigError(f"withheld families not generated: {missing}")
        if not self.seeds or not all(isinstance(s, int) and s >= 0 for s in self.seeds):
            raise ConfigError("seeds must be a nonempty list of nonnegative integers")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if not self.score_grid:
            raise ConfigError("score_grid must not be empty")
        for row in self.score_grid:
            if len(row) != 4:
                raise ConfigError(f"score config needs 4 numbers, got {row}")
            try:
                AnomalyScoreConfig.from_list(row)
            except ValueError as exc:
                raise ConfigError(f"score config {row}: {exc}") from exc
        if self.model.scale <= 0:
            raise ConfigError("model.scale must be positive")
        if self.zones.count < 1:
            raise ConfigError("zones.count must be positive")
        for name, frac in (("zones.holdout_fraction", self.zones.holdout_fraction),
                           ("adapter.init_fraction", self.adapter.init_fraction),
                           ("adapter.init_val_fraction", self.adapter.init_val_fraction)):
            if not 0 < frac < 1:
                raise ConfigError(f"{name} must lie in (0, 1)")
        if not 0 <= self.pseudo_label.labelled_fraction <= 1:
            raise ConfigError("pseudo_label.labelled_fraction must lie in [0, 1]")
        try:
            self.pseudo_label.build()
            self.link.build(0)
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc

    def with_seeds(self, seeds) -> "ExperimentConfig":
        return dataclasses.replace(self, seeds=[int(s) for s in seeds])

    # -- (de)serialisation ---------------------------------------------
    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(raw) - known - {"seed"})
        if unknown:
            raise ConfigError(f"unknown config keys {unknown}")
        raw = dict(raw)
        if "seed" in raw:
            if "seeds" in raw:
                raise ConfigError("give either seed or seeds, not both")
            raw["seeds"] = [raw.pop("seed")]
        kw = {}
        for key in ("scenario", "csv_paths", "score_grid", "seeds"):
            if key in raw:
                kw[key] = raw[key]
        if "synthetic" in raw:
            kw["synthetic"] = _build(SyntheticConfig, raw["synthetic"], "synthetic")
        if raw.get("csv_schema") is not None:
            try:
                kw["csv_schema"] = CsvSchema.from_dict(raw["csv_schema"])
            except TypeError as exc:
                raise ConfigError(f"csv_schema: {exc}") from exc
        if "protocol" in raw:
            kw["protocol"] = _build(ZeroDayProtocol, raw["protocol"], "protocol")
        if "selection" in raw:
            kw["selection"] = _build(SelectionConfig, raw["selection"], "selection")
        if "model" in raw:
            m = dict(raw["model"])
            for key in ("universal", "autoencoder"):
                if key in m:
                    m[key] = _build(TrainConfig, m[key], f"model.{key}")
            kw["model"] = _build(ModelSection, m, "model")
        if "adapter" in raw:
            a = dict(raw["adapter"])
            if "init" in a:
                a["init"] = _build(TrainConfig, a["init"], "adapter.init")
            kw["adapter"] = _build(AdapterSection, a, "adapter")
        for key, section in (("zones", ZoneSection), ("federation", RoundConfig),
                             ("pseudo_label", PseudoLabelSection), ("link", LinkSection)):
            if key in raw:
                kw[key] = _build(section, raw[key], key)
        try:
            return cls(**kw)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["protocol"]["withheld_families"] = list(self.protocol.withheld_families)
        if self.csv_schema is not None:
            d["csv_schema"] = {k: list(v) if isinstance(v, tuple) else v
                               for k, v in d["csv_schema"].items()}
        return d

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
