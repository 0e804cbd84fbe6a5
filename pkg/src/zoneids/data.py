"""Flow-feature datasets: CSV ingestion, scaling, zero-day splits, zones."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
import pandas as pd

from .errors import (
    EmptyDatasetError,
    FamilyNotFoundError,
    MissingColumnError,
    ScalerMissingError,
    SchemaViolationError,
)

log = logging.getLogger(__name__)

BENIGN = "benign"

# Identifier, address, port, timestamp and protocol columns of the common
# flow datasets. Matched after lower-casing and stripping non-alphanumerics.
DEFAULT_DROP = (
    "flowid", "srcip", "dstip", "sourceip", "destinationip", "srcport", "dstport",
    "sourceport", "destinationport", "sport", "dsport", "ts", "timestamp", "stime",
    "ltime", "proto", "protocol", "id",
)


def _norm(name: str) -> str:
    return re.sub(r"[^a-z0-9]", "", name.lower())


@dataclass
class Scaler:
    minimum: np.ndarray
    maximum: np.ndarray

    def transform(self, x: np.ndarray) -> np.ndarray:
        span = self.maximum - self.minimum
        safe = np.where(span > 0, span, 1.0)
        out = np.where(span > 0, (x - self.minimum) / safe, 0.0)
        return np.clip(out, 0.0, 1.0)


@dataclass
class Dataset:
    """Feature matrix with attack-family tags; binary labels derive from the tags."""

    features: np.ndarray
    families: np.ndarray
    feature_names: list[str]
    labels: np.ndarray | None = None
    scaler: Scaler | None = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-D matrix")
        self.families = np.asarray(self.families, dtype=object).astype(str)
        if len(self.families) != len(self.features):
            raise ValueError("families length does not match number of rows")
        if len(self.feature_names) != self.features.shape[1]:
            raise ValueError("feature_names length does not match number of columns")
        self.feature_names = list(self.feature_names)
        derived = (self.families != BENIGN).astype(np.int64)
        if self.labels is not None:
            given = np.asarray(self.labels).astype(np.int64)
            if given.shape != derived.shape or np.any(given != derived):
                raise SchemaViolationError("labels disagree with family tags (benign <=> label 0)")
        self.labels = derived

    def __len__(self) -> int:
        return len(self.families)

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def take(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.features[idx], self.families[idx], self.feature_names,
                       scaler=self.scaler)

    def select(self, names: Sequence[str]) -> "Dataset":
        pos = {n: i for i, n in enumerate(self.feature_names)}
        missing = [n for n in names if n not in pos]
        if missing:
            raise MissingColumnError(f"features not present: {missing}")
        cols = [pos[n] for n in names]
        return Dataset(self.features[:, cols], self.families, list(names))

    def normal_only(self) -> "Dataset":
        return self.take(np.flatnonzero(self.labels == 0))

    def family_counts(self) -> dict[str, int]:
        fams, counts = np.unique(self.families, return_counts=True)
        return {str(f): int(c) for f, c in zip(fams, counts)}

    @staticmethod
    def concat(parts: Sequence["Dataset"]) -> "Dataset":
        return Dataset(np.vstack([p.features for p in parts]),
                       np.concatenate([p.families for p in parts]),
                       parts[0].feature_names, scaler=parts[0].scaler)


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------


@dataclass
class CsvSchema:
    family_column: str
    label_column: str | None = None
    benign_values: tuple[str, ...] = ("benign", "normal")
    drop_columns: tuple[str, ...] = DEFAULT_DROP
    extra_drop: tuple[str, ...] = ()

    @classmethod
    def from_dict(cls, d: dict) -> "CsvSchema":
        d = dict(d)
        for key in ("benign_values", "drop_columns", "extra_drop"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    @classmethod
    def load(cls, path) -> "CsvSchema":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _to_float(cell) -> float:
    try:
        return float(cell)
    except (TypeError, ValueError):
        return np.nan


def _parse_numeric(column: pd.Series) -> np.ndarray:
    """Exact float64 values; unparseable cells become NaN."""
    if pd.api.types.is_numeric_dtype(column):
        return column.to_numpy(dtype=np.float64)
    return np.array([_to_float(c) for c in column], dtype=np.float64)


def ingest_csv(path, schema: CsvSchema) -> Dataset:
    """Read a flow CSV with a header row.

    Columns on the drop list are removed. A column that is mostly
    non-numeric is not a feature and is discarded; any remaining row with an
    unparseable feature cell is dropped and counted in ``diagnostics``.
    """
    header = pd.read_csv(path, nrows=0).columns
    text_cols = {c: str for c in (schema.family_column, schema.label_column) if c in header}
    frame = pd.read_csv(path, dtype=text_cols, keep_default_na=False,
                        float_precision="round_trip", low_memory=False)
    for col in (schema.family_column, schema.label_column):
        if col is not None and col not in frame.columns:
            raise MissingColumnError(f"column {col!r} not found in {path}")
    if frame.empty:
        raise EmptyDatasetError(f"{path} has no data rows")

    drop = {_norm(c) for c in schema.drop_columns + schema.extra_drop}
    special = {schema.family_column, schema.label_column}
    candidates = [c for c in frame.columns if c not in special and _norm(c) not in drop]
    dropped_cols = [c for c in frame.columns if c not in special and _norm(c) in drop]

    numeric = {}
    non_numeric_cols = []
    for col in candidates:
        values = _parse_numeric(frame[col])
        if np.isfinite(values).mean() < 0.5:
            non_numeric_cols.append(col)
        else:
            numeric[col] = values
    if not numeric:
        raise EmptyDatasetError("no numeric feature columns")

    names = list(numeric)
    x = np.column_stack([numeric[c] for c in names])
    good = np.all(np.isfinite(x), axis=1)

    fam_raw = frame[schema.family_column].astype(str).str.strip()
    benign = {b.lower() for b in schema.benign_values}
    families = np.array([BENIGN if f.lower() in benign else f for f in fam_raw], dtype=object)

    labels = None
    if schema.label_column is not None:
        lab = pd.to_numeric(frame[schema.label_column], errors="coerce").to_numpy()
        good &= np.isfinite(lab)
        labels = np.where(np.isfinite(lab), lab, -1).astype(np.int64)

    n_bad = int((~good).sum())
    if n_bad:
        log.warning("dropped %d rows with unparseable values from %s", n_bad, path)
    keep = np.flatnonzero(good)
    if keep.size == 0:
        raise EmptyDatasetError(f"no parseable rows in {path}")
    ds = Dataset(x[keep], families[keep], names,
                 labels=None if labels is None else labels[keep])
    ds.diagnostics = {
        "rows_read": int(len(frame)),
        "rows_dropped": n_bad,
        "dropped_columns": dropped_cols,
        "non_numeric_columns": non_numeric_cols,
    }
    return ds


def write_csv(data: Dataset, path, family_column: str = "type", label_column: str = "label") -> None:
    frame = pd.DataFrame(data.features, columns=data.feature_names)
    frame[label_column] = data.labels
    frame[family_column] = data.families
    frame.to_csv(path, index=False, float_format="%.17g")


# ---------------------------------------------------------------------------
# Scaling
# ---------------------------------------------------------------------------


def fit_scale(data: Dataset) -> Dataset:
    """Min-max scale with statistics from ``data`` itself; constant features map to 0."""
    if len(data) == 0:
        raise EmptyDatasetError("cannot fit a scaler on an empty dataset")
    scaler = Scaler(data.features.min(axis=0), data.features.max(axis=0))
    return Dataset(scaler.transform(data.features), data.families, data.feature_names,
                   scaler=scaler)


def apply_scale(data: Dataset, scaler: Scaler | None) -> Dataset:
    if scaler is None:
        raise ScalerMissingError("fit a scaler before applying it")
    if scaler.minimum.shape[0] != data.n_features:
        raise ValueError("scaler width does not match dataset")
    return Dataset(scaler.transform(data.features), data.families, data.feature_names,
                   scaler=scaler)


# ---------------------------------------------------------------------------
# Splitting
# ---------------------------------------------------------------------------


def stratified_order(groups: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Permutation in which every prefix has near-global group proportions.

    Rows are shuffled inside their group and keyed by their fractional
    position within it; sorting by that key interleaves the groups, so any
    prefix of length n holds each group within one row of n * share.
    """
    groups = np.asarray(groups)
    key = np.empty(len(groups))
    for g in np.unique(groups):
        idx = np.flatnonzero(groups == g)
        idx = idx[rng.permutation(idx.size)]
        key[idx] = (np.arange(idx.size) + 0.5) / idx.size
    tiebreak = rng.random(len(groups))
    return np.lexsort((tiebreak, key))


def split_sizes(n: int, fractions: Sequence[float]) -> list[int]:
    """Largest-remainder apportionment of ``n`` rows to ``fractions``."""
    raw = np.asarray(fractions, dtype=np.float64) * n
    sizes = np.floor(raw).astype(int)
    rest = n - sizes.sum()
    order = np.argsort(-(raw - sizes), kind="stable")
    sizes[order[:rest]] += 1
    return sizes.tolist()


def stratified_partition(groups: np.ndarray, fractions: Sequence[float],
                         rng: np.random.Generator) -> list[np.ndarray]:
    order = stratified_order(groups, rng)
    out, start = [], 0
    for size in split_sizes(len(order), fractions):
        out.append(np.sort(order[start:start + size]))
        start += size
    return out


@dataclass
class ZeroDayProtocol:
    withheld_families: tuple[str, ...]
    universal_fraction: float = 0.5
    train_fraction: float = 0.70
    val_fraction: float = 0.15
    test_fraction: float = 0.15

    def __post_init__(self):
        self.withheld_families = tuple(self.withheld_families)
        total = self.train_fraction + self.val_fraction + self.test_fraction
        if abs(total - 1.0) > 1e-9:
            raise ValueError("train/val/test fractions must sum to 1")
        if not 0 < self.universal_fraction < 1:
            raise ValueError("universal_fraction must lie in (0, 1)")
        if BENIGN in self.withheld_families:
            raise ValueError("benign traffic cannot be withheld")


class ZeroDaySplit(NamedTuple):
    universal_train: Dataset
    val: Dataset
    test: Dataset
    zone_reserve: Dataset


def zero_day_split(data: Dataset, protocol: ZeroDayProtocol, seed: int) -> ZeroDaySplit:
    """Universal train/val/test without withheld families, plus the zone reserve.

    The non-withheld rows are split (stratified by family) into the
    universal half and the rest; every withheld row goes to the reserve.
    """
    present = set(np.unique(data.families))
    missing = [f for f in protocol.withheld_families if f not in present]
    if missing:
        raise FamilyNotFoundError(f"withheld families not in data: {missing}")
    rng = np.random.default_rng(seed)
    withheld = np.isin(data.families, protocol.withheld_families)
    known = np.flatnonzero(~withheld)
    uni_pos, rest_pos = stratified_partition(
        data.families[known], [protocol.universal_fraction, 1 - protocol.universal_fraction], rng)
    universal = known[uni_pos]
    reserve = np.sort(np.concatenate([known[rest_pos], np.flatnonzero(withheld)]))
    parts = stratified_partition(
        data.labels[universal],
        [protocol.train_fraction, protocol.val_fraction, protocol.test_fraction], rng)
    train, val, test = (data.take(universal[p]) for p in parts)
    return ZeroDaySplit(train, val, test, data.take(reserve))


def partition_zones(reserve: Dataset, k: int, seed: int) -> list[Dataset]:
    """Deal every family round-robin over ``k`` zones.

    Per-family counts differ by at most one across zones, and the dealing
    offset carries over between families so zone totals stay balanced too.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    rng = np.random.default_rng(seed)
    buckets: list[list[np.ndarray]] = [[] for _ in range(k)]
    start = 0
    for fam in sorted(np.unique(reserve.families)):
        idx = np.flatnonzero(reserve.families == fam)
        idx = idx[rng.permutation(idx.size)]
        zone_of = (start + np.arange(idx.size)) % k
        for z in range(k):
            buckets[z].append(idx[zone_of == z])
        start = (start + idx.size) % k
    return [reserve.take(np.sort(np.concatenate(b))) for b in buckets]


# ---------------------------------------------------------------------------
# Synthetic scenario
# ---------------------------------------------------------------------------


@dataclass
class SyntheticConfig:
    n_features: int = 20
    n_informative: int = 10
    n_benign: int = 6000
    known_families: dict = field(default_factory=lambda: {
        "scanning": 1200, "injection": 1000, "password": 900})
    withheld_families: dict = field(default_factory=lambda: {"ddos": 400, "mitm": 400})
    shift: float = 4.0
    novelty: float = 0.7

    def __post_init__(self):
        if not 1 <= self.n_informative <= self.n_features:
            raise ValueError("need 1 <= n_informative <= n_features")
        if len(self.withheld_families) < 1 or len(self.known_families) < 1:
            raise ValueError("need at least one known and one withheld family")


def make_synthetic(cfg: SyntheticConfig, seed: int) -> Dataset:
    """Benign traffic from a two-component Gaussian mixture; each attack
    family is the benign mixture shifted along its own direction in the
    informative subspace. A withheld family's direction blends a known
    family's direction with an unseen one (weight ``novelty``), so
    supervised models see it only partially.

    Columns get random per-feature scales and offsets so that scaling is
    exercised; uninformative columns are pure noise for every family.
    """
    rng = np.random.default_rng(seed)
    d, k = cfg.n_features, cfg.n_informative

    def unit(v):
        return v / np.linalg.norm(v)

    centres = rng.normal(0.0, 0.7, size=(2, k))
    known = list(cfg.known_families)
    directions = {f: unit(rng.normal(size=k)) for f in known}
    for i, fam in enumerate(cfg.withheld_families):
        base = directions[known[i % len(known)]]
        novel = unit(rng.normal(size=k))
        novel = unit(novel - novel @ base * base)
        directions[fam] = unit((1 - cfg.novelty) * base + cfg.novelty * novel)

    def draw(n, shift_dir):
        comp = rng.integers(0, 2, size=n)
        x = rng.normal(size=(n, d))
        x[:, :k] += centres[comp]
        if shift_dir is not None:
            x[:, :k] += cfg.shift * shift_dir * rng.uniform(0.7, 1.3, size=(n, 1))
        return x

    blocks = [draw(cfg.n_benign, None)]
    fams = [np.full(cfg.n_benign, BENIGN, dtype=object)]
    for fam, n in list(cfg.known_families.items()) + list(cfg.withheld_families.items()):
        blocks.append(draw(n, directions[fam]))
        fams.append(np.full(n, fam, dtype=object))
    x = np.vstack(blocks)
    families = np.concatenate(fams)

    perm_cols = rng.permutation(d)
    x = x[:, perm_cols]
    scales = np.exp(rng.uniform(-1, 3, size=d))
    x = x * scales + rng.uniform(0, 100, size=d)
    rows = rng.permutation(len(x))
    names = [f"f{j:02d}" for j in range(d)]
    ds = Dataset(x[rows], families[rows], names)
    ds.diagnostics = {"informative": sorted(names[j] for j in np.flatnonzero(perm_cols < k))}
    return ds
