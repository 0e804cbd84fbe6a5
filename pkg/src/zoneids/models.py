"""Universal CNN classifier, convolutional autoencoder and their training loops."""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import nn
from .data import Dataset
from .errors import NonFiniteLossError, ShapeMismatchError, SingleClassError

log = logging.getLogger(__name__)

PREDICT_CHUNK = 4096


def scaled(n: int, scale: float) -> int:
    return max(2, math.ceil(n * scale))


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 128
    learning_rate: float = 1e-3
    checkpoint_metric: str = "val_f1"
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.checkpoint_metric not in ("val_f1", "val_loss"):
            raise ValueError("checkpoint_metric must be 'val_f1' or 'val_loss'")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float | None = None
    val_f1: float | None = None


@dataclass
class TrainingLog:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    aborted: bool = False

    def rows(self) -> list[dict]:
        return [asdict(r) | {"best": r.epoch == self.best_epoch} for r in self.records]


def _snapshot(net: nn.Network):
    return net.params.copy(), net.buffers.copy()


def _restore(net: nn.Network, snap) -> None:
    net.params, net.buffers = snap[0].copy(), snap[1].copy()


def fit(net: nn.Network, x: np.ndarray, targets: np.ndarray, loss: str, cfg: TrainConfig,
        weights: np.ndarray | None = None, mask: np.ndarray | None = None,
        evaluate: Callable[[nn.Network], tuple[float, float | None]] | None = None,
        ) -> TrainingLog:
    """Mini-batch SGD; keeps the best epoch according to ``evaluate``.

    ``weights`` are per-sample (BCE); ``mask`` is an elementwise MSE mask
    broadcast over every batch. ``evaluate`` returns ``(val_loss, val_f1)``. With ``val_f1`` as the
    criterion the best epoch has the highest F1, ties going to the lower
    loss. Without ``evaluate`` the final epoch is kept. A non-finite loss
    stops training and restores the best state seen so far (or the initial
    state if no epoch completed).
    """
    rng = np.random.default_rng(cfg.seed)
    tlog = TrainingLog()
    initial = _snapshot(net)
    best, best_key = None, None
    n = len(x)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        total, seen = 0.0, 0
        try:
            for start in range(0, n, cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                w = mask if weights is None else weights[idx]
                g = nn.backward(net, x[idx], targets[idx], loss, weights=w, rng=rng)
                nn.sgd_step(net, g.params, cfg.learning_rate)
                total += g.loss * len(idx)
                seen += len(idx)
        except NonFiniteLossError:
            log.warning("non-finite loss at epoch %d; restoring last finite checkpoint", epoch)
            tlog.aborted = True
            _restore(net, best if best is not None else initial)
            return tlog
        rec = EpochRecord(epoch, total / max(seen, 1))
        if evaluate is not None:
            rec.val_loss, rec.val_f1 = evaluate(net)
            if cfg.checkpoint_metric == "val_f1" and rec.val_f1 is not None:
                key = (rec.val_f1, -rec.val_loss)
            else:
                key = (-rec.val_loss,)
            if best_key is None or key > best_key:
                best_key, best = key, _snapshot(net)
                tlog.best_epoch = epoch
        else:
            tlog.best_epoch = epoch
        tlog.records.append(rec)
    if best is not None:
        _restore(net, best)
    return tlog


def balanced_weights(labels: np.ndarray) -> np.ndarray:
    """Inverse class-frequency sample weights with mean one."""
    labels = np.asarray(labels)
    classes, counts = np.unique(labels, return_counts=True)
    if classes.size < 2:
        return np.ones(len(labels))
    per_class = len(labels) / (classes.size * counts)
    return per_class[np.searchsorted(classes, labels)]


def binary_f1(y_true, y_pred) -> float:
    y_true = np.asarray(y_true).astype(bool)
    y_pred = np.asarray(y_pred).astype(bool)
    tp = np.sum(y_true & y_pred)
    fp = np.sum(~y_true & y_pred)
    fn = np.sum(y_true & ~y_pred)
    return 0.0 if tp == 0 else float(2 * tp / (2 * tp + fp + fn))


def bce(p, y) -> float:
    p = np.clip(p, 1e-12, 1 - 1e-12)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


# ---------------------------------------------------------------------------
# Universal classifier
# ---------------------------------------------------------------------------


@dataclass
class UniversalModel:
    net: nn.Network
    input_width: int
    scale: float = 1.0

    # Layer names of the convolutional stages, in order.
    conv_stages = ("conv1", "conv2", "conv3")

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        out = [self.net.run(x[i:i + PREDICT_CHUNK, None, :])[:, 0]
               for i in range(0, len(x), PREDICT_CHUNK)]
        return np.concatenate(out) if out else np.zeros(0)

    def conv_features(self, x: np.ndarray) -> np.ndarray:
        return self.net.run(np.asarray(x, dtype=np.float64)[:, None, :], stop="drop3")


def build_universal(input_width: int, scale: float = 1.0, seed: int = 0,
                    batch_norm: bool = True) -> UniversalModel:
    """Three Conv+BatchNorm+ReLU+Dropout stages (64, 32, 16 filters, kernel 3),
    then dense 256, 64, 16 and a single sigmoid unit. ``scale`` shrinks every
    width except the output unit."""
    if input_width < 4:
        raise ValueError("input_width must be >= 4")
    if not 0 < scale <= 1:
        raise ValueError("scale must lie in (0, 1]")
    layers: list[tuple[str, nn.Layer]] = []
    for i, f in enumerate((64, 32, 16), start=1):
        layers += [
            (f"conv{i}", nn.Conv1D(scaled(f, scale), 3)),
            (f"bn{i}", nn.BatchNorm1D(batch_norm)),
            (f"relu{i}", nn.ReLU()),
            (f"drop{i}", nn.Dropout(0.2)),
        ]
    layers.append(("flatten", nn.Flatten()))
    for i, u in enumerate((256, 64, 16), start=1):
        layers += [(f"dense{i}", nn.Dense(scaled(u, scale))), (f"dense{i}_relu", nn.ReLU())]
    layers += [("out", nn.Dense(1)), ("sigmoid", nn.Sigmoid())]
    return UniversalModel(nn.Network(layers, (1, input_width), seed=seed), input_width, scale)


def _require_two_classes(labels) -> None:
    if np.unique(labels).size < 2:
        raise SingleClassError("training data must contain both classes")


def train_universal(model: UniversalModel, train: Dataset, val: Dataset,
                    cfg: TrainConfig) -> tuple[UniversalModel, TrainingLog]:
    _require_two_classes(train.labels)
    x = train.features[:, None, :]
    y = train.labels.astype(np.float64)[:, None]

    def evaluate(net):
        p = UniversalModel(net, model.input_width).predict_proba(val.features)
        return bce(p, val.labels), binary_f1(val.labels, p >= 0.5)

    tlog = fit(model.net, x, y, "bce", cfg, weights=balanced_weights(train.labels),
               evaluate=evaluate if len(val) else None)
    return model, tlog


# ---------------------------------------------------------------------------
# Autoencoder
# ---------------------------------------------------------------------------


@dataclass
class AutoencoderModel:
    net: nn.Network
    input_width: int
    padded_width: int
    scale: float = 1.0

    def _pad(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        extra = self.padded_width - self.input_width
        if x.ndim != 2 or x.shape[1] != self.input_width:
            raise ShapeMismatchError(f"expected (N, {self.input_width}), got {x.shape}")
        return np.pad(x, ((0, 0), (0, extra)))[:, None, :]

    @property
    def mask(self) -> np.ndarray:
        m = np.zeros((1, 1, self.padded_width))
        m[..., :self.input_width] = 1.0
        return m

    def reconstruct(self, x: np.ndarray) -> np.ndarray:
        xp = self._pad(x)
        out = [self.net.run(xp[i:i + PREDICT_CHUNK])[:, 0, :self.input_width]
               for i in range(0, len(xp), PREDICT_CHUNK)]
        return np.concatenate(out) if out else np.zeros((0, self.input_width))

    def errors(self, x: np.ndarray) -> np.ndarray:
        """Per-sample mean squared error over the unpadded positions."""
        x = np.asarray(x, dtype=np.float64)
        return np.mean((self.reconstruct(x) - x) ** 2, axis=1)


def build_autoencoder(input_width: int, scale: float = 1.0, seed: int = 0) -> AutoencoderModel:
    """Conv(16)+Pool, Conv(32)+Pool, Conv(64) bottleneck, Up+Conv(32),
    Up+Conv(16), then a linear Conv(1) projection; kernel 3 and dropout 0.2
    after each conv block. Widths not divisible by 4 are zero-padded."""
    if input_width < 1:
        raise ValueError("input_width must be positive")
    padded = -(-input_width // 4) * 4
    s = lambda f: scaled(f, scale)  # noqa: E731
    layers = [
        ("enc1", nn.Conv1D(s(16), 3)), ("enc1_relu", nn.ReLU()), ("pool1", nn.MaxPool1D(2)),
        ("enc1_drop", nn.Dropout(0.2)),
        ("enc2", nn.Conv1D(s(32), 3)), ("enc2_relu", nn.ReLU()), ("pool2", nn.MaxPool1D(2)),
        ("enc2_drop", nn.Dropout(0.2)),
        ("bottleneck", nn.Conv1D(s(64), 3)), ("bottleneck_relu", nn.ReLU()),
        ("bottleneck_drop", nn.Dropout(0.2)),
        ("up1", nn.UpSample1D(2)), ("dec1", nn.Conv1D(s(32), 3)), ("dec1_relu", nn.ReLU()),
        ("dec1_drop", nn.Dropout(0.2)),
        ("up2", nn.UpSample1D(2)), ("dec2", nn.Conv1D(s(16), 3)), ("dec2_relu", nn.ReLU()),
        ("dec2_drop", nn.Dropout(0.2)),
        ("project", nn.Conv1D(1, 3)),
    ]
    net = nn.Network(layers, (1, padded), seed=seed)
    return AutoencoderModel(net, input_width, padded, scale)


def train_autoencoder(model: AutoencoderModel, normal_only: Dataset, cfg: TrainConfig,
                      val: Dataset | None = None) -> tuple[AutoencoderModel, TrainingLog]:
    """MSE reconstruction training on normal rows; keeps the best validation
    loss. Without ``val`` the training loss on ``normal_only`` is used."""
    if np.any(normal_only.labels != 0):
        raise ValueError("autoencoder training data must contain normal rows only")
    xp = model._pad(normal_only.features)
    check = normal_only if val is None or len(val) == 0 else val

    def evaluate(net):
        errs = AutoencoderModel(net, model.input_width, model.padded_width).errors(check.features)
        return float(errs.mean()), None

    run_cfg = TrainConfig(cfg.epochs, cfg.batch_size, cfg.learning_rate, "val_loss", cfg.seed)
    tlog = fit(model.net, xp, xp, "mse", run_cfg, mask=model.mask, evaluate=evaluate)
    return model, tlog


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_network(net: nn.Network, directory, meta: dict | None = None) -> None:
    os.makedirs(directory, exist_ok=True)
    desc = net.describe()
    desc["meta"] = meta or {}
    with open(os.path.join(directory, "architecture.json"), "w") as fh:
        json.dump(desc, fh, indent=2, sort_keys=True)
    net.params.save(os.path.join(directory, "params.zps"))
    net.buffers.save(os.path.join(directory, "buffers.zps"))


def load_network(directory) -> tuple[nn.Network, dict]:
    with open(os.path.join(directory, "architecture.json")) as fh:
        desc = json.load(fh)
    params = nn.ParameterSet.load(os.path.join(directory, "params.zps"))
    buffers = nn.ParameterSet.load(os.path.join(directory, "buffers.zps"))
    return nn.Network.from_description(desc, params, buffers), desc.get("meta", {})


def save_universal(model: UniversalModel, directory) -> None:
    save_network(model.net, directory, {"model": "universal", "input_width": model.input_width,
                                        "scale": model.scale})


def load_universal(directory) -> UniversalModel:
    net, meta = load_network(directory)
    return UniversalModel(net, meta["input_width"], meta["scale"])


def save_autoencoder(model: AutoencoderModel, directory) -> None:
    save_network(model.net, directory, {"model": "autoencoder", "input_width": model.input_width,
                                        "padded_width": model.padded_width, "scale": model.scale})


def load_autoencoder(directory) -> AutoencoderModel:
    net, meta = load_network(directory)
    return AutoencoderModel(net, meta["input_width"], meta["padded_width"], meta["scale"])
