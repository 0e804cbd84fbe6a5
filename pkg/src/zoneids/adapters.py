"""Zone-local models: a frozen universal backbone with trainable adapters and head."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import nn
from .data import Dataset
from .errors import CongruenceError
from .models import (
    PREDICT_CHUNK,
    TrainConfig,
    TrainingLog,
    UniversalModel,
    balanced_weights,
    bce,
    binary_f1,
    fit,
    load_network,
    save_network,
    scaled,
)


@nn.register_layer
class Adapter(nn.Layer):
    """Bottleneck residual block: ``x + up(relu(down(x)))`` with 1x1 convolutions.

    ``up`` starts at zero, so a fresh block is exactly the identity.
    """

    kind = "Adapter"

    def __init__(self, reduction: int = 4):
        if reduction < 2:
            raise ValueError("reduction must be >= 2")
        self.reduction = int(reduction)

    def bottleneck(self, channels: int) -> int:
        return max(1, channels // self.reduction)

    def output_shape(self, in_shape):
        if len(in_shape) != 2:
            raise ValueError("Adapter expects (channels, length)")
        return in_shape

    def init_params(self, in_shape, rng):
        c = in_shape[0]
        b = self.bottleneck(c)
        return {
            "down.weight": nn.glorot_uniform(rng, (b, c, 1), c, b),
            "down.bias": np.zeros(b),
            "up.weight": np.zeros((c, b, 1)),
            "up.bias": np.zeros(c),
        }

    @staticmethod
    def _split(p, prefix):
        return {"weight": p[f"{prefix}.weight"], "bias": p[f"{prefix}.bias"]}

    def forward(self, p, buf, x, training, rng):
        down = nn.Conv1D(p["down.weight"].shape[0], 1)
        up = nn.Conv1D(p["up.weight"].shape[0], 1)
        h, c_down = down.forward(self._split(p, "down"), {}, x, training, rng)
        mask = h > 0
        u, c_up = up.forward(self._split(p, "up"), {}, h * mask, training, rng)
        return x + u, (down, up, c_down, mask, c_up)

    def backward(self, p, cache, dy):
        down, up, c_down, mask, c_up = cache
        da, g_up = up.backward(self._split(p, "up"), c_up, dy)
        dx_down, g_down = down.backward(self._split(p, "down"), c_down, da * mask)
        grads = {f"up.{k}": v for k, v in g_up.items()}
        grads.update({f"down.{k}": v for k, v in g_down.items()})
        return dy + dx_down, grads

    def config(self):
        return {"kind": self.kind, "reduction": self.reduction}


@dataclass
class ZoneModel:
    net: nn.Network
    input_width: int
    reduction: int = 4
    aggregate_head: bool = True

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        out = [self.net.run(x[i:i + PREDICT_CHUNK, None, :])[:, 0]
               for i in range(0, len(x), PREDICT_CHUNK)]
        return np.concatenate(out) if out else np.zeros(0)

    def conv_features(self, x: np.ndarray) -> np.ndarray:
        return self.net.run(np.asarray(x, dtype=np.float64)[:, None, :], stop="adapter3")

    def backbone_names(self) -> list[str]:
        return self.net.frozen_names()

    def trainable_names(self) -> list[str]:
        return self.net.trainable_names()

    def shared_names(self) -> list[str]:
        names = self.trainable_names()
        if not self.aggregate_head:
            names = [n for n in names if n.startswith("adapter")]
        return names

    def backbone_params(self) -> nn.ParameterSet:
        return self.net.params.subset(self.backbone_names())

    def copy(self) -> "ZoneModel":
        return ZoneModel(self.net.copy(), self.input_width, self.reduction, self.aggregate_head)


def attach_adapters(universal: UniversalModel, reduction: int = 4, seed: int = 0,
                    aggregate_head: bool = True) -> ZoneModel:
    """Copy the universal conv stages (frozen, always in inference mode), put
    an adapter after each stage and finish with a fresh Dense+ReLU, Dense+Sigmoid
    head that replaces the universal dense stack."""
    src = dict(universal.net.layers)
    stages = [n for n in universal.conv_stages if n in src]
    if not stages:
        raise ValueError("universal model has no convolutional stage")
    layers: list[tuple[str, nn.Layer]] = []
    backbone_layers = []
    for i in range(1, len(stages) + 1):
        for base in (f"conv{i}", f"bn{i}", f"relu{i}", f"drop{i}"):
            layers.append((f"backbone.{base}", src[base]))
            backbone_layers.append(base)
        layers.append((f"adapter{i}", Adapter(reduction)))
    layers += [
        ("flatten", nn.Flatten()),
        ("head.dense", nn.Dense(scaled(16, universal.scale))),
        ("head.relu", nn.ReLU()),
        ("head.out", nn.Dense(1)),
        ("head.sigmoid", nn.Sigmoid()),
    ]
    net = nn.Network(layers, (1, universal.input_width), seed=seed)
    for store, source in ((net.params, universal.net.params), (net.buffers, universal.net.buffers)):
        for base in backbone_layers:
            for k, v in source.items():
                if k.startswith(base + "."):
                    store[f"backbone.{k}"] = v.copy()
    net.freeze([k for k in net.params if k.startswith("backbone.")])
    net.eval_layers = {f"backbone.{b}" for b in backbone_layers}
    return ZoneModel(net, universal.input_width, reduction, aggregate_head)


def parameter_ratio(zone: ZoneModel, universal: UniversalModel) -> float:
    """Trainable (adapter + head) parameters over all universal parameters."""
    trainable = sum(zone.net.params[k].size for k in zone.trainable_names())
    return trainable / universal.net.params.num_params


def adapter_epochs(universal_epochs: int) -> int:
    return math.ceil(universal_epochs / 3)


def train_zone(zone: ZoneModel, data: Dataset, cfg: TrainConfig, val: Dataset | None = None,
               labels: np.ndarray | None = None,
               withheld: tuple[str, ...] = ()) -> tuple[ZoneModel, TrainingLog]:
    """Train adapters and head with weighted BCE. ``labels`` overrides the
    dataset labels (pseudo-labels). With ``val`` the best-F1 epoch is kept."""
    if withheld:
        leaked = np.isin(data.families, withheld)
        if leaked.any():
            raise ValueError(f"{int(leaked.sum())} withheld-family rows reached adapter training")
    y = data.labels if labels is None else np.asarray(labels)
    evaluate = None
    if val is not None and len(val):
        def evaluate(net):
            p = ZoneModel(net, zone.input_width).predict_proba(val.features)
            return bce(p, val.labels), binary_f1(val.labels, p >= 0.5)
    if len(y) == 0 or cfg.epochs == 0:
        return zone, TrainingLog()
    tlog = fit(zone.net, data.features[:, None, :], y.astype(np.float64)[:, None], "bce", cfg,
               weights=balanced_weights(y), evaluate=evaluate)
    return zone, tlog


def init_adapter_training(zone: ZoneModel, data: Dataset, cfg: TrainConfig,
                          val: Dataset | None = None,
                          withheld: tuple[str, ...] = ()) -> tuple[ZoneModel, TrainingLog]:
    return train_zone(zone, data, cfg, val=val, withheld=withheld)


def extract_shared(zone: ZoneModel, sample_count: int) -> nn.ParameterSet:
    return nn.ParameterSet(
        [(k, zone.net.params[k].copy()) for k in zone.shared_names()], sample_count=sample_count)


def load_shared(zone: ZoneModel, shared: nn.ParameterSet) -> ZoneModel:
    expected = zone.net.params.subset(zone.shared_names())
    if not expected.congruent(shared):
        raise CongruenceError(
            f"shared set does not fit this zone model: {shared.shapes()} vs {expected.shapes()}")
    for k in shared:
        zone.net.params[k] = shared[k].copy()
    return zone


def save_zone(zone: ZoneModel, directory) -> None:
    save_network(zone.net, directory, {"model": "zone", "input_width": zone.input_width,
                                       "reduction": zone.reduction,
                                       "aggregate_head": zone.aggregate_head})


def load_zone(directory) -> ZoneModel:
    net, meta = load_network(directory)
    return ZoneModel(net, meta["input_width"], meta["reduction"], meta["aggregate_head"])
