"""Small numpy network substrate with hand-written backward rules.

Activations flow as ``(batch, channels, length)`` arrays through the
convolutional layers and as ``(batch, features)`` arrays through dense
layers. Every layer is a stateless object: parameters and running buffers
live in the owning :class:`Network`, so a network can be snapshotted,
serialized or partially frozen without touching layer code.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import CongruenceError, NonFiniteLossError, ShapeMismatchError

__all__ = [
    "ParameterSet",
    "Layer",
    "Conv1D",
    "Dense",
    "ReLU",
    "Sigmoid",
    "Dropout",
    "MaxPool1D",
    "UpSample1D",
    "Flatten",
    "BatchNorm1D",
    "Network",
    "Gradients",
    "LAYER_KINDS",
    "register_layer",
    "forward",
    "backward",
    "sgd_step",
    "loss_and_grad",
    "glorot_uniform",
]


# --------------------------------------------------------------------------
# Parameter container
# --------------------------------------------------------------------------

_MAGIC = b"ZPS1"


class ParameterSet:
    """Ordered mapping of names to float64 arrays, plus a sample count.

    The sample count is only meaningful when the set travels as a federated
    update, where it carries the size of the local training set.
    """

    def __init__(self, entries: Iterable[tuple[str, np.ndarray]] | dict | None = None,
                 sample_count: int = 0):
        self._entries: dict[str, np.ndarray] = {}
        if entries is not None:
            items = entries.items() if isinstance(entries, dict) else entries
            for name, value in items:
                if name in self._entries:
                    raise ValueError(f"duplicate parameter name {name!r}")
                self._entries[name] = np.asarray(value, dtype=np.float64)
        if sample_count < 0:
            raise ValueError("sample_count must be nonnegative")
        self.sample_count = int(sample_count)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._entries[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        self._entries[name] = np.asarray(value, dtype=np.float64)

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __repr__(self) -> str:
        shapes = ", ".join(f"{k}{tuple(v.shape)}" for k, v in self._entries.items())
        return f"ParameterSet([{shapes}], sample_count={self.sample_count})"

    def names(self) -> list[str]:
        return list(self._entries)

    def items(self):
        return self._entries.items()

    def shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        return [(k, tuple(v.shape)) for k, v in self._entries.items()]

    @property
    def num_params(self) -> int:
        return int(sum(v.size for v in self._entries.values()))

    def copy(self) -> "ParameterSet":
        return ParameterSet([(k, v.copy()) for k, v in self._entries.items()],
                            sample_count=self.sample_count)

    def subset(self, names: Iterable[str]) -> "ParameterSet":
        return ParameterSet([(k, self._entries[k].copy()) for k in names],
                            sample_count=self.sample_count)

    def congruent(self, other: "ParameterSet") -> bool:
        return self.shapes() == other.shapes()

    def check_congruent(self, other: "ParameterSet") -> None:
        if not self.congruent(other):
            raise CongruenceError(
                f"parameter sets are not congruent: {self.shapes()} vs {other.shapes()}")

    def bit_equal(self, other: "ParameterSet") -> bool:
        if not self.congruent(other):
            return False
        return all(np.array_equal(self._entries[k], other[k]) and
                   self._entries[k].tobytes() == other[k].tobytes()
                   for k in self._entries)

    # Serialization: magic, uint32 entry count, uint64 sample count, then per
    # entry uint16 name length, utf-8 name, uint8 ndim, uint32 dims and the
    # values as little-endian float64 in row-major order.
    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(_MAGIC)
        buf.write(struct.pack("<IQ", len(self._entries), self.sample_count))
        for name, value in self._entries.items():
            raw = name.encode("utf-8")
            buf.write(struct.pack("<H", len(raw)))
            buf.write(raw)
            buf.write(struct.pack("<B", value.ndim))
            buf.write(struct.pack(f"<{value.ndim}I", *value.shape))
            buf.write(np.ascontiguousarray(value, dtype="<f8").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "ParameterSet":
        if data[:4] != _MAGIC:
            raise ValueError("not a parameter container")
        pos = 4
        count, sample_count = struct.unpack_from("<IQ", data, pos)
        pos += struct.calcsize("<IQ")
        entries = []
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (ndim,) = struct.unpack_from("<B", data, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", data, pos)
            pos += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            values = np.frombuffer(data, dtype="<f8", count=size, offset=pos)
            pos += 8 * size
            entries.append((name, values.reshape(shape).astype(np.float64)))
        if pos != len(data):
            raise ValueError("trailing bytes in parameter container")
        return cls(entries, sample_count=sample_count)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "ParameterSet":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


# --------------------------------------------------------------------------
# Layers
# --------------------------------------------------------------------------


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Layer:
    """Stateless layer. Subclasses implement shape inference and the pair
    ``forward``/``backward``; the cache returned by ``forward`` is handed
    back to ``backward`` unchanged."""

    kind = "Layer"

    def output_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        return in_shape

    def init_params(self, in_shape, rng) -> dict[str, np.ndarray]:
        return {}

    def init_buffers(self, in_shape) -> dict[str, np.ndarray]:
        return {}

    def forward(self, p, buf, x, training, rng):
        raise NotImplementedError

    def backward(self, p, cache, dy):
        raise NotImplementedError

    def config(self) -> dict:
        return {"kind": self.kind}


class Conv1D(Layer):
    """Stride-1 convolution (cross-correlation) with zero 'same' padding."""

    kind = "Conv1D"

    def __init__(self, filters: int, kernel_size: int = 3):
        if kernel_size < 1:
            raise ValueError("kernel_size must be >= 1")
        if filters < 1:
            raise ValueError("filters must be >= 1")
        self.filters = int(filters)
        self.kernel_size = int(kernel_size)

    @property
    def _pad(self) -> tuple[int, int]:
        left = (self.kernel_size - 1) // 2
        return left, self.kernel_size - 1 - left

    def output_shape(self, in_shape):
        if len(in_shape) != 2:
            raise ShapeMismatchError(f"Conv1D expects (channels, length), got {in_shape}")
        return (self.filters, in_shape[1])

    def init_params(self, in_shape, rng):
        c = in_shape[0]
        k = self.kernel_size
        return {
            "weight": glorot_uniform(rng, (self.filters, c, k), c * k, self.filters * k),
            "bias": np.zeros(self.filters),
        }

    def forward(self, p, buf, x, training, rng):
        w = p["weight"]
        n, c, length = x.shape
        if c != w.shape[1]:
            raise ShapeMismatchError(f"Conv1D expects {w.shape[1]} channels, got {c}")
        left, right = self._pad
        xp = np.pad(x, ((0, 0), (0, 0), (left, right)))
        # (n, c, L, k) -> (n, L, c*k)
        cols = sliding_window_view(xp, self.kernel_size, axis=2)
        cols = cols.transpose(0, 2, 1, 3).reshape(n, length, c * self.kernel_size)
        wm = w.reshape(self.filters, -1)
        y = (cols @ wm.T).transpose(0, 2, 1) + p["bias"][None, :, None]
        return y, (cols, x.shape)

    def backward(self, p, cache, dy):
        cols, (n, c, length) = cache
        k = self.kernel_size
        dyt = dy.transpose(0, 2, 1)  # (n, L, f)
        wm = p["weight"].reshape(self.filters, -1)
        dw = np.tensordot(dyt, cols, axes=([0, 1], [0, 1])).reshape(p["weight"].shape)
        db = dy.sum(axis=(0, 2))
        dcols = (dyt @ wm).reshape(n, length, c, k)
        left, _ = self._pad
        dxp = np.zeros((n, c, length + k - 1))
        for j in range(k):
            dxp[:, :, j:j + length] += dcols[:, :, :, j].transpose(0, 2, 1)
        dx = dxp[:, :, left:left + length]
        return dx, {"weight": dw, "bias": db}

    def config(self):
        return {"kind": self.kind, "filters": self.filters, "kernel_size": self.kernel_size}


class Dense(Layer):
    kind = "Dense"

    def __init__(self, units: int):
        if units < 1:
            raise ValueError("units must be >= 1")
        self.units = int(units)

    def output_shape(self, in_shape):
        if len(in_shape) != 1:
            raise ShapeMismatchError(f"Dense expects a flat input, got {in_shape}")
        return (self.units,)

    def init_params(self, in_shape, rng):
        f = in_shape[0]
        return {
            "weight": glorot_uniform(rng, (f, self.units), f, self.units),
            "bias": np.zeros(self.units),
        }

    def forward(self, p, buf, x, training, rng):
        if x.ndim != 2 or x.shape[1] != p["weight"].shape[0]:
            raise ShapeMismatchError(
                f"Dense expects (batch, {p['weight'].shape[0]}), got {x.shape}")
        return x @ p["weight"] + p["bias"], x

    def backward(self, p, cache, dy):
        x = cache
        return dy @ p["weight"].T, {"weight": x.T @ dy, "bias": dy.sum(axis=0)}

    def config(self):
        return {"kind": self.kind, "units": self.units}


class ReLU(Layer):
    kind = "ReLU"

    def forward(self, p, buf, x, training, rng):
        mask = x > 0
        return x * mask, mask

    def backward(self, p, cache, dy):
        return dy * cache, {}


def _sigmoid(z):
    # exp(-softplus(-z)) never overflows
    return np.exp(-np.logaddexp(0.0, -z))


class Sigmoid(Layer):
    kind = "Sigmoid"

    def forward(self, p, buf, x, training, rng):
        y = _sigmoid(x)
        return y, (x, y)

    def backward(self, p, cache, dy):
        _, y = cache
        return dy * y * (1.0 - y), {}


class Dropout(Layer):
    """Inverted dropout: scaling happens at train time only."""

    kind = "Dropout"

    def __init__(self, rate: float):
        if not 0.0 <= rate < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")
        self.rate = float(rate)

    def forward(self, p, buf, x, training, rng):
        if not training or self.rate == 0.0:
            return x, None
        keep = 1.0 - self.rate
        mask = (rng.random(x.shape) < keep) / keep
        return x * mask, mask

    def backward(self, p, cache, dy):
        if cache is None:
            return dy, {}
        return dy * cache, {}

    def config(self):
        return {"kind": self.kind, "rate": self.rate}


class MaxPool1D(Layer):
    """Non-overlapping max pooling, stride equal to the pool size."""

    kind = "MaxPool1D"

    def __init__(self, pool_size: int = 2):
        if pool_size < 1:
            raise ValueError("pool_size must be >= 1")
        self.pool_size = int(pool_size)

    def output_shape(self, in_shape):
        if len(in_shape) != 2 or in_shape[1] % self.pool_size:
            raise ShapeMismatchError(
                f"MaxPool1D({self.pool_size}) needs a length divisible by the pool, got {in_shape}")
        return (in_shape[0], in_shape[1] // self.pool_size)

    def forward(self, p, buf, x, training, rng):
        n, c, length = x.shape
        s = self.pool_size
        if length % s:
            raise ShapeMismatchError(f"length {length} not divisible by pool {s}")
        g = x.reshape(n, c, length // s, s)
        idx = g.argmax(axis=3)
        y = np.take_along_axis(g, idx[..., None], axis=3)[..., 0]
        return y, (idx, x.shape)

    def backward(self, p, cache, dy):
        idx, (n, c, length) = cache
        s = self.pool_size
        g = np.zeros((n, c, length // s, s))
        np.put_along_axis(g, idx[..., None], dy[..., None], axis=3)
        return g.reshape(n, c, length), {}

    def config(self):
        return {"kind": self.kind, "pool_size": self.pool_size}


class UpSample1D(Layer):
    """Repeats every element ``scale_factor`` times along the length axis."""

    kind = "UpSample1D"

    def __init__(self, scale_factor: int = 2):
        if scale_factor < 1:
            raise ValueError("scale_factor must be >= 1")
        self.scale_factor = int(scale_factor)

    def output_shape(self, in_shape):
        return (in_shape[0], in_shape[1] * self.scale_factor)

    def forward(self, p, buf, x, training, rng):
        return np.repeat(x, self.scale_factor, axis=2), None

    def backward(self, p, cache, dy):
        n, c, length = dy.shape
        s = self.scale_factor
        return dy.reshape(n, c, length // s, s).sum(axis=3), {}

    def config(self):
        return {"kind": self.kind, "scale_factor": self.scale_factor}


class Flatten(Layer):
    kind = "Flatten"

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, p, buf, x, training, rng):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, p, cache, dy):
        return dy.reshape(cache), {}


class BatchNorm1D(Layer):
    """Per-feature (per-channel for 3-D input) standardization.

    Running statistics are exponential moving averages with momentum 0.9.
    ``enabled=False`` turns the layer into an identity with no parameters.
    """

    kind = "BatchNorm1D"
    momentum = 0.9
    eps = 1e-5

    def __init__(self, enabled: bool = True):
        self.enabled = bool(enabled)

    def init_params(self, in_shape, rng):
        if not self.enabled:
            return {}
        c = in_shape[0]
        return {"gamma": np.ones(c), "beta": np.zeros(c)}

    def init_buffers(self, in_shape):
        if not self.enabled:
            return {}
        c = in_shape[0]
        return {"running_mean": np.zeros(c), "running_var": np.ones(c)}

    @staticmethod
    def _axes(x):
        return (0,) if x.ndim == 2 else (0, 2)

    @staticmethod
    def _bc(v, x):
        return v[None, :] if x.ndim == 2 else v[None, :, None]

    def forward(self, p, buf, x, training, rng):
        if not self.enabled:
            return x, None
        axes = self._axes(x)
        if training:
            mu = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = self.momentum
            buf["running_mean"] = m * buf["running_mean"] + (1 - m) * mu
            buf["running_var"] = m * buf["running_var"] + (1 - m) * var
        else:
            mu = buf["running_mean"]
            var = buf["running_var"]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - self._bc(mu, x)) * self._bc(inv_std, x)
        y = xhat * self._bc(p["gamma"], x) + self._bc(p["beta"], x)
        return y, (xhat, inv_std, training, axes)

    def backward(self, p, cache, dy):
        if cache is None:
            return dy, {}
        xhat, inv_std, training, axes = cache
        dgamma = (dy * xhat).sum(axis=axes)
        dbeta = dy.sum(axis=axes)
        dxhat = dy * self._bc(p["gamma"], dy)
        if not training:
            return dxhat * self._bc(inv_std, dy), {"gamma": dgamma, "beta": dbeta}
        m = dy.size // p["gamma"].size
        s1 = self._bc(dxhat.sum(axis=axes), dy)
        s2 = self._bc((dxhat * xhat).sum(axis=axes), dy)
        dx = self._bc(inv_std, dy) / m * (m * dxhat - s1 - xhat * s2)
        return dx, {"gamma": dgamma, "beta": dbeta}

    def config(self):
        return {"kind": self.kind, "enabled": self.enabled}


LAYER_KINDS: dict[str, type] = {}


def register_layer(cls: type) -> type:
    LAYER_KINDS[cls.kind] = cls
    return cls


for _cls in (Conv1D, Dense, ReLU, Sigmoid, Dropout, MaxPool1D, UpSample1D, Flatten, BatchNorm1D):
    register_layer(_cls)


def layer_from_config(cfg: dict) -> Layer:
    cfg = dict(cfg)
    kind = cfg.pop("kind")
    try:
        cls = LAYER_KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown layer kind {kind!r}") from None
    return cls(**cfg)


# --------------------------------------------------------------------------
# Network
# --------------------------------------------------------------------------


class Network:
    """A named sequence of layers plus their parameters.

    ``trainable`` maps each parameter entry to a bool. Layers listed in
    ``eval_layers`` always run in inference mode, which is how a frozen
    backbone keeps its dropout off and its batch-norm statistics fixed.
    """

    def __init__(self, layers: list[tuple[str, Layer]], input_shape: tuple[int, ...],
                 seed: int = 0, params: ParameterSet | None = None,
                 buffers: ParameterSet | None = None):
        names = [n for n, _ in layers]
        if len(set(names)) != len(names):
            raise ValueError("layer names must be unique")
        self.layers = list(layers)
        self.input_shape = tuple(int(s) for s in input_shape)
        self.eval_layers: set[str] = set()

        rng = np.random.default_rng(seed)
        fresh_p, fresh_b = [], []
        self.shapes = [self.input_shape]
        shape = self.input_shape
        for name, layer in self.layers:
            for k, v in layer.init_params(shape, rng).items():
                fresh_p.append((f"{name}.{k}", v))
            for k, v in layer.init_buffers(shape).items():
                fresh_b.append((f"{name}.{k}", v))
            shape = layer.output_shape(shape)
            self.shapes.append(shape)
        self.output_shape = shape

        self.params = ParameterSet(fresh_p)
        self.buffers = ParameterSet(fresh_b)
        if params is not None:
            self.params.check_congruent(params)
            self.params = params.copy()
        if buffers is not None:
            self.buffers.check_congruent(buffers)
            self.buffers = buffers.copy()
        self.trainable = {k: True for k in self.params}

    # -- bookkeeping -------------------------------------------------------
    def layer_params(self, name: str) -> dict[str, np.ndarray]:
        prefix = name + "."
        return {k[len(prefix):]: v for k, v in self.params.items() if k.startswith(prefix)}

    def _layer_buffers(self, name: str) -> dict[str, np.ndarray]:
        prefix = name + "."
        return {k[len(prefix):]: v for k, v in self.buffers.items() if k.startswith(prefix)}

    def freeze(self, names: Iterable[str]) -> None:
        for k in names:
            if k not in self.trainable:
                raise KeyError(k)
            self.trainable[k] = False

    def trainable_names(self) -> list[str]:
        return [k for k in self.params if self.trainable[k]]

    def frozen_names(self) -> list[str]:
        return [k for k in self.params if not self.trainable[k]]

    def copy(self) -> "Network":
        other = Network.__new__(Network)
        other.layers = list(self.layers)
        other.input_shape = self.input_shape
        other.shapes = list(self.shapes)
        other.output_shape = self.output_shape
        other.eval_layers = set(self.eval_layers)
        other.params = self.params.copy()
        other.buffers = self.buffers.copy()
        other.trainable = dict(self.trainable)
        return other

    def describe(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "layers": [dict(name=n, **layer.config()) for n, layer in self.layers],
            "trainable": dict(self.trainable),
            "eval_layers": sorted(self.eval_layers),
        }

    @classmethod
    def from_description(cls, desc: dict, params: ParameterSet,
                         buffers: ParameterSet | None = None) -> "Network":
        layers = []
        for entry in desc["layers"]:
            entry = dict(entry)
            name = entry.pop("name")
            layers.append((name, layer_from_config(entry)))
        net = cls(layers, tuple(desc["input_shape"]), params=params, buffers=buffers)
        for k, v in desc.get("trainable", {}).items():
            net.trainable[k] = bool(v)
        net.eval_layers = set(desc.get("eval_layers", []))
        return net

    # -- passes ------------------------------------------------------------
    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != len(self.input_shape) + 1 or tuple(x.shape[1:]) != self.input_shape:
            raise ShapeMismatchError(
                f"expected batch of shape (N, {', '.join(map(str, self.input_shape))}), got {x.shape}")
        return x

    def run(self, x, training: bool = False, rng=None, stop: str | None = None, keep_cache=False):
        x = self._check_input(x)
        if training and rng is None:
            rng = np.random.default_rng(0)
        caches = []
        for name, layer in self.layers:
            mode = training and name not in self.eval_layers
            buf = self._layer_buffers(name)
            x, cache = layer.forward(self.layer_params(name), buf, x, mode, rng)
            for k, v in buf.items():
                self.buffers[f"{name}.{k}"] = v
            if keep_cache:
                caches.append(cache)
            if not np.all(np.isfinite(x)):
                raise FloatingPointError(f"non-finite activation after layer {name}")
            if name == stop:
                break
        return (x, caches) if keep_cache else x


@dataclass
class Gradients:
    loss: float
    params: ParameterSet
    input: np.ndarray


def forward(net: Network, batch, training: bool = False, rng=None) -> np.ndarray:
    return net.run(batch, training=training, rng=rng)


def loss_and_grad(kind: str, out: np.ndarray, targets: np.ndarray,
                  weights: np.ndarray | None = None) -> tuple[float, np.ndarray]:
    """Loss value and its gradient with respect to ``out``.

    For ``"bce"`` the weights are per-sample and the loss is their weighted
    mean; for ``"mse"`` they are an elementwise mask and the mean runs over
    the unmasked elements only.
    """
    out = np.asarray(out, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if out.shape != targets.shape:
        raise ShapeMismatchError(f"targets {targets.shape} do not match outputs {out.shape}")
    if kind == "mse":
        mask = np.ones_like(out) if weights is None else np.broadcast_to(weights, out.shape)
        n = mask.sum()
        diff = out - targets
        loss = float((mask * diff * diff).sum() / n)
        grad = 2.0 * mask * diff / n
    elif kind == "bce":
        n = out.shape[0]
        w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
        w = w.reshape((n,) + (1,) * (out.ndim - 1))
        p = np.clip(out, 1e-12, 1 - 1e-12)
        per = -(targets * np.log(p) + (1 - targets) * np.log(1 - p))
        loss = float((w * per).sum() / n)
        grad = w * (p - targets) / (p * (1 - p)) / n
    else:
        raise ValueError(f"unknown loss {kind!r}")
    if not math.isfinite(loss):
        raise NonFiniteLossError(f"{kind} loss is not finite")
    return loss, grad


def backward(net: Network, batch, targets, loss: str = "bce", weights=None,
             training: bool = True, rng=None) -> Gradients:
    """Forward pass in the given mode followed by the backward pass.

    A trailing Sigmoid combined with BCE is differentiated through the logits,
    which keeps the gradient finite when probabilities saturate.
    """
    if loss not in ("bce", "mse"):
        raise ValueError(f"unknown loss {loss!r}")
    try:
        out, caches = net.run(batch, training=training, rng=rng, keep_cache=True)
    except FloatingPointError as exc:
        raise NonFiniteLossError(str(exc)) from exc
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != out.shape:
        raise ShapeMismatchError(f"targets {targets.shape} do not match outputs {out.shape}")

    layers = net.layers
    fused = loss == "bce" and layers and isinstance(layers[-1][1], Sigmoid)
    if fused:
        z = caches[-1][0]
        n = z.shape[0]
        w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
        w = w.reshape((n,) + (1,) * (z.ndim - 1))
        # softplus(z) - t*z == -[t log p + (1-t) log(1-p)]
        per = np.logaddexp(0.0, z) - targets * z
        value = float((w * per).sum() / n)
        if not math.isfinite(value):
            raise NonFiniteLossError("bce loss is not finite")
        dy = w * (out - targets) / n
        stop = len(layers) - 1
    else:
        value, dy = loss_and_grad(loss, out, targets, weights)
        stop = len(layers)

    grads: dict[str, np.ndarray] = {}
    for i in range(stop - 1, -1, -1):
        name, layer = layers[i]
        dy, g = layer.backward(net.layer_params(name), caches[i], dy)
        for k, v in g.items():
            full = f"{name}.{k}"
            if net.trainable[full]:
                grads[full] = v
    ordered = ParameterSet([(k, grads[k]) for k in net.trainable_names()])
    return Gradients(loss=value, params=ordered, input=dy)


def sgd_step(net: Network, grads: ParameterSet | Gradients, learning_rate: float) -> Network:
    """In-place update ``w <- w - lr * g`` of the trainable entries."""
    if isinstance(grads, Gradients):
        grads = grads.params
    if learning_rate < 0:
        raise ValueError("learning_rate must be nonnegative")
    for k in grads:
        if k not in net.params:
            raise CongruenceError(f"gradient for unknown entry {k!r}")
        if grads[k].shape != net.params[k].shape:
            raise CongruenceError(f"gradient shape mismatch for {k!r}")
    for k in grads:
        if net.trainable[k]:
            net.params[k] = net.params[k] - learning_rate * grads[k]
    return net


def numeric_gradient(f: Callable[[], float], array: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of ``f`` with respect to ``array`` (mutated and restored)."""
    grad = np.zeros_like(array)
    flat = array.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        g[i] = (fp - fm) / (2 * h)
    return grad
