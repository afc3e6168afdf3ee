"""Fully-convolutional acoustic backbone with swappable connectivity.

Layout, identical for every connectivity kind:

    stride layer (conv, stride s) -> 7 identical body layers -> head

The body is where the connectivity differs: plain keeps the 7 layers
sequential; residual/highway leave the first body layer plain and wrap
the remaining 6 into three 2-layer blocks; dense replaces the body with
one densely-connected block of the same layer count plus a kernel-1
transition back to the backbone width. The head (a large-kernel layer
and a kernel-1 layer emitting alphabet+blank channels, then log-softmax)
is identical everywhere, so output shapes match across variants and the
residual variant's parameter count equals the plain one exactly.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .blocks import (BatchNorm1d, Conv1d, ConnectivityKind, ConvUnit, DenseBlock,
                     HighwayBlock, Layer, ResidualBlock, Sequential, Transition)
from .errors import ConfigError, ShapeError, UtteranceTooShortError
from .tensor import Tensor


@dataclass
class ModelConfig:
    connectivity: str = "plain"
    input_features: int = 257
    width: int = 32
    body_layers: int = 7
    body_kernel: int = 5
    stride_kernel: int = 7
    stride: int = 2
    head_kernel: int = 15
    alphabet_size: int = 26
    nonlinearity: str = "hardtanh"
    growth_rate: int | None = None
    gate_bias_init: float = -3.0
    per_channel_gate: bool = False

    def __post_init__(self):
        self.connectivity = ConnectivityKind.parse(self.connectivity).value
        for name in ("input_features", "width", "body_layers", "alphabet_size"):
            if getattr(self, name) < 1:
                raise ConfigError(name, f"must be positive, got {getattr(self, name)}")
        for name in ("body_kernel", "stride_kernel", "head_kernel"):
            k = getattr(self, name)
            if k < 1 or k % 2 == 0:
                raise ConfigError(name, f"must be odd and positive, got {k}")
        if self.stride < 1:
            raise ConfigError("stride", f"must be >= 1, got {self.stride}")
        if self.nonlinearity not in T.NONLINEARITIES:
            raise ConfigError("nonlinearity", f"unknown name {self.nonlinearity!r}")
        if self.growth_rate is None:
            self.growth_rate = max(1, self.width // 4)
        if self.growth_rate < 1:
            raise ConfigError("growth_rate", f"must be >= 1, got {self.growth_rate}")
        if self.gate_bias_init >= 0:
            raise ConfigError("gate_bias_init",
                              f"must be negative, got {self.gate_bias_init}")

    @property
    def num_classes(self) -> int:
        return self.alphabet_size + 1


class AcousticModel(Layer):
    """Maps feature frames [F, T] to per-frame label log-probs [A+1, T']."""

    def __init__(self, config: ModelConfig, stem: Layer, body: Layer, head: Layer):
        self.config = config
        self.stem = stem
        self.body = body
        self.head = head

    def children(self):
        return [("stem", self.stem), ("body", self.body), ("head", self.head)]

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        if x.data.ndim != 2 or x.data.shape[0] != self.config.input_features:
            raise ShapeError(f"expected [{self.config.input_features}, T] features, "
                             f"got {x.data.shape}")
        self.output_length(x.data.shape[1])  # raises UtteranceTooShortError early
        h = self.stem(x, training)
        h = self.body(h, training)
        h = self.head(h, training)
        return T.log_softmax(h)

    def output_length(self, t_len: int) -> int:
        if t_len < 1:
            raise UtteranceTooShortError(f"utterance too short: {t_len} frames")
        t_len = self.stem.out_length(t_len)
        t_len = self.body.out_length(t_len)
        return self.head.out_length(t_len)


def build_model(config: ModelConfig, seed: int = 0) -> AcousticModel:
    rng = np.random.default_rng(seed)
    kind = ConnectivityKind(config.connectivity)
    c, k, nl = config.width, config.body_kernel, config.nonlinearity

    stem = ConvUnit(config.input_features, c, config.stride_kernel, nl,
                    stride=config.stride, rng=rng)

    layers: list[Layer] = []
    if kind in (ConnectivityKind.PLAIN,):
        layers = [ConvUnit(c, c, k, nl, rng=rng) for _ in range(config.body_layers)]
    elif kind in (ConnectivityKind.RESIDUAL, ConnectivityKind.HIGHWAY):
        n = config.body_layers
        if n % 2 == 1:  # 7 layers cannot tile into 2-layer blocks; first stays plain
            layers.append(ConvUnit(c, c, k, nl, rng=rng))
            n -= 1
        for _ in range(n // 2):
            if kind is ConnectivityKind.RESIDUAL:
                layers.append(ResidualBlock(c, k, nl, rng=rng))
            else:
                layers.append(HighwayBlock(c, k, nl, gate_bias=config.gate_bias_init,
                                           per_channel_gate=config.per_channel_gate,
                                           rng=rng))
    else:
        block = DenseBlock(c, config.growth_rate, config.body_layers, k, nl, rng=rng)
        layers = [block, Transition(block.c_out, c, rng=rng)]
    body = Sequential(layers)

    head = Sequential([
        ConvUnit(c, c, config.head_kernel, nl, rng=rng),
        Conv1d(c, config.num_classes, 1, rng=rng),
    ])
    return AcousticModel(config, stem, body, head)


# ---------------------------------------------------------------------------
# checkpoint format: header JSON + flat (name, shape, float64 LE) records
# ---------------------------------------------------------------------------

_MAGIC = b"SKCP"
_VERSION = 1


def _state_records(model: AcousticModel) -> list[tuple[str, np.ndarray]]:
    records = [(name, p.data) for name, p in model.named_parameters()]
    records += [(name, b) for name, b in model.named_buffers()]
    return records


def save_checkpoint(path, model: AcousticModel, meta: dict | None = None) -> None:
    header = {
        "format": "skipnet-checkpoint",
        "model_config": dataclasses.asdict(model.config),
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    records = _state_records(model)
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<II", _VERSION, len(blob)))
        f.write(blob)
        f.write(struct.pack("<I", len(records)))
        for name, arr in records:
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[AcousticModel, dict]:
    """Rebuild the model and restore every record, validating shapes."""
    try:
        return _load_checkpoint(path)
    except (struct.error, json.JSONDecodeError) as e:
        raise ValueError(f"{path}: corrupt checkpoint ({e})") from None


def _load_checkpoint(path) -> tuple[AcousticModel, dict]:
    with open(path, "rb") as f:
        if f.read(4) != _MAGIC:
            raise ValueError(f"{path}: not a skipnet checkpoint")
        version, header_len = struct.unpack("<II", f.read(8))
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(f.read(header_len).decode("utf-8"))
        config = ModelConfig(**header["model_config"])
        model = build_model(config)
        slots = dict(_state_records(model))
        (n_records,) = struct.unpack("<I", f.read(4))
        seen = set()
        for _ in range(n_records):
            (name_len,) = struct.unpack("<H", f.read(2))
            name = f.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", f.read(1))
            shape = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
            data = np.frombuffer(f.read(8 * int(np.prod(shape, dtype=np.int64))),
                                 dtype="<f8").reshape(shape)
            if name not in slots:
                raise ValueError(f"{path}: unexpected record {name!r}")
            if slots[name].shape != data.shape:
                raise ValueError(f"{path}: record {name!r} has shape {data.shape}, "
                                 f"model expects {slots[name].shape}")
            slots[name][...] = data
            seen.add(name)
        missing = set(slots) - seen
        if missing:
            raise ValueError(f"{path}: records missing for {sorted(missing)}")
    for _, bn in _batchnorms(model):
        bn.running.initialized = True
    return model, header.get("meta", {})


def _batchnorms(layer: Layer, prefix: str = ""):
    if isinstance(layer, BatchNorm1d):
        yield prefix, layer
    for name, child in layer.children():
        yield from _batchnorms(child, f"{prefix}{name}.")
