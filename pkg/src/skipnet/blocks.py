"""Skip-connectivity block variants over 1-D feature maps.

Four semantics, selected by ``ConnectivityKind``:

* plain     -- conv -> batchnorm -> nonlinearity, nothing else
* residual  -- two-layer stack F, output = nonlin(F(x) + x)
* highway   -- same two-layer stack H, output = H(x)*t + x*(1-t) with a
               sigmoid gate t (scalar per frame by default)
* dense     -- each layer sees the concatenation of all previous feature
               maps (batchnorm -> nonlinearity -> conv, emitting the
               growth rate), closed by a kernel-1 transition

All convolutions use "same" padding (odd kernels), so residual/highway
blocks preserve shape exactly and a dense layer always emits its growth
rate.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .tensor import RunningStats, Tensor


class ConnectivityKind(str, enum.Enum):
    PLAIN = "plain"
    RESIDUAL = "residual"
    HIGHWAY = "highway"
    DENSE = "dense"

    @classmethod
    def parse(cls, value) -> "ConnectivityKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ConfigError("connectivity",
                              f"{value!r} is not one of {[k.value for k in cls]}") from None


@dataclass
class BlockConfig:
    """Shared block hyperparameters; dense/highway extras are optional."""

    channels: int
    kernel_size: int
    layers_per_block: int = 2
    growth_rate: int = 4
    dense_block_depth: int = 7
    gate_bias_init: float = -3.0
    per_channel_gate: bool = False
    nonlinearity: str = "hardtanh"

    def __post_init__(self):
        if self.channels < 1:
            raise ConfigError("channels", f"must be positive, got {self.channels}")
        if self.kernel_size % 2 == 0 or self.kernel_size < 1:
            raise ConfigError("kernel_size", f"must be odd for same padding, got {self.kernel_size}")
        if self.layers_per_block != 2:
            raise ConfigError("layers_per_block", "skip blocks span exactly 2 layers")
        if self.growth_rate < 1:
            raise ConfigError("growth_rate", f"must be >= 1, got {self.growth_rate}")
        if self.dense_block_depth < 1:
            raise ConfigError("dense_block_depth", f"must be >= 1, got {self.dense_block_depth}")
        if self.gate_bias_init >= 0:
            raise ConfigError("gate_bias_init",
                              f"must be negative (carry-biased start), got {self.gate_bias_init}")
        if self.nonlinearity not in T.NONLINEARITIES:
            raise ConfigError("nonlinearity", f"unknown name {self.nonlinearity!r}")


class Layer:
    """Base for parameter-holding layers. Subclasses implement forward."""

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        raise NotImplementedError

    def __call__(self, x: Tensor, training: bool = False) -> Tensor:
        return self.forward(x, training)

    def children(self) -> list[tuple[str, "Layer"]]:
        return []

    def own_parameters(self) -> list[tuple[str, Tensor]]:
        return []

    def own_buffers(self) -> list[tuple[str, np.ndarray]]:
        return []

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, p in self.own_parameters():
            yield prefix + name, p
        for cname, child in self.children():
            yield from child.named_parameters(f"{prefix}{cname}.")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, b in self.own_buffers():
            yield prefix + name, b
        for cname, child in self.children():
            yield from child.named_buffers(f"{prefix}{cname}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def out_length(self, t_len: int) -> int:
        return t_len


class Conv1d(Layer):
    """Time convolution with same padding by default (odd kernels)."""

    def __init__(self, c_in: int, c_out: int, kernel: int, stride: int = 1,
                 rng: np.random.Generator | None = None, zero_init: bool = False):
        self.c_in, self.c_out, self.kernel, self.stride = c_in, c_out, kernel, stride
        if kernel % 2 == 0:
            raise ConfigError("kernel", f"even kernel {kernel} breaks same padding")
        self.padding = (kernel - 1) // 2
        if zero_init:
            w = np.zeros((c_out, c_in, kernel))
        else:
            rng = rng or np.random.default_rng(0)
            bound = float(np.sqrt(1.0 / (c_in * kernel)))
            w = rng.uniform(-bound, bound, size=(c_out, c_in, kernel))
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(c_out), requires_grad=True)

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        return T.conv1d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)

    def own_parameters(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def out_length(self, t_len: int) -> int:
        return T.conv_out_length(t_len, self.kernel, self.stride, self.padding)


class BatchNorm1d(Layer):
    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1):
        self.channels = channels
        self.eps = eps
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.running = RunningStats.for_channels(channels, momentum)

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        return T.batchnorm1d(x, self.gamma, self.beta, self.running,
                             training=training, eps=self.eps)

    def own_parameters(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def own_buffers(self):
        return [("running_mean", self.running.mean), ("running_var", self.running.var)]


class Activation(Layer):
    def __init__(self, name: str):
        if name not in T.NONLINEARITIES:
            raise ConfigError("nonlinearity", f"unknown name {name!r}")
        self.name = name

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        return T.pointwise(self.name, x)


class Sequential(Layer):
    def __init__(self, layers: list[Layer]):
        self.layers = layers

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        for layer in self.layers:
            x = layer(x, training)
        return x

    def children(self):
        return [(str(i), l) for i, l in enumerate(self.layers)]

    def out_length(self, t_len: int) -> int:
        for layer in self.layers:
            t_len = layer.out_length(t_len)
        return t_len


class ConvUnit(Layer):
    """conv -> batchnorm -> nonlinearity; the plain backbone layer."""

    def __init__(self, c_in: int, c_out: int, kernel: int, nonlin: str,
                 stride: int = 1, rng: np.random.Generator | None = None):
        self.conv = Conv1d(c_in, c_out, kernel, stride=stride, rng=rng)
        self.bn = BatchNorm1d(c_out)
        self.act = Activation(nonlin)

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        return self.act(self.bn(self.conv(x, training), training), training)

    def children(self):
        return [("conv", self.conv), ("bn", self.bn), ("act", self.act)]

    def out_length(self, t_len: int) -> int:
        return self.conv.out_length(t_len)


class _TwoLayerStack(Layer):
    """conv -> bn -> nonlin -> conv -> bn; the F of residual blocks and
    the H of highway blocks."""

    def __init__(self, channels: int, kernel: int, nonlin: str,
                 rng: np.random.Generator | None = None, zero_init_last: bool = False):
        self.conv1 = Conv1d(channels, channels, kernel, rng=rng)
        self.bn1 = BatchNorm1d(channels)
        self.act = Activation(nonlin)
        self.conv2 = Conv1d(channels, channels, kernel, rng=rng, zero_init=zero_init_last)
        self.bn2 = BatchNorm1d(channels)

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        h = self.act(self.bn1(self.conv1(x, training), training), training)
        return self.bn2(self.conv2(h, training), training)

    def children(self):
        return [("conv1", self.conv1), ("bn1", self.bn1),
                ("conv2", self.conv2), ("bn2", self.bn2)]


class ResidualBlock(Layer):
    """output = nonlin(F(x) + x), identity skip with no projection."""

    def __init__(self, channels: int, kernel: int, nonlin: str,
                 rng: np.random.Generator | None = None, zero_init_last: bool = False):
        self.channels = channels
        self.body = _TwoLayerStack(channels, kernel, nonlin, rng, zero_init_last)
        self.act = Activation(nonlin)

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        if x.data.shape[0] != self.channels:
            raise ShapeError(f"residual block built for {self.channels} channels, "
                             f"input has {x.data.shape[0]}")
        return self.act(T.add(self.body(x, training), x), training)

    def children(self):
        return [("body", self.body), ("act", self.act)]


class HighwayBlock(Layer):
    """output = H(x)*t + x*(1-t); t = sigmoid(w.x + b) per frame.

    The gate weight starts at zero so the bias alone sets the initial
    carry/transform split; a negative bias biases the block towards
    carrying the input through unchanged.
    """

    def __init__(self, channels: int, kernel: int, nonlin: str,
                 gate_bias: float = -3.0, per_channel_gate: bool = False,
                 rng: np.random.Generator | None = None):
        self.channels = channels
        self.body = _TwoLayerStack(channels, kernel, nonlin, rng)
        gate_rows = channels if per_channel_gate else 1
        self.gate_w = Tensor(np.zeros((gate_rows, channels)), requires_grad=True)
        self.gate_b = Tensor(np.full(gate_rows, float(gate_bias)), requires_grad=True)

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        if x.data.shape[0] != self.channels:
            raise ShapeError(f"highway block built for {self.channels} channels, "
                             f"input has {x.data.shape[0]}")
        h = self.body(x, training)
        gate = T.sigmoid(T.affine(x, self.gate_w, self.gate_b))
        carry = T.shift(T.scale(gate, -1.0), 1.0)
        return T.add(T.mul(h, gate), T.mul(x, carry))

    def children(self):
        return [("body", self.body)]

    def own_parameters(self):
        return [("gate_w", self.gate_w), ("gate_b", self.gate_b)]


class DenseLayer(Layer):
    """bn -> nonlin -> conv over the concatenation of all prior maps."""

    def __init__(self, c_in: int, growth: int, kernel: int, nonlin: str,
                 rng: np.random.Generator | None = None):
        if growth < 1:
            raise ConfigError("growth_rate", f"must be >= 1, got {growth}")
        self.c_in = c_in
        self.growth = growth
        self.bn = BatchNorm1d(c_in)
        self.act = Activation(nonlin)
        self.conv = Conv1d(c_in, growth, kernel, rng=rng)

    def forward_features(self, features: list[Tensor], training: bool = False) -> Tensor:
        x = features[0] if len(features) == 1 else T.concat_channels(features)
        if x.data.shape[0] != self.c_in:
            raise ShapeError(f"dense layer expects {self.c_in} concatenated channels, "
                             f"got {x.data.shape[0]}")
        return self.conv(self.act(self.bn(x, training), training), training)

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        return self.forward_features([x], training)

    def children(self):
        return [("bn", self.bn), ("act", self.act), ("conv", self.conv)]


class DenseBlock(Layer):
    """Stack of dense layers; output is the full concatenation, of width
    c_in + depth * growth."""

    def __init__(self, c_in: int, growth: int, depth: int, kernel: int, nonlin: str,
                 rng: np.random.Generator | None = None):
        self.c_in = c_in
        self.layers = [DenseLayer(c_in + i * growth, growth, kernel, nonlin, rng)
                       for i in range(depth)]
        self.c_out = c_in + depth * growth

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        features = [x]
        for layer in self.layers:
            features.append(layer.forward_features(features, training))
        return T.concat_channels(features)

    def children(self):
        return [(str(i), l) for i, l in enumerate(self.layers)]


class Transition(Layer):
    """Kernel-1 convolution reducing the channel count after a dense block."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator | None = None):
        if c_out > c_in:
            raise ConfigError("transition", f"expects reduction, got {c_in} -> {c_out}")
        self.conv = Conv1d(c_in, c_out, 1, rng=rng)

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        return self.conv(x, training)

    def children(self):
        return [("conv", self.conv)]


def build_block(kind: ConnectivityKind, cfg: BlockConfig,
                rng: np.random.Generator | None = None) -> Layer:
    """One block of the requested connectivity at the given width."""
    kind = ConnectivityKind.parse(kind)
    if kind is ConnectivityKind.PLAIN:
        return Sequential([
            ConvUnit(cfg.channels, cfg.channels, cfg.kernel_size, cfg.nonlinearity, rng=rng)
            for _ in range(cfg.layers_per_block)])
    if kind is ConnectivityKind.RESIDUAL:
        return ResidualBlock(cfg.channels, cfg.kernel_size, cfg.nonlinearity, rng=rng)
    if kind is ConnectivityKind.HIGHWAY:
        return HighwayBlock(cfg.channels, cfg.kernel_size, cfg.nonlinearity,
                            gate_bias=cfg.gate_bias_init,
                            per_channel_gate=cfg.per_channel_gate, rng=rng)
    block = DenseBlock(cfg.channels, cfg.growth_rate, cfg.dense_block_depth,
                       cfg.kernel_size, cfg.nonlinearity, rng=rng)
    return Sequential([block, Transition(block.c_out, cfg.channels, rng=rng)])
