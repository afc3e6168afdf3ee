"""Dense float64 tensors with reverse-mode automatic differentiation.

Implements exactly the operation set a 1-D convolutional CTC backbone
needs: conv1d, batch norm, a few pointwise nonlinearities, channel
concatenation, per-frame affine maps, log-softmax and reductions.

Every operation executed under grad mode records its inputs and a
backward rule on the output tensor; ``backward`` assembles the tape
(a reverse topological ordering of those records) and replays it once.
Gradients accumulate across calls until the caller zeroes them, which
makes micro-batch accumulation trivial.

All values are 64-bit; an op whose output contains NaN/Inf raises
``NumericsError`` rather than propagating poison.
"""

from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import NumericsError, ShapeError, UtteranceTooShortError

Array = np.ndarray


class _GradMode(threading.local):
    """Per-thread recording flag: frozen forwards may run concurrently."""
    enabled = True


_grad_mode = _GradMode()


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block (frozen forward passes)."""
    prev = _grad_mode.enabled
    _grad_mode.enabled = False
    try:
        yield
    finally:
        _grad_mode.enabled = prev


def grad_enabled() -> bool:
    return _grad_mode.enabled


class Tensor:
    """Shaped array of float64 plus an optional gradient accumulator."""

    __slots__ = ("data", "requires_grad", "grad", "_inputs", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NumericsError("tensor initialised with non-finite values")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Array | None = np.zeros_like(arr) if self.requires_grad else None
        self._inputs: tuple[Tensor, ...] = ()
        self._vjp: Callable[[Array], tuple[Array | None, ...]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # small amount of operator sugar used by the blocks and by tests
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return add(self, scale(other, -1.0))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)


def _from_op(data: Array, inputs: tuple[Tensor, ...], vjp) -> Tensor:
    """Wrap an op result, recording the backward rule when tracking."""
    if not np.all(np.isfinite(data)):
        raise NumericsError("operation produced NaN or Inf")
    track = _grad_mode.enabled and any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = track
    out.grad = np.zeros_like(data) if track else None
    out._inputs = inputs if track else ()
    out._vjp = vjp if track else None
    return out


class Tape:
    """Ordered record of the ops that produced ``root``.

    Nodes are stored in topological order (inputs precede users); the
    backward sweep walks the list once in reverse.
    """

    def __init__(self, root: Tensor):
        self.root = root
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._inputs:
                stack.append((parent, False))
        self.nodes = order

    def backprop(self, seed: Array) -> None:
        """Propagate ``seed`` from the root, accumulating into ``.grad``."""
        flowing: dict[int, Array] = {id(self.root): np.asarray(seed, dtype=np.float64)}
        for node in reversed(self.nodes):
            g = flowing.pop(id(node), None)
            if g is None:
                continue
            if node.grad is not None:
                node.grad += g
            if node._vjp is None:
                continue
            for parent, pg in zip(node._inputs, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                acc = flowing.get(id(parent))
                flowing[id(parent)] = pg if acc is None else acc + pg


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into every requires_grad tensor below ``loss``."""
    if loss.data.size != 1:
        raise ShapeError(f"backward expects a scalar loss, got shape {loss.shape}")
    if loss._vjp is None and not loss.requires_grad:
        raise ValueError("loss was not produced through the tape (no graph attached)")
    Tape(loss).backprop(np.ones_like(loss.data))


# ---------------------------------------------------------------------------
# elementwise and structural ops
# ---------------------------------------------------------------------------


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum ``grad`` down to ``shape`` (reverses numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    return _from_op(a.data + b.data, (a, b), lambda g: (g, g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product with numpy broadcasting (used for gating)."""
    try:
        data = a.data * b.data
    except ValueError as e:
        raise ShapeError(f"mul: {e}") from None

    def vjp(g: Array):
        return (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape))

    return _from_op(data, (a, b), vjp)


def scale(x: Tensor, k: float) -> Tensor:
    k = float(k)
    return _from_op(x.data * k, (x,), lambda g: (g * k,))


def shift(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return _from_op(x.data + c, (x,), lambda g: (g,))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0.0
    return _from_op(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so exp never overflows
    d = x.data
    out = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))),
                   np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
    return _from_op(out, (x,), lambda g: (g * out * (1.0 - out),))


def hardtanh(x: Tensor) -> Tensor:
    mask = (x.data > -1.0) & (x.data < 1.0)
    return _from_op(np.clip(x.data, -1.0, 1.0), (x,), lambda g: (g * mask,))


NONLINEARITIES: dict[str, Callable[[Tensor], Tensor]] = {
    "relu": relu,
    "sigmoid": sigmoid,
    "hardtanh": hardtanh,
}


def pointwise(name: str, x: Tensor) -> Tensor:
    try:
        fn = NONLINEARITIES[name]
    except KeyError:
        raise ValueError(f"unknown nonlinearity {name!r}; "
                         f"choose from {sorted(NONLINEARITIES)}") from None
    return fn(x)


def concat_channels(inputs: Sequence[Tensor]) -> Tensor:
    if not inputs:
        raise ShapeError("concat_channels: need at least one input")
    t_len = inputs[0].data.shape[-1]
    for t in inputs:
        if t.data.ndim != 2:
            raise ShapeError(f"concat_channels expects [C, T] inputs, got {t.shape}")
        if t.data.shape[1] != t_len:
            raise ShapeError(f"concat_channels: time lengths differ "
                             f"({t.data.shape[1]} vs {t_len})")
    data = np.concatenate([t.data for t in inputs], axis=0)
    splits = np.cumsum([t.data.shape[0] for t in inputs])[:-1]

    def vjp(g: Array):
        return tuple(np.split(g, splits, axis=0))

    return _from_op(data, tuple(inputs), vjp)


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Per-frame affine map: [O,C] @ [C,T] + [O] -> [O,T]."""
    if x.data.ndim != 2 or w.data.ndim != 2 or b.data.ndim != 1:
        raise ShapeError("affine expects x[C,T], w[O,C], b[O]")
    if w.data.shape[1] != x.data.shape[0] or b.data.shape[0] != w.data.shape[0]:
        raise ShapeError(f"affine: incompatible shapes x{x.shape} w{w.shape} b{b.shape}")
    data = w.data @ x.data + b.data[:, None]

    def vjp(g: Array):
        return (w.data.T @ g, g @ x.data.T, g.sum(axis=1))

    return _from_op(data, (x, w, b), vjp)


def sum_all(x: Tensor) -> Tensor:
    def vjp(g: Array):
        return (np.broadcast_to(g, x.data.shape).copy(),)

    return _from_op(np.asarray(x.data.sum()), (x,), vjp)


def mean_over_time(x: Tensor) -> Tensor:
    """[C,T] -> [C]; 1-D analogue of global average pooling."""
    if x.data.ndim != 2:
        raise ShapeError(f"mean_over_time expects [C, T], got {x.shape}")
    t_len = x.data.shape[1]

    def vjp(g: Array):
        return (np.repeat(g[:, None], t_len, axis=1) / t_len,)

    return _from_op(x.data.mean(axis=1), (x,), vjp)


def log_softmax(x: Tensor) -> Tensor:
    """Log-softmax over the channel axis, per frame ([V,T] -> [V,T])."""
    if x.data.ndim != 2:
        raise ShapeError(f"log_softmax expects [V, T], got {x.shape}")
    shifted = x.data - x.data.max(axis=0, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=0, keepdims=True))

    def vjp(g: Array):
        return (g - np.exp(out) * g.sum(axis=0, keepdims=True),)

    return _from_op(out, (x,), vjp)


# ---------------------------------------------------------------------------
# conv1d
# ---------------------------------------------------------------------------


def conv1d(x: Tensor, weight: Tensor, bias: Tensor,
           stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation in time: x[C_in,T] * weight[C_out,C_in,K] + bias.

    T_out = floor((T + 2*padding - K)/stride) + 1.
    """
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if padding < 0:
        raise ValueError(f"padding must be >= 0, got {padding}")
    if x.data.ndim != 2 or weight.data.ndim != 3 or bias.data.ndim != 1:
        raise ShapeError("conv1d expects x[C_in,T], weight[C_out,C_in,K], bias[C_out]")
    c_in, t_len = x.data.shape
    c_out, w_cin, k = weight.data.shape
    if w_cin != c_in:
        raise ShapeError(f"conv1d: weight expects {w_cin} input channels, input has {c_in}")
    if bias.data.shape[0] != c_out:
        raise ShapeError(f"conv1d: bias has {bias.data.shape[0]} entries, weight emits {c_out}")
    t_pad = t_len + 2 * padding
    if k > t_pad:
        raise ShapeError(f"conv1d: kernel {k} exceeds padded length {t_pad}")

    xp = np.pad(x.data, ((0, 0), (padding, padding))) if padding else x.data
    t_out = (t_pad - k) // stride + 1
    gather = (np.arange(t_out) * stride)[None, :] + np.arange(k)[:, None]  # [K, T_out]
    cols = xp[:, gather].reshape(c_in * k, t_out)
    w2 = weight.data.reshape(c_out, c_in * k)
    out = w2 @ cols + bias.data[:, None]

    def vjp(g: Array):
        dw = (g @ cols.T).reshape(weight.data.shape) if weight.requires_grad else None
        db = g.sum(axis=1) if bias.requires_grad else None
        dx = None
        if x.requires_grad:
            dcols = (w2.T @ g).reshape(c_in, k, t_out)
            dxp = np.zeros((c_in, t_pad))
            for kk in range(k):
                dxp[:, kk:kk + stride * (t_out - 1) + 1:stride] += dcols[:, kk, :]
            dx = dxp[:, padding:t_pad - padding] if padding else dxp
        return (dx, dw, db)

    return _from_op(out, (x, weight, bias), vjp)


def conv_out_length(t_len: int, kernel: int, stride: int, padding: int) -> int:
    t_pad = t_len + 2 * padding
    if kernel > t_pad:
        raise UtteranceTooShortError(
            f"utterance too short: length {t_len} (+{2 * padding} padding) "
            f"cannot fit kernel {kernel}")
    return (t_pad - kernel) // stride + 1


# ---------------------------------------------------------------------------
# batch norm
# ---------------------------------------------------------------------------


@dataclass
class RunningStats:
    """EMA of per-channel moments, updated by train-mode batch norm."""

    mean: Array
    var: Array
    momentum: float = 0.1
    initialized: bool = False

    @classmethod
    def for_channels(cls, channels: int, momentum: float = 0.1) -> "RunningStats":
        return cls(mean=np.zeros(channels), var=np.ones(channels), momentum=momentum)


def batchnorm1d(x: Tensor, gamma: Tensor, beta: Tensor,
                running: RunningStats | None, training: bool,
                eps: float = 1e-5) -> Tensor:
    """Per-channel normalization over the time axis of x[C,T].

    Train mode normalizes with batch moments (biased variance) and
    updates ``running`` in place; eval mode normalizes with the stored
    running moments.
    """
    if x.data.ndim != 2:
        raise ShapeError(f"batchnorm1d expects [C, T], got {x.shape}")
    c = x.data.shape[0]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ShapeError("batchnorm1d: gamma/beta must have one entry per channel")

    if training:
        t_len = x.data.shape[1]
        mean = x.data.mean(axis=1)
        xm = x.data - mean[:, None]
        var = (xm * xm).mean(axis=1)
        ivar = 1.0 / np.sqrt(var + eps)
        xhat = xm * ivar[:, None]
        if running is not None:
            m = running.momentum
            running.mean *= 1.0 - m
            running.mean += m * mean
            running.var *= 1.0 - m
            running.var += m * var
            running.initialized = True
        out = gamma.data[:, None] * xhat + beta.data[:, None]

        def vjp(g: Array):
            dxhat = g * gamma.data[:, None]
            dgamma = (g * xhat).sum(axis=1) if gamma.requires_grad else None
            dbeta = g.sum(axis=1) if beta.requires_grad else None
            dx = None
            if x.requires_grad:
                dx = (ivar[:, None] / t_len) * (
                    t_len * dxhat
                    - dxhat.sum(axis=1, keepdims=True)
                    - xhat * (dxhat * xhat).sum(axis=1, keepdims=True)
                )
            return (dx, dgamma, dbeta)

        return _from_op(out, (x, gamma, beta), vjp)

    if running is None:
        raise ValueError("batchnorm1d: eval mode requires running stats")
    ivar = 1.0 / np.sqrt(running.var + eps)
    xhat = (x.data - running.mean[:, None]) * ivar[:, None]
    out = gamma.data[:, None] * xhat + beta.data[:, None]

    def vjp_eval(g: Array):
        dx = g * (gamma.data * ivar)[:, None] if x.requires_grad else None
        dgamma = (g * xhat).sum(axis=1) if gamma.requires_grad else None
        dbeta = g.sum(axis=1) if beta.requires_grad else None
        return (dx, dgamma, dbeta)

    return _from_op(out, (x, gamma, beta), vjp_eval)


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


def grad_check(fn: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5) -> float:
    """Max relative error between backward() and central differences.

    Relative error per element is |analytic - numeric| / max(1, |analytic|).
    Clobbers ``x.grad``. ``fn`` must be deterministic and re-evaluable;
    callers wrapping stateful layers must reset that state themselves.
    """
    if not (1e-7 <= eps <= 1e-3):
        raise ValueError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    if not x.requires_grad:
        x.requires_grad = True
        x.grad = np.zeros_like(x.data)
    x.zero_grad()
    loss = fn(x)
    if loss.data.size != 1:
        raise ShapeError("grad_check: fn must return a scalar")
    backward(loss)
    analytic = x.grad.copy()

    numeric = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    num_flat = numeric.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = fn(x).item()
            flat[i] = orig - eps
            lo = fn(x).item()
            flat[i] = orig
            num_flat[i] = (hi - lo) / (2.0 * eps)

    denom = np.maximum(1.0, np.abs(analytic))
    if analytic.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric) / denom))
