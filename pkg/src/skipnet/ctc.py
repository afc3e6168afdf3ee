"""CTC loss via log-space forward-backward, plus brute-force oracles.

Blank is index 0 everywhere. The target is expanded to the blank-padded
sequence b,l1,b,l2,...,b of length 2L+1 and the usual alpha/beta
recursions run over it. The gradient w.r.t. the per-frame log
probabilities is exact: for each frame t and symbol k,

    dL/dlogp[k,t] = -(1/P) * sum_{s: ext[s]=k} alpha[t,s]*beta[t,s]/p[k,t]

with alpha and beta both including the emission at t.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import InfeasibleTargetError, ShapeError
from .tensor import Tensor, _from_op

NEG_INF = -np.inf

BLANK = 0


class Alphabet:
    """Ordered output symbols; blank is implicit at index 0."""

    def __init__(self, symbols: Sequence[str]):
        symbols = list(symbols)
        if not symbols:
            raise ValueError("alphabet needs at least one symbol")
        if len(set(symbols)) != len(symbols):
            raise ValueError(f"alphabet symbols must be unique: {symbols}")
        self.symbols = symbols
        self._index = {s: i + 1 for i, s in enumerate(symbols)}

    def __len__(self) -> int:
        return len(self.symbols)

    @property
    def num_classes(self) -> int:
        """Model output channels: symbols plus blank."""
        return len(self.symbols) + 1

    def index(self, symbol: str) -> int:
        try:
            return self._index[symbol]
        except KeyError:
            raise KeyError(f"symbol {symbol!r} not in alphabet {self.symbols}") from None

    def symbol(self, index: int) -> str:
        if not 1 <= index <= len(self.symbols):
            raise IndexError(f"label index {index} outside 1..{len(self.symbols)}")
        return self.symbols[index - 1]

    def encode(self, text: str) -> "LabelSequence":
        return LabelSequence(tuple(self.index(c) for c in text), text)

    def decode(self, indices: Iterable[int]) -> str:
        return "".join(self.symbol(i) for i in indices)


@dataclass(frozen=True)
class LabelSequence:
    """Transcript as 1-based label indices (blank excluded)."""

    indices: tuple[int, ...]
    text: str = ""

    def __len__(self) -> int:
        return len(self.indices)


def _check_logprobs(logprobs: np.ndarray) -> np.ndarray:
    lp = np.asarray(logprobs, dtype=np.float64)
    if lp.ndim != 2:
        raise ShapeError(f"logprobs must be [V, T], got shape {lp.shape}")
    return lp


def _check_labels(labels: Sequence[int], num_classes: int) -> list[int]:
    labels = [int(l) for l in labels]
    for l in labels:
        if not 1 <= l < num_classes:
            raise ShapeError(f"label {l} outside 1..{num_classes - 1}")
    return labels


def _extended(labels: Sequence[int]) -> np.ndarray:
    ext = np.zeros(2 * len(labels) + 1, dtype=np.int64)
    ext[1::2] = labels
    return ext


def min_frames(labels: Sequence[int]) -> int:
    """Fewest frames that can realise the target: |target| plus one
    separating blank per adjacent repeat."""
    repeats = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    return len(labels) + repeats


def _alpha(lp: np.ndarray, ext: np.ndarray) -> np.ndarray:
    v, t_len = lp.shape
    s_len = len(ext)
    em = lp[ext, :]  # [S, T]
    skip = np.zeros(s_len, dtype=bool)
    if s_len > 2:
        skip[2:] = (ext[2:] != BLANK) & (ext[2:] != ext[:-2])
    alpha = np.full((t_len, s_len), NEG_INF)
    alpha[0, 0] = em[0, 0]
    if s_len > 1:
        alpha[0, 1] = em[1, 0]
    for t in range(1, t_len):
        prev = alpha[t - 1]
        step = np.concatenate(([NEG_INF], prev[:-1]))
        acc = np.logaddexp(prev, step)
        if s_len > 2:
            jump = np.concatenate(([NEG_INF, NEG_INF], prev[:-2]))
            acc = np.where(skip, np.logaddexp(acc, jump), acc)
        alpha[t] = acc + em[:, t]
    return alpha


def _beta(lp: np.ndarray, ext: np.ndarray) -> np.ndarray:
    v, t_len = lp.shape
    s_len = len(ext)
    em = lp[ext, :]
    skip_fw = np.zeros(s_len, dtype=bool)
    if s_len > 2:
        # from state s, a jump to s+2 is allowed iff the usual skip rule holds there
        skip_fw[:-2] = (ext[2:] != BLANK) & (ext[2:] != ext[:-2])
    beta = np.full((t_len, s_len), NEG_INF)
    beta[t_len - 1, s_len - 1] = em[s_len - 1, t_len - 1]
    if s_len > 1:
        beta[t_len - 1, s_len - 2] = em[s_len - 2, t_len - 1]
    for t in range(t_len - 2, -1, -1):
        nxt = beta[t + 1]
        step = np.concatenate((nxt[1:], [NEG_INF]))
        acc = np.logaddexp(nxt, step)
        if s_len > 2:
            jump = np.concatenate((nxt[2:], [NEG_INF, NEG_INF]))
            acc = np.where(skip_fw, np.logaddexp(acc, jump), acc)
        beta[t] = acc + em[:, t]
    return beta


def ctc_log_prob(logprobs: np.ndarray, labels: Sequence[int]) -> float:
    """log P(labels | logprobs); -inf when the target is unreachable."""
    lp = _check_logprobs(logprobs)
    v, t_len = lp.shape
    labels = _check_labels(labels, v)
    if t_len == 0:
        return 0.0 if not labels else NEG_INF
    if t_len < min_frames(labels):
        return NEG_INF
    ext = _extended(labels)
    alpha = _alpha(lp, ext)
    tail = alpha[t_len - 1, -1]
    if len(ext) > 1:
        tail = np.logaddexp(tail, alpha[t_len - 1, -2])
    return float(tail)


def ctc_loss(logprobs: np.ndarray, labels: Sequence[int]) -> tuple[float, np.ndarray]:
    """Negative log-likelihood and its exact gradient w.r.t. logprobs."""
    lp = _check_logprobs(logprobs)
    v, t_len = lp.shape
    if isinstance(labels, LabelSequence):
        labels = labels.indices
    labels = _check_labels(labels, v)
    if t_len < 1:
        raise ShapeError("ctc_loss needs at least one frame")
    if t_len < min_frames(labels):
        raise InfeasibleTargetError(
            f"target of length {len(labels)} with repeats needs at least "
            f"{min_frames(labels)} frames, got {t_len}")

    ext = _extended(labels)
    s_len = len(ext)
    alpha = _alpha(lp, ext)
    beta = _beta(lp, ext)
    log_p = alpha[t_len - 1, -1]
    if s_len > 1:
        log_p = np.logaddexp(log_p, alpha[t_len - 1, -2])
    loss = -float(log_p)

    # occupancy per state, emission counted once
    em = lp[ext, :]
    log_gamma = alpha.T + beta.T - em  # [S, T]
    grad = np.zeros_like(lp)
    with np.errstate(divide="ignore"):
        for sym in np.unique(ext):
            rows = log_gamma[ext == sym]  # [n_states, T]
            m = np.where(np.isfinite(rows.max(axis=0)), rows.max(axis=0), 0.0)
            occ = m + np.log(np.exp(rows - m).sum(axis=0))
            grad[sym] = -np.exp(occ - log_p)
    return loss, grad


def ctc_loss_op(logprobs: Tensor, labels: Sequence[int]) -> Tensor:
    """ctc_loss as a tape op so training can backprop through it."""
    loss, grad = ctc_loss(logprobs.data, labels)
    return _from_op(np.asarray(loss), (logprobs,), lambda g: (g * grad,))


_MAX_BRUTE_PATHS = 10 ** 7


def ctc_path_distribution(logprobs: np.ndarray) -> dict[tuple[int, ...], float]:
    """Probability of every collapsed label sequence, by enumerating all
    V^T frame paths. Exponentially expensive; guarded."""
    lp = _check_logprobs(logprobs)
    v, t_len = lp.shape
    if v ** t_len > _MAX_BRUTE_PATHS:
        raise ValueError(f"brute force refused: {v}^{t_len} paths exceed {_MAX_BRUTE_PATHS}")
    # vectorized path log-probs, in frame-major lexicographic order
    probs = np.zeros(1)
    for t in range(t_len):
        probs = (probs[:, None] + lp[:, t][None, :]).reshape(-1)
    probs = np.exp(probs)
    dist: dict[tuple[int, ...], float] = {}
    for i, path in enumerate(itertools.product(range(v), repeat=t_len)):
        seq = []
        prev = BLANK
        for sym in path:
            if sym != BLANK and sym != prev:
                seq.append(sym)
            prev = sym
        key = tuple(seq)
        dist[key] = dist.get(key, 0.0) + probs[i]
    return dist


def ctc_brute_force(logprobs: np.ndarray, labels: Sequence[int]) -> float:
    """Loss by path enumeration; the independent oracle for ctc_loss."""
    if isinstance(labels, LabelSequence):
        labels = labels.indices
    lp = _check_logprobs(logprobs)
    labels = _check_labels(labels, lp.shape[0])
    total = ctc_path_distribution(lp).get(tuple(labels), 0.0)
    if total <= 0.0:
        raise InfeasibleTargetError(
            f"no length-{lp.shape[1]} path collapses to target {tuple(labels)}")
    return -math.log(total)


def greedy_decode(logprobs: np.ndarray) -> tuple[int, ...]:
    """Per-frame argmax, collapse adjacent repeats, drop blanks."""
    lp = _check_logprobs(logprobs)
    best = lp.argmax(axis=0)
    out = []
    prev = BLANK
    for sym in best:
        if sym != BLANK and sym != prev:
            out.append(int(sym))
        prev = sym
    return tuple(out)
