"""CTC prefix beam search with shallow n-gram LM fusion.

Hypotheses are label prefixes carrying separate path probabilities for
"ends in blank" and "ends in the last symbol"; duplicate prefixes merge
by log-sum-exp. Ranking uses the fused score

    log P_ctc(prefix) + lm_weight * log P_lm(prefix) + bonus * |prefix|

in natural logs (ARPA log10 scores are converted at this boundary).
Per-frame pruning ranks by the running path mass; the final ranking
recomputes each survivor's exact CTC probability with the forward pass,
so the returned score is the true fused score of the transcript. The LM
is queried per emitted character by default; word fusion scores each
word as its closing space symbol is emitted.

``exhaustive_decode`` is the oracle: it enumerates every label sequence
up to length T, computes its exact CTC probability with the ctc forward
pass, fuses identically, and takes the argmax (ties lexicographic, which
also prefers shorter prefixes).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .ctc import Alphabet, ctc_log_prob
from .lm import BOS, SPACE, ArpaModel

LN10 = math.log(10.0)
NEG_INF = -np.inf

_MAX_EXHAUSTIVE = 10 ** 6


@dataclass
class DecoderConfig:
    beam_width: int = 32
    lm_weight: float = 1.0
    insertion_bonus: float = 1.5
    fusion_unit: str = "char"
    lm: ArpaModel | None = None

    def __post_init__(self):
        if self.beam_width < 1:
            raise ValueError(f"beam_width must be >= 1, got {self.beam_width}")
        if self.lm_weight < 0:
            raise ValueError(f"lm_weight must be >= 0, got {self.lm_weight}")
        if self.fusion_unit not in ("char", "word"):
            raise ValueError(f"fusion_unit must be 'char' or 'word', got {self.fusion_unit!r}")


@dataclass
class BeamHypothesis:
    prefix: tuple[int, ...]
    log_p_blank: float
    log_p_nonblank: float
    lm_state: tuple[str, ...]  # LM context tokens, sentence marker first
    lm_log: float = 0.0        # natural-log LM probability of the prefix
    score: float = 0.0         # fused

    @property
    def log_p_total(self) -> float:
        return float(np.logaddexp(self.log_p_blank, self.log_p_nonblank))


@dataclass
class DecodeResult:
    labels: tuple[int, ...]
    text: str
    score: float
    beam: list[BeamHypothesis] = field(default_factory=list)


class _LmScorer:
    """Incremental fused-LM terms per emitted symbol; pure in the prefix."""

    def __init__(self, config: DecoderConfig, alphabet: Alphabet):
        self.lm = config.lm
        self.unit = config.fusion_unit
        self.alphabet = alphabet

    @staticmethod
    def _token(symbol: str) -> str:
        return SPACE if symbol.isspace() else symbol

    def extend(self, prefix: tuple[int, ...], label: int) -> float:
        """Natural-log LM increment when ``label`` is appended to ``prefix``."""
        if self.lm is None:
            return 0.0
        sym = self.alphabet.symbol(label)
        if self.unit == "char":
            ctx = (BOS,) + tuple(self._token(self.alphabet.symbol(i)) for i in prefix)
            return LN10 * self.lm.score(ctx, self._token(sym))
        if not sym.isspace():
            return 0.0
        words = "".join(self.alphabet.symbol(i) for i in prefix).split()
        if not words:
            return 0.0
        return LN10 * self.lm.score((BOS,) + tuple(words[:-1]), words[-1])

    def context(self, prefix: tuple[int, ...]) -> tuple[str, ...]:
        if self.unit == "char":
            return (BOS,) + tuple(self._token(self.alphabet.symbol(i)) for i in prefix)
        return (BOS,) + tuple("".join(self.alphabet.symbol(i) for i in prefix).split())


def _check_normalized(logprobs: np.ndarray) -> np.ndarray:
    lp = np.asarray(logprobs, dtype=np.float64)
    if lp.ndim != 2:
        raise ValueError(f"logprobs must be [V, T], got shape {lp.shape}")
    if lp.shape[1]:
        sums = np.log(np.exp(lp - lp.max(axis=0)).sum(axis=0)) + lp.max(axis=0)
        if np.abs(sums).max() > 1e-6:
            raise ValueError("logprobs are not normalized per frame")
    return lp


def prefix_beam_search(logprobs: np.ndarray, config: DecoderConfig,
                       alphabet: Alphabet) -> DecodeResult:
    """Best transcript under the fused score, beam width config.beam_width."""
    lp = _check_normalized(logprobs)
    v, t_len = lp.shape
    scorer = _LmScorer(config, alphabet)
    alpha, beta = config.lm_weight, config.insertion_bonus

    beams: dict[tuple[int, ...], list[float]] = {(): [0.0, NEG_INF]}
    lm_log: dict[tuple[int, ...], float] = {(): 0.0}

    def fused(prefix: tuple[int, ...], probs: list[float]) -> float:
        total = np.logaddexp(probs[0], probs[1])
        return float(total + alpha * lm_log[prefix] + beta * len(prefix))

    for t in range(t_len):
        nxt: dict[tuple[int, ...], list[float]] = {}

        def slot(prefix):
            e = nxt.get(prefix)
            if e is None:
                e = [NEG_INF, NEG_INF]
                nxt[prefix] = e
            return e

        for prefix, (pb, pnb) in beams.items():
            total = np.logaddexp(pb, pnb)
            e = slot(prefix)
            e[0] = np.logaddexp(e[0], total + lp[0, t])  # blank keeps the prefix
            last = prefix[-1] if prefix else None
            if last is not None:
                e[1] = np.logaddexp(e[1], pnb + lp[last, t])  # repeat collapses
            for c in range(1, v):
                grown = prefix + (c,)
                if grown not in lm_log:
                    lm_log[grown] = lm_log[prefix] + scorer.extend(prefix, c)
                base = pb if c == last else total  # repeat needs a blank between
                g = slot(grown)
                g[1] = np.logaddexp(g[1], base + lp[c, t])

        ranked = sorted(nxt.items(), key=lambda kv: (-fused(kv[0], kv[1]), kv[0]))
        beams = dict(ranked[:config.beam_width])

    # final ranking uses the exact CTC probability of each surviving prefix
    # (the search's running mass under-counts whenever contributors were
    # pruned, and that bias need not shrink with the beam width)
    hyps = []
    for p, probs in beams.items():
        exact = ctc_log_prob(lp, list(p))
        hyps.append(BeamHypothesis(prefix=p, log_p_blank=probs[0],
                                   log_p_nonblank=probs[1],
                                   lm_state=scorer.context(p), lm_log=lm_log[p],
                                   score=exact + alpha * lm_log[p] + beta * len(p)))
    hyps.sort(key=lambda h: (-h.score, h.prefix))
    best = hyps[0]
    return DecodeResult(labels=best.prefix, text=alphabet.decode(best.prefix),
                        score=best.score, beam=hyps)


def exhaustive_decode(logprobs: np.ndarray, config: DecoderConfig,
                      alphabet: Alphabet) -> DecodeResult:
    """Argmax over every label sequence of length <= T; the oracle."""
    v, t_len = np.asarray(logprobs).shape
    if v ** t_len > _MAX_EXHAUSTIVE:
        raise ValueError(f"exhaustive decode refused: {v}^{t_len} exceeds {_MAX_EXHAUSTIVE}")
    lp = _check_normalized(logprobs)
    scorer = _LmScorer(config, alphabet)
    alpha, beta = config.lm_weight, config.insertion_bonus

    best_seq: tuple[int, ...] | None = None
    best_score = NEG_INF
    for length in range(t_len + 1):
        for seq in product(range(1, v), repeat=length):
            log_ctc = ctc_log_prob(lp, list(seq))
            if log_ctc == NEG_INF:
                continue
            lm_total = 0.0
            if config.lm is not None and alpha:
                for i, c in enumerate(seq):
                    lm_total += scorer.extend(seq[:i], c)
            score = log_ctc + alpha * lm_total + beta * length
            if best_seq is None or score > best_score or \
                    (score == best_score and seq < best_seq):
                best_seq, best_score = seq, score
    assert best_seq is not None  # length 0 is always feasible
    return DecodeResult(labels=best_seq, text=alphabet.decode(best_seq),
                        score=float(best_score))
