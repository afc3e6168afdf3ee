"""Modified Kneser-Ney n-gram language model with ARPA serialization.

Training follows the interpolated formulation. The highest order uses
raw counts; lower orders use continuation counts (number of distinct
left extensions), except that n-grams starting with the sentence marker
keep their raw counts since nothing can ever precede them. Each order
gets three discounts estimated from its counts-of-counts,

    Y = n1 / (n1 + 2*n2),   D_k = k - (k+1) * Y * n_{k+1} / n_k,

falling back to a fixed 0.75 when the statistics are degenerate. The
interpolated probabilities are stored directly in the ARPA table and the
leftover mass gamma(context) becomes the context's backoff weight, which
makes every context distribution sum to one exactly.

Tokens: ``<s>``/``</s>`` mark sentence boundaries, ``<unk>`` absorbs
out-of-vocabulary queries. Whitespace becomes ``<sp>`` in character
mode so transcripts with spaces survive the whitespace-delimited ARPA
format.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import ArpaParseError

log = logging.getLogger(__name__)

BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"
SPACE = "<sp>"
_RESERVED = {BOS, EOS, UNK}

_FALLBACK_DISCOUNT = 0.75
_BOS_LOG10 = -99.0

Gram = tuple[str, ...]


def tokenize_words(line: str) -> list[str]:
    return line.split()

def tokenize_chars(line: str) -> list[str]:
    return [SPACE if c.isspace() else c for c in line.rstrip("\n")]


@dataclass
class CountTable:
    """Raw and continuation-adjusted n-gram counts for orders 1..N."""

    order: int
    raw: list[dict[Gram, int]]        # raw[k-1]: order-k raw counts
    adjusted: list[dict[Gram, int]]   # highest order raw, lower orders continuation
    counts_of_counts: list[dict[int, int]] = field(default_factory=list)

    def vocabulary(self) -> list[str]:
        """Predictable tokens: corpus words plus </s> and <unk>, no <s>."""
        vocab = {g[0] for g in self.raw[0] if g[0] != BOS}
        vocab.update([EOS, UNK])
        return sorted(vocab)


def count(corpus: Iterable[Sequence[str]], order: int) -> CountTable:
    """Sentence-boundary-padded n-gram counts for all orders <= N."""
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    raw: list[dict[Gram, int]] = [{} for _ in range(order)]
    n_sentences = 0
    for sentence in corpus:
        tokens = [str(t) for t in sentence]
        if not tokens:
            continue
        for t in tokens:
            if t in _RESERVED:
                raise ValueError(f"corpus contains reserved token {t!r}")
        n_sentences += 1
        padded = [BOS] + tokens + [EOS]
        for k in range(1, order + 1):
            table = raw[k - 1]
            for i in range(len(padded) - k + 1):
                g = tuple(padded[i:i + k])
                table[g] = table.get(g, 0) + 1
    if n_sentences == 0:
        raise ValueError("empty corpus: no non-empty sentences")

    adjusted: list[dict[Gram, int]] = [dict(raw[k]) for k in range(order)]
    for k in range(order - 1):  # orders 1..N-1 switch to continuation counts
        cont: dict[Gram, int] = {}
        for higher in raw[k + 1]:
            suffix = higher[1:]
            cont[suffix] = cont.get(suffix, 0) + 1
        table = {}
        for g, c in raw[k].items():
            table[g] = c if g[0] == BOS else cont.get(g, 0)
        adjusted[k] = table

    cocs = []
    for k in range(order):
        coc: dict[int, int] = {}
        for g, c in adjusted[k].items():
            if k == 0 and g[0] == BOS:
                continue  # pinned, never discounted
            if 1 <= c <= 4:
                coc[c] = coc.get(c, 0) + 1
        cocs.append(coc)
    return CountTable(order=order, raw=raw, adjusted=adjusted, counts_of_counts=cocs)


def _discounts(coc: dict[int, int], order_k: int) -> tuple[float, float, float]:
    n1, n2, n3, n4 = (coc.get(i, 0) for i in (1, 2, 3, 4))
    if n1 == 0 or n2 == 0:
        log.warning("order %d: degenerate counts-of-counts (n1=%d, n2=%d); "
                    "using fixed discount %.2f", order_k, n1, n2, _FALLBACK_DISCOUNT)
        return (_FALLBACK_DISCOUNT,) * 3
    y = n1 / (n1 + 2.0 * n2)
    ds = []
    for k, nk, nk1 in ((1, n1, n2), (2, n2, n3), (3, n3, n4)):
        if nk == 0:
            ds.append(_FALLBACK_DISCOUNT)
            continue
        d = k - (k + 1.0) * y * nk1 / nk
        if not 0.0 < d < k:  # d == k would zero out all count-k mass
            log.warning("order %d: discount D%d=%.3f out of range; using %.2f",
                        order_k, k, d, _FALLBACK_DISCOUNT)
            d = _FALLBACK_DISCOUNT
        ds.append(d)
    return tuple(ds)


def _discount_for(count_: int, ds: tuple[float, float, float]) -> float:
    if count_ >= 3:
        return ds[2]
    return ds[count_ - 1]


@dataclass
class ArpaModel:
    """Backoff n-gram model: per-order maps of n-gram -> (log10 p, log10 bow)."""

    order: int
    entries: list[dict[Gram, tuple[float, float | None]]]
    vocab: list[str]  # predictable tokens, sorted

    def __post_init__(self):
        self._vocab_set = set(self.vocab) | {BOS}

    def _map_token(self, token: str) -> str:
        return token if token in self._vocab_set else UNK

    def score(self, context: Sequence[str], token: str) -> float:
        """log10 p(token | context), standard backoff evaluation."""
        token = self._map_token(token)
        ctx = tuple(self._map_token(t) for t in context)[-(self.order - 1):] \
            if self.order > 1 else ()
        acc = 0.0
        while True:
            gram = ctx + (token,)
            hit = self.entries[len(gram) - 1].get(gram)
            if hit is not None:
                return acc + hit[0]
            if not ctx:
                raise KeyError(f"unigram {token!r} missing from model")  # unreachable
            ctx_hit = self.entries[len(ctx) - 1].get(ctx)
            if ctx_hit is not None and ctx_hit[1] is not None:
                acc += ctx_hit[1]
            ctx = ctx[1:]

    def sentence_log10(self, tokens: Sequence[str]) -> float:
        ctx: tuple[str, ...] = (BOS,)
        total = 0.0
        for t in list(tokens) + [EOS]:
            total += self.score(ctx, t)
            ctx = ctx + (t,)
        return total

    def perplexity(self, corpus: Iterable[Sequence[str]]) -> float:
        total, n_tokens = 0.0, 0
        for sentence in corpus:
            sentence = list(sentence)
            if not sentence:
                continue
            total += self.sentence_log10(sentence)
            n_tokens += len(sentence) + 1  # includes </s>
        if n_tokens == 0:
            raise ValueError("empty corpus")
        return 10.0 ** (-total / n_tokens)


def train_kn(counts: CountTable) -> ArpaModel:
    """Interpolated modified Kneser-Ney estimation from a count table."""
    n = counts.order
    vocab = counts.vocabulary()
    v_size = len(vocab)
    discounts = [_discounts(counts.counts_of_counts[k], k + 1) for k in range(n)]

    probs: list[dict[Gram, float]] = []
    gammas: list[dict[Gram, float]] = []

    # unigram level, interpolated with the uniform distribution
    uni = counts.adjusted[0]
    ds = discounts[0]
    total = sum(c for g, c in uni.items() if g[0] != BOS)
    d_mass = sum(_discount_for(c, ds) for g, c in uni.items() if g[0] != BOS and c > 0)
    gamma0 = d_mass / total if total else 1.0
    p1: dict[Gram, float] = {}
    for w in vocab:
        a = uni.get((w,), 0)
        disc = max(a - _discount_for(a, ds), 0.0) if a > 0 else 0.0
        p1[(w,)] = disc / total + gamma0 / v_size if total else 1.0 / v_size
    probs.append(p1)
    gammas.append({(): gamma0})

    for k in range(2, n + 1):
        table = counts.adjusted[k - 1]
        ds = discounts[k - 1]
        by_context: dict[Gram, list[tuple[str, int]]] = {}
        for g, c in table.items():
            if c <= 0:
                continue
            by_context.setdefault(g[:-1], []).append((g[-1], c))
        pk: dict[Gram, float] = {}
        gk: dict[Gram, float] = {}
        lower = probs[-1]
        for ctx, extensions in by_context.items():
            total_c = sum(c for _, c in extensions)
            d_mass = sum(_discount_for(c, ds) for _, c in extensions)
            gamma = d_mass / total_c
            gk[ctx] = gamma
            for w, c in extensions:
                backoff_gram = ctx[1:] + (w,)
                pk[ctx + (w,)] = (max(c - _discount_for(c, ds), 0.0) / total_c
                                  + gamma * lower[backoff_gram])
        probs.append(pk)
        gammas.append(gk)

    entries: list[dict[Gram, tuple[float, float | None]]] = []
    for k in range(1, n + 1):
        level: dict[Gram, tuple[float, float | None]] = {}
        ctx_gammas = gammas[k] if k < n else {}
        for g, p in probs[k - 1].items():
            bow = ctx_gammas.get(g)
            level[g] = (math.log10(p), math.log10(bow) if bow is not None else None)
        entries.append(level)
    # sentence-start marker: pinned probability, real backoff weight
    bos_gamma = gammas[1].get((BOS,)) if n > 1 else None
    entries[0][(BOS,)] = (_BOS_LOG10,
                          math.log10(bos_gamma) if bos_gamma is not None else None)
    return ArpaModel(order=n, entries=entries, vocab=vocab)


def train_lm(lines: Iterable[str], order: int, mode: str = "char") -> ArpaModel:
    """Tokenize lines (word or char mode), count, and train."""
    if mode not in ("char", "word"):
        raise ValueError(f"mode must be 'char' or 'word', got {mode!r}")
    tokenize = tokenize_chars if mode == "char" else tokenize_words
    sentences = [tokenize(line) for line in lines]
    return train_kn(count(sentences, order))


def context_total(model: ArpaModel, context: Sequence[str]) -> float:
    """Sum of p(w|context) over the predictable vocabulary (should be 1)."""
    return sum(10.0 ** model.score(context, w) for w in model.vocab)


# ---------------------------------------------------------------------------
# ARPA text serialization
# ---------------------------------------------------------------------------


def arpa_write(model: ArpaModel, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("\\data\\\n")
        for k in range(1, model.order + 1):
            f.write(f"ngram {k}={len(model.entries[k - 1])}\n")
        for k in range(1, model.order + 1):
            f.write(f"\n\\{k}-grams:\n")
            for g in sorted(model.entries[k - 1]):
                logp, bow = model.entries[k - 1][g]
                line = f"{logp:.15g}\t{' '.join(g)}"
                if bow is not None:
                    line += f"\t{bow:.15g}"
                f.write(line + "\n")
        f.write("\n\\end\\\n")


def arpa_read(path) -> ArpaModel:
    """Parse an ARPA file, validating section structure and counts."""
    declared: dict[int, int] = {}
    entries: list[dict[Gram, tuple[float, float | None]]] = []
    state = "preamble"
    current_order = 0
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.rstrip("\n").strip()
            if state == "preamble":
                if line == "\\data\\":
                    state = "counts"
                continue
            if state == "counts":
                if not line:
                    continue
                if line.startswith("ngram "):
                    try:
                        k_str, count_str = line[len("ngram "):].split("=")
                        declared[int(k_str)] = int(count_str)
                    except ValueError:
                        raise ArpaParseError(line_no, f"bad count line {line!r}") from None
                    continue
                if line.startswith("\\") and line.endswith("-grams:"):
                    state = "grams"
                    # fall through to section handling below
                else:
                    raise ArpaParseError(line_no, f"expected count or section, got {line!r}")
            if state == "grams":
                if not line:
                    continue
                if line == "\\end\\":
                    state = "done"
                    continue
                if line.startswith("\\") and line.endswith("-grams:"):
                    try:
                        current_order = int(line[1:-len("-grams:")])
                    except ValueError:
                        raise ArpaParseError(line_no, f"bad section header {line!r}") from None
                    if current_order != len(entries) + 1:
                        raise ArpaParseError(line_no,
                                             f"section {current_order} out of order")
                    if current_order not in declared:
                        raise ArpaParseError(line_no,
                                             f"section {current_order} not declared in header")
                    entries.append({})
                    continue
                parts = line.split("\t")
                if len(parts) == 1:
                    parts = line.split()
                    if len(parts) >= current_order + 1:
                        head, tokens = parts[0], parts[1:]
                        if len(tokens) == current_order + 1:
                            parts = [head, " ".join(tokens[:-1]), tokens[-1]]
                        else:
                            parts = [head, " ".join(tokens)]
                if not 2 <= len(parts) <= 3:
                    raise ArpaParseError(line_no, f"expected 2 or 3 fields, got {line!r}")
                try:
                    logp = float(parts[0])
                except ValueError:
                    raise ArpaParseError(line_no, f"bad log-prob {parts[0]!r}") from None
                gram = tuple(parts[1].split())
                if len(gram) != current_order:
                    raise ArpaParseError(line_no,
                                         f"{len(gram)}-gram in \\{current_order}-grams: section")
                bow = None
                if len(parts) == 3 and parts[2]:
                    try:
                        bow = float(parts[2])
                    except ValueError:
                        raise ArpaParseError(line_no, f"bad backoff {parts[2]!r}") from None
                entries[-1][gram] = (logp, bow)
                continue
            if state == "done" and line:
                raise ArpaParseError(line_no, f"content after \\end\\: {line!r}")
    if state == "preamble":
        raise ArpaParseError(0, "no \\data\\ section found")
    if state != "done":
        raise ArpaParseError(0, "missing \\end\\ marker")
    if sorted(declared) != list(range(1, len(declared) + 1)) or len(entries) != len(declared):
        raise ArpaParseError(0, f"declared orders {sorted(declared)} do not match "
                             f"sections found ({len(entries)})")
    for k, want in declared.items():
        got = len(entries[k - 1])
        if got != want:
            raise ArpaParseError(0, f"\\{k}-grams: header declares {want} entries, "
                                 f"section has {got}")
    vocab = sorted(g[0] for g in entries[0] if g[0] != BOS)
    return ArpaModel(order=len(entries), entries=entries, vocab=vocab)
