"""SGD training loop with a step LR schedule, CER/WER metrics, and
checkpointing.

Batches group utterances of similar length (sorted, chunked, then the
chunk order is shuffled per epoch from one seeded stream); losses are
averaged per batch by scaling each utterance's loss before backward, so
gradients accumulate across the batch and a single optimizer step
follows. Training is deliberately sequential: one seed gives bitwise
identical parameter trajectories.

Utterances whose output length cannot hold the blank-extended target
(2*|target|+1 frames) are skipped and counted, never fatal. A NaN loss
halts training and the last good checkpoint survives; a NaN gradient
aborts just that step.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import load_features, read_manifest
from .ctc import Alphabet, LabelSequence, ctc_loss, ctc_loss_op, greedy_decode
from .errors import NumericsError
from .model import AcousticModel, save_checkpoint
from .tensor import Tensor, backward, no_grad, scale

log = logging.getLogger(__name__)

METRICS_HEADER = ["epoch", "split", "loss", "cer", "wer", "lr", "wall_s"]


@dataclass
class TrainConfig:
    lr0: float = 0.005
    momentum: float = 0.9
    lr_drop_epochs: list[int] = field(default_factory=lambda: [82, 123])
    lr_drop_factor: float = 10.0
    epochs: int = 200
    batch_size: int = 4
    seed: int = 0
    clip_norm: float = 5.0
    early_stop_cer: float | None = None

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ValueError(f"lr0 must be positive, got {self.lr0}")
        if self.lr_drop_factor <= 1:
            raise ValueError(f"lr_drop_factor must exceed 1, got {self.lr_drop_factor}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.clip_norm <= 0:
            raise ValueError(f"clip_norm must be positive, got {self.clip_norm}")


def lr_at(config: TrainConfig, epoch: int) -> float:
    """lr0 divided by factor^(number of drop epochs <= epoch)."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    drops = sum(1 for d in config.lr_drop_epochs if d <= epoch)
    return config.lr0 / config.lr_drop_factor ** drops


def sgd_step(params: list[Tensor], state: dict[int, np.ndarray], lr: float,
             momentum: float, clip_norm: float) -> float:
    """Global-norm clip, then v <- momentum*v + g and p <- p - lr*v.

    Returns the pre-clip gradient norm. Raises NumericsError on NaN grads
    (the step must be aborted by the caller).
    """
    sq = 0.0
    for p in params:
        g = p.grad
        if not np.all(np.isfinite(g)):
            raise NumericsError("gradient contains NaN/Inf")
        sq += float((g * g).sum())
    norm = float(np.sqrt(sq))
    factor = clip_norm / norm if norm > clip_norm else 1.0
    for p in params:
        v = state.get(id(p))
        if v is None:
            v = np.zeros_like(p.data)
            state[id(p)] = v
        v *= momentum
        v += p.grad * factor
        p.data -= lr * v
    return norm


@dataclass
class Utterance:
    utt_id: str
    features: np.ndarray  # [F, T]
    labels: LabelSequence
    transcript: str


def load_dataset(manifest_path, alphabet: Alphabet) -> list[Utterance]:
    """Load every feature cache named by the manifest and encode targets."""
    utts = []
    for entry in read_manifest(manifest_path):
        fm = load_features(entry.path)
        try:
            labels = alphabet.encode(entry.transcript)
        except KeyError as e:
            raise ValueError(f"utterance {entry.utt_id}: {e}") from None
        utts.append(Utterance(utt_id=entry.utt_id, features=fm.data,
                              labels=labels, transcript=entry.transcript))
    return utts


# ---------------------------------------------------------------------------
# edit distance
# ---------------------------------------------------------------------------


def edit_distance(ref: list, hyp: list) -> int:
    """Levenshtein distance with unit insert/delete/substitute costs."""
    n, m = len(ref), len(hyp)
    prev = list(range(m + 1))
    for i in range(1, n + 1):
        cur = [i] + [0] * m
        for j in range(1, m + 1):
            sub = prev[j - 1] + (ref[i - 1] != hyp[j - 1])
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, sub)
        prev = cur
    return prev[m]


def edit_distance_metrics(ref: str, hyp: str, unit: str = "word") -> tuple[int, int, float]:
    """(distance, reference length, error rate) at word or char level."""
    if unit == "word":
        r, h = ref.split(), hyp.split()
    elif unit == "char":
        r, h = list(ref), list(hyp)
    else:
        raise ValueError(f"unit must be 'word' or 'char', got {unit!r}")
    if not r:
        raise ValueError("error rate undefined for an empty reference")
    d = edit_distance(r, h)
    return d, len(r), d / len(r)


def corpus_error_rates(pairs: list[tuple[str, str]]) -> tuple[float, float]:
    """(CER, WER) pooled over (ref, hyp) pairs: total edits / total length."""
    c_err = c_len = w_err = w_len = 0
    for ref, hyp in pairs:
        c_err += edit_distance(list(ref), list(hyp))
        c_len += len(ref)
        w_err += edit_distance(ref.split(), hyp.split())
        w_len += len(ref.split())
    if c_len == 0 or w_len == 0:
        raise ValueError("error rate undefined: empty references")
    return c_err / c_len, w_err / w_len


# ---------------------------------------------------------------------------
# the loop
# ---------------------------------------------------------------------------


@dataclass
class MetricsRow:
    epoch: int
    split: str
    loss: float
    cer: float
    wer: float
    lr: float
    wall_s: float


@dataclass
class TrainResult:
    metrics: list[MetricsRow]
    best_wer: float
    best_cer: float
    best_epoch: int
    epochs_run: int
    skipped_utterances: int
    halted: str | None = None  # reason, when training stopped on divergence


def evaluate_split(model: AcousticModel, utts: list[Utterance],
                   alphabet: Alphabet) -> tuple[float, float, float]:
    """(mean loss, CER, WER) of greedy decodes in eval mode."""
    losses = []
    pairs = []
    with no_grad():
        for utt in utts:
            out = model(Tensor(utt.features), training=False)
            if out.data.shape[1] >= 2 * len(utt.labels) + 1:
                losses.append(ctc_loss(out.data, utt.labels.indices)[0])
            hyp = alphabet.decode(greedy_decode(out.data))
            pairs.append((utt.transcript, hyp))
    cer, wer = corpus_error_rates(pairs)
    return float(np.mean(losses)) if losses else float("nan"), cer, wer


def _batches(utts: list[Utterance], batch_size: int,
             rng: np.random.Generator) -> list[list[Utterance]]:
    by_length = sorted(utts, key=lambda u: (u.features.shape[1], u.utt_id))
    chunks = [by_length[i:i + batch_size] for i in range(0, len(by_length), batch_size)]
    order = rng.permutation(len(chunks))
    return [chunks[i] for i in order]


def train(model: AcousticModel, train_utts: list[Utterance], config: TrainConfig,
          alphabet: Alphabet, out_dir, val_utts: list[Utterance] | None = None,
          checkpoint_meta: dict | None = None) -> TrainResult:
    """Run the loop; writes metrics.csv, best.ckpt and final.ckpt to out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(config.seed)
    params = model.parameters()
    state: dict[int, np.ndarray] = {}
    metrics: list[MetricsRow] = []

    best_wer, best_cer, best_epoch = float("inf"), float("inf"), 0
    skipped_total = 0
    halted = None
    start = time.monotonic()
    epochs_run = 0

    best_path = out_dir / "best.ckpt"
    for epoch in range(1, config.epochs + 1):
        lr = lr_at(config, epoch)
        epoch_losses = []
        for batch in _batches(train_utts, config.batch_size, rng):
            usable = [u for u in batch
                      if model.output_length(u.features.shape[1]) >= 2 * len(u.labels) + 1]
            skipped = len(batch) - len(usable)
            if skipped:
                skipped_total += skipped
                log.warning("epoch %d: skipped %d utterance(s) too short for their "
                            "targets", epoch, skipped)
            if not usable:
                continue
            model.zero_grad()
            batch_loss = 0.0
            try:
                for utt in usable:
                    out = model(Tensor(utt.features), training=True)
                    loss = ctc_loss_op(out, utt.labels.indices)
                    batch_loss += loss.item()
                    backward(scale(loss, 1.0 / len(usable)))
                sgd_step(params, state, lr, config.momentum, config.clip_norm)
            except NumericsError as e:
                halted = f"epoch {epoch}: {e}"
                log.error("halting: %s (keeping last good checkpoint)", halted)
                break
            epoch_losses.append(batch_loss / len(usable))
        if halted:
            break
        epochs_run = epoch

        train_loss = float(np.mean(epoch_losses)) if epoch_losses else float("nan")
        _, train_cer, train_wer = evaluate_split(model, train_utts, alphabet)
        wall = time.monotonic() - start
        metrics.append(MetricsRow(epoch, "train", train_loss, train_cer, train_wer,
                                  lr, wall))
        sel_cer, sel_wer = train_cer, train_wer
        if val_utts:
            dev_loss, dev_cer, dev_wer = evaluate_split(model, val_utts, alphabet)
            metrics.append(MetricsRow(epoch, "dev", dev_loss, dev_cer, dev_wer,
                                      lr, wall))
            sel_cer, sel_wer = dev_cer, dev_wer
        if sel_wer < best_wer or (sel_wer == best_wer and sel_cer < best_cer):
            best_wer, best_cer, best_epoch = sel_wer, sel_cer, epoch
            save_checkpoint(best_path, model, meta=checkpoint_meta)
        if config.early_stop_cer is not None and train_cer <= config.early_stop_cer:
            log.info("early stop at epoch %d: training CER %.4f <= %.4f",
                     epoch, train_cer, config.early_stop_cer)
            break

    save_checkpoint(out_dir / "final.ckpt", model, meta=checkpoint_meta)
    if not best_path.exists():  # halted before any full epoch
        save_checkpoint(best_path, model, meta=checkpoint_meta)
    write_metrics_csv(out_dir / "metrics.csv", metrics)
    return TrainResult(metrics=metrics, best_wer=best_wer, best_cer=best_cer,
                       best_epoch=best_epoch, epochs_run=epochs_run,
                       skipped_utterances=skipped_total, halted=halted)


def write_metrics_csv(path, rows: list[MetricsRow]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(METRICS_HEADER)
        for r in rows:
            writer.writerow([r.epoch, r.split, f"{r.loss:.10g}", f"{r.cer:.10g}",
                             f"{r.wer:.10g}", f"{r.lr:.10g}", f"{r.wall_s:.3f}"])


def read_metrics_csv(path) -> list[MetricsRow]:
    rows = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != METRICS_HEADER:
            raise ValueError(f"{path}: unexpected metrics header {reader.fieldnames}")
        for rec in reader:
            rows.append(MetricsRow(epoch=int(rec["epoch"]), split=rec["split"],
                                   loss=float(rec["loss"]), cer=float(rec["cer"]),
                                   wer=float(rec["wer"]), lr=float(rec["lr"]),
                                   wall_s=float(rec["wall_s"])))
    return rows
