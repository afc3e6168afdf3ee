"""Figures rendered from the delimited outputs.

The CSVs remain the contract; these helpers draw the standard
comparison plots next to them: training curves (loss and error rates
per epoch, one line per connectivity kind) and a bar chart of the final
word error rates. matplotlib runs on the Agg backend so reports render
headless.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .train import read_metrics_csv  # noqa: E402

_COLORS = {"plain": "#444444", "residual": "#1f77b4",
           "highway": "#d62728", "dense": "#2ca02c"}


def _color(kind: str) -> str:
    return _COLORS.get(kind, "#9467bd")


def plot_training_curves(metrics_by_kind: dict[str, Path], out_dir,
                         split: str = "train") -> list[Path]:
    """Loss and error-rate curves per connectivity kind; returns the files."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    series = {}
    for kind, path in sorted(metrics_by_kind.items()):
        rows = [r for r in read_metrics_csv(path) if r.split == split]
        if rows:
            series[kind] = rows

    written = []
    for field, ylabel, fname in [("loss", "CTC loss", "loss_curves.png"),
                                 ("cer", "character error rate", "cer_curves.png"),
                                 ("wer", "word error rate", "wer_curves.png")]:
        fig, ax = plt.subplots(figsize=(6.0, 3.8))
        for kind, rows in series.items():
            ax.plot([r.epoch for r in rows], [getattr(r, field) for r in rows],
                    label=kind, color=_color(kind), linewidth=1.4)
        ax.set_xlabel("epoch")
        ax.set_ylabel(ylabel)
        ax.set_title(f"{ylabel} ({split} split)")
        ax.grid(True, alpha=0.3)
        if series:
            ax.legend()
        fig.tight_layout()
        path = out_dir / fname
        fig.savefig(path, dpi=130)
        plt.close(fig)
        written.append(path)
    return written


def plot_wer_summary(summary_csv, out_dir) -> Path:
    """Bar chart of the per-connectivity summary table."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    kinds, greedy, beam = [], [], []
    with open(summary_csv, newline="") as f:
        for rec in csv.DictReader(f):
            kinds.append(rec["connectivity"])
            greedy.append(float(rec["greedy_wer"]))
            beam.append(float(rec["beam_wer"]))
    x = range(len(kinds))
    fig, ax = plt.subplots(figsize=(6.0, 3.8))
    width = 0.38
    ax.bar([i - width / 2 for i in x], greedy, width, label="greedy",
           color="#999999")
    ax.bar([i + width / 2 for i in x], beam, width, label="beam + LM",
           color=[_color(k) for k in kinds])
    ax.set_xticks(list(x))
    ax.set_xticklabels(kinds)
    ax.set_ylabel("word error rate")
    ax.set_title("decode error by connectivity")
    ax.grid(True, axis="y", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    path = out_dir / "wer_summary.png"
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path
