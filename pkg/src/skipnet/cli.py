"""Command-line interface: the pipeline end to end.

    skipnet synth-data --config toy.json --out data/
    skipnet featurize  --config toy.json --manifest data/wavs.tsv --out feats/
    skipnet lm-train   --config toy.json --corpus data/corpus.txt --out lm.arpa
    skipnet train      --config toy.json --manifest feats/features.tsv --out run/
    skipnet decode     --config toy.json --checkpoint run/best.ckpt \
                       --manifest feats/features.tsv --lm lm.arpa --out hyps.tsv
    skipnet evaluate   --ref feats/features.tsv --hyp hyps.tsv --out summary.csv
    skipnet evaluate   --all-variants --config toy.json --out comparison/
    skipnet gradcheck
    skipnet report     --run comparison/

Every command is deterministic given its inputs and seed; resolved
configuration is embedded in each output directory. SKIPNET_THREADS
caps worker threads for the per-utterance stages.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .audio import (ManifestEntry, normalize, read_manifest, read_wav,
                    save_features, spectrogram, write_manifest)
from .blocks import ConnectivityKind
from .config import RunConfig, worker_count
from .ctc import Alphabet, greedy_decode
from .decoder import prefix_beam_search
from .errors import ConfigError
from .gradcheck import run_all as run_gradient_suite
from .lm import SPACE, ArpaModel, arpa_read, arpa_write, train_lm
from .model import build_model, load_checkpoint
from .synth import synth_corpus
from .tensor import Tensor, no_grad
from .train import corpus_error_rates, load_dataset, train

log = logging.getLogger("skipnet")

KINDS = [k.value for k in ConnectivityKind]


# ---------------------------------------------------------------------------
# command bodies
# ---------------------------------------------------------------------------


def cmd_synth_data(cfg: RunConfig, out_dir: Path) -> None:
    entries = synth_corpus(out_dir, cfg.alphabet, cfg.features.sample_rate, cfg.synth)
    cfg.dump(out_dir)
    log.info("wrote %d utterances to %s", len(entries), out_dir)


def featurize_manifest(cfg: RunConfig, manifest_path, out_dir: Path) -> Path:
    """WAVs to feature caches plus a feature manifest; returns its path."""
    entries = read_manifest(manifest_path)
    out_dir.mkdir(parents=True, exist_ok=True)
    fc = cfg.features

    def one(entry: ManifestEntry) -> ManifestEntry:
        wav = read_wav(entry.path)
        if wav.sample_rate != fc.sample_rate:
            raise ConfigError("features.sample_rate",
                              f"{entry.path} has {wav.sample_rate} Hz, "
                              f"config expects {fc.sample_rate} Hz")
        fm = spectrogram(wav, fc.frame_length_ms, fc.frame_shift_ms, fc.fft_size)
        if fc.normalize:
            fm = normalize(fm)
        feat_path = out_dir / (entry.utt_id + ".feat")
        save_features(feat_path, fm)
        return ManifestEntry(utt_id=entry.utt_id, path=feat_path,
                             transcript=entry.transcript)

    with ThreadPoolExecutor(max_workers=worker_count(len(entries))) as pool:
        feat_entries = list(pool.map(one, entries))
    manifest = out_dir / "features.tsv"
    write_manifest(manifest, feat_entries)
    cfg.dump(out_dir)
    log.info("featurized %d utterances to %s", len(feat_entries), out_dir)
    return manifest


def cmd_lm_train(cfg: RunConfig, corpus_path, out_path: Path) -> ArpaModel:
    with open(corpus_path, encoding="utf-8") as f:
        lines = [line.rstrip("\n") for line in f if line.strip()]
    model = train_lm(lines, order=cfg.lm.order, mode=cfg.lm.mode)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    arpa_write(model, out_path)
    log.info("trained %d-gram %s LM on %d lines -> %s",
             cfg.lm.order, cfg.lm.mode, len(lines), out_path)
    return model


def _checkpoint_meta(cfg: RunConfig) -> dict:
    return {"alphabet": list(cfg.alphabet),
            "features": dataclasses.asdict(cfg.features)}


def cmd_train(cfg: RunConfig, manifest_path, out_dir: Path,
              val_manifest=None, connectivity: str | None = None):
    alphabet = cfg.make_alphabet()
    model_cfg = cfg.make_model_config(connectivity)
    model = build_model(model_cfg, seed=cfg.train.seed)
    utts = load_dataset(manifest_path, alphabet)
    val = load_dataset(val_manifest, alphabet) if val_manifest else None
    cfg.dump(out_dir)
    result = train(model, utts, cfg.train, alphabet, out_dir, val_utts=val,
                   checkpoint_meta=_checkpoint_meta(cfg))
    last = result.metrics[-1] if result.metrics else None
    log.info("trained %s for %d epochs; best WER %.4f (epoch %d)%s",
             model_cfg.connectivity, result.epochs_run, result.best_wer,
             result.best_epoch,
             f"; final train CER {last.cer:.4f}" if last else "")
    if result.halted:
        log.warning("training halted early: %s", result.halted)
    return result


def _validate_lm_alphabet(lm: ArpaModel, alphabet: Alphabet, fusion_unit: str) -> None:
    if fusion_unit != "char":
        return
    vocab = set(lm.vocab)
    missing = [s for s in alphabet.symbols
               if (SPACE if s.isspace() else s) not in vocab]
    if missing:
        raise ConfigError("decoder.lm",
                          f"LM vocabulary lacks alphabet symbols {missing}; "
                          "train the LM on matching transcripts")


def decode_manifest(cfg: RunConfig, checkpoint_path, manifest_path, out_path: Path,
                    lm_path=None, mode: str = "beam") -> list[tuple[str, str]]:
    """Decode every utterance; writes ``utt-id<TAB>transcript`` lines."""
    if mode not in ("beam", "greedy"):
        raise ConfigError("mode", f"must be 'beam' or 'greedy', got {mode!r}")
    alphabet = cfg.make_alphabet()
    model, meta = load_checkpoint(checkpoint_path)
    if meta.get("alphabet") and list(meta["alphabet"]) != list(cfg.alphabet):
        raise ConfigError("alphabet",
                          f"checkpoint was trained with alphabet {meta['alphabet']}, "
                          f"config has {cfg.alphabet}")
    lm = arpa_read(lm_path) if lm_path else None
    dec_cfg = cfg.make_decoder_config(lm)
    if lm is not None:
        _validate_lm_alphabet(lm, alphabet, dec_cfg.fusion_unit)
    utts = load_dataset(manifest_path, alphabet)

    def one(utt) -> tuple[str, str]:
        with no_grad():
            logprobs = model(Tensor(utt.features), training=False).data
        if mode == "greedy":
            text = alphabet.decode(greedy_decode(logprobs))
        else:
            text = prefix_beam_search(logprobs, dec_cfg, alphabet).text
        return utt.utt_id, text

    with ThreadPoolExecutor(max_workers=worker_count(len(utts))) as pool:
        hyps = list(pool.map(one, utts))
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", encoding="utf-8") as f:
        for utt_id, text in hyps:
            f.write(f"{utt_id}\t{text}\n")
    log.info("decoded %d utterances (%s) -> %s", len(hyps), mode, out_path)
    return hyps


def read_hypotheses(path) -> dict[str, str]:
    hyps = {}
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if "\t" not in line:
                raise ValueError(f"{path}:{line_no}: expected 'utt-id<TAB>transcript'")
            utt_id, text = line.split("\t", 1)
            hyps[utt_id] = text
    return hyps


def score_files(ref_manifest, hyp_path) -> tuple[float, float, int]:
    refs = read_manifest(ref_manifest)
    hyps = read_hypotheses(hyp_path)
    pairs = []
    for entry in refs:
        if entry.utt_id not in hyps:
            raise ValueError(f"{hyp_path}: no hypothesis for utterance "
                             f"{entry.utt_id!r}")
        pairs.append((entry.transcript, hyps[entry.utt_id]))
    cer, wer = corpus_error_rates(pairs)
    return cer, wer, len(pairs)


def cmd_evaluate_files(ref_manifest, hyp_path, out_path: Path | None) -> tuple[float, float]:
    cer, wer, n = score_files(ref_manifest, hyp_path)
    if out_path is not None:
        out_path.parent.mkdir(parents=True, exist_ok=True)
        with open(out_path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["n_utts", "cer", "wer"])
            writer.writerow([n, f"{cer:.6f}", f"{wer:.6f}"])
    print(f"utterances: {n}  CER: {cer:.4f}  WER: {wer:.4f}")
    return cer, wer


COMPARISON_HEADER = ["connectivity", "params", "epochs", "train_cer",
                     "greedy_cer", "greedy_wer", "beam_cer", "beam_wer"]


@dataclasses.dataclass
class VariantOutcome:
    train_result: object
    wall_s: float
    greedy_path: Path
    beam_path: Path
    greedy_wer: float
    beam_wer: float


@dataclasses.dataclass
class ComparisonResult:
    summary_path: Path
    variants: dict[str, VariantOutcome]


def run_comparison(cfg: RunConfig, out_dir: Path,
                   kinds: list[str] | None = None) -> ComparisonResult:
    """The controlled comparison: one config, all four connectivity kinds.

    Generates data, featurizes, trains the character LM, then trains and
    decodes each variant. Emits comparison.csv (one row per kind) plus
    the training-curve and summary figures alongside it.
    """
    from .report import plot_training_curves, plot_wer_summary

    kinds = kinds or KINDS
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg.dump(out_dir)

    data_dir = out_dir / "data"
    synth_corpus(data_dir, cfg.alphabet, cfg.features.sample_rate, cfg.synth)
    feat_manifest = featurize_manifest(cfg, data_dir / "wavs.tsv", out_dir / "features")
    lm_path = out_dir / "lm.arpa"
    cmd_lm_train(cfg, data_dir / "corpus.txt", lm_path)

    rows = []
    metrics_paths = {}
    variants: dict[str, VariantOutcome] = {}
    for kind in kinds:
        t0 = time.monotonic()
        kind_dir = out_dir / kind
        result = cmd_train(cfg, feat_manifest, kind_dir, connectivity=kind)
        ckpt = kind_dir / "best.ckpt"
        greedy_path = kind_dir / "hyps_greedy.tsv"
        beam_path = kind_dir / "hyps_beam.tsv"
        decode_manifest(cfg, ckpt, feat_manifest, greedy_path, mode="greedy")
        decode_manifest(cfg, ckpt, feat_manifest, beam_path, lm_path=lm_path,
                        mode="beam")
        g_cer, g_wer, _ = score_files(feat_manifest, greedy_path)
        b_cer, b_wer, _ = score_files(feat_manifest, beam_path)
        model_cfg = cfg.make_model_config(kind)
        n_params = build_model(model_cfg, seed=cfg.train.seed).num_parameters()
        rows.append([kind, n_params, result.epochs_run, f"{result.best_cer:.6f}",
                     f"{g_cer:.6f}", f"{g_wer:.6f}", f"{b_cer:.6f}", f"{b_wer:.6f}"])
        metrics_paths[kind] = kind_dir / "metrics.csv"
        wall = time.monotonic() - t0
        variants[kind] = VariantOutcome(train_result=result, wall_s=wall,
                                        greedy_path=greedy_path, beam_path=beam_path,
                                        greedy_wer=g_wer, beam_wer=b_wer)
        log.info("%s: greedy WER %.4f, beam WER %.4f (%.1fs)", kind, g_wer, b_wer, wall)

    summary = out_dir / "comparison.csv"
    with open(summary, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(COMPARISON_HEADER)
        writer.writerows(rows)
    plot_training_curves(metrics_paths, out_dir)
    plot_wer_summary(summary, out_dir)
    log.info("comparison table -> %s", summary)
    return ComparisonResult(summary_path=summary, variants=variants)


def cmd_report(run_dir: Path, out_dir: Path | None, split: str) -> None:
    from .report import plot_training_curves, plot_wer_summary

    out_dir = out_dir or run_dir
    metrics = {k: run_dir / k / "metrics.csv" for k in KINDS
               if (run_dir / k / "metrics.csv").exists()}
    single = run_dir / "metrics.csv"
    if not metrics and single.exists():
        metrics = {"run": single}
    if not metrics:
        raise ValueError(f"{run_dir}: no metrics.csv found (looked for "
                         f"<kind>/metrics.csv and metrics.csv)")
    written = plot_training_curves(metrics, out_dir, split=split)
    summary = run_dir / "comparison.csv"
    if summary.exists():
        written.append(plot_wer_summary(summary, out_dir))
    for path in written:
        log.info("figure -> %s", path)


def cmd_gradcheck() -> int:
    results = run_gradient_suite()
    failures = 0
    for r in results:
        print(r.line())
        failures += not r.ok
    print(f"{len(results) - failures}/{len(results)} gradient checks passed")
    return 1 if failures else 0


# ---------------------------------------------------------------------------
# argument wiring
# ---------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser, config_required: bool = True) -> None:
    p.add_argument("--config", required=config_required, help="run config JSON")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   dest="overrides", help="override a config value (dotted path)")
    p.add_argument("--seed", type=int, default=None,
                   help="override the stage seed (train.seed and synth.seed)")


def _load_config(args) -> RunConfig:
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides += [f"train.seed={args.seed}", f"synth.seed={args.seed}"]
    return RunConfig.load(args.config, overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="skipnet",
        description="1-D convolutional CTC speech recognition with swappable "
                    "skip-connectivity")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate the synthetic tone corpus")
    _add_common(p)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--n-utts", type=int, default=None)

    p = sub.add_parser("featurize", help="WAV manifest -> feature caches")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, type=Path)

    p = sub.add_parser("lm-train", help="train the n-gram LM, write ARPA")
    _add_common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, type=Path)

    p = sub.add_parser("train", help="train one acoustic model")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--val-manifest", default=None)
    p.add_argument("--out", required=True, type=Path)

    p = sub.add_parser("decode", help="decode a feature manifest")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--lm", default=None, help="ARPA LM for beam fusion")
    p.add_argument("--mode", choices=["beam", "greedy"], default="beam")

    p = sub.add_parser("evaluate", help="score hypotheses, or run the "
                                        "all-variants comparison")
    _add_common(p, config_required=False)
    p.add_argument("--all-variants", action="store_true")
    p.add_argument("--kinds", nargs="+", choices=KINDS, default=None)
    p.add_argument("--ref", default=None, help="reference manifest")
    p.add_argument("--hyp", default=None, help="hypotheses TSV")
    p.add_argument("--out", type=Path, default=None)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suites")

    p = sub.add_parser("report", help="render figures from a run's CSVs")
    p.add_argument("--run", required=True, type=Path)
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--split", choices=["train", "dev"], default="train")

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "synth-data":
            cfg = _load_config(args)
            if args.n_utts is not None:
                cfg.synth.n_utts = args.n_utts
            cmd_synth_data(cfg, args.out)
        elif args.command == "featurize":
            featurize_manifest(_load_config(args), args.manifest, args.out)
        elif args.command == "lm-train":
            cmd_lm_train(_load_config(args), args.corpus, args.out)
        elif args.command == "train":
            cmd_train(_load_config(args), args.manifest, args.out,
                      val_manifest=args.val_manifest)
        elif args.command == "decode":
            decode_manifest(_load_config(args), args.checkpoint, args.manifest,
                            args.out, lm_path=args.lm, mode=args.mode)
        elif args.command == "evaluate":
            if args.all_variants:
                if not args.config or args.out is None:
                    raise ConfigError("evaluate", "--all-variants needs --config and --out")
                run_comparison(_load_config(args), args.out, kinds=args.kinds)
            else:
                if not args.ref or not args.hyp:
                    raise ConfigError("evaluate", "need --ref and --hyp (or --all-variants)")
                cmd_evaluate_files(args.ref, args.hyp, args.out)
        elif args.command == "gradcheck":
            return cmd_gradcheck()
        elif args.command == "report":
            cmd_report(args.run, args.out, args.split)
    except (ValueError, OSError, KeyError, ArithmeticError) as e:
        log.error("%s", e)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
