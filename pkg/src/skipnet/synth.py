"""Synthetic tone-coded speech corpus.

Each transcript character maps to a fixed-frequency sine segment (tone
for the first fraction of the segment, near-silence for the rest) with
white noise over the whole utterance, so an utterance of L characters
lasts exactly L * segment_ms. Frequencies are spaced so the default
feature settings put each character on its own spectrogram bin, which
makes the corpus learnable by a small model in a few dozen epochs.

Everything derives from one seeded generator; the same seed reproduces
the corpus byte for byte.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import ManifestEntry, Waveform, write_manifest, write_wav


@dataclass
class SynthConfig:
    n_utts: int = 20
    seed: int = 7
    min_len: int = 3
    max_len: int = 8
    segment_ms: float = 100.0
    tone_fraction: float = 0.7
    base_freq: float = 500.0
    freq_step: float = 375.0
    amplitude: float = 0.28
    amplitude_jitter: float = 0.05
    noise_level: float = 0.01

    def __post_init__(self):
        if self.n_utts < 1:
            raise ValueError(f"n_utts must be >= 1, got {self.n_utts}")
        if not 1 <= self.min_len <= self.max_len:
            raise ValueError(f"bad transcript length range [{self.min_len}, {self.max_len}]")
        if not 0.0 < self.tone_fraction <= 1.0:
            raise ValueError(f"tone_fraction must be in (0, 1], got {self.tone_fraction}")


def character_frequency(config: SynthConfig, char_index: int) -> float:
    return config.base_freq + config.freq_step * char_index


def synthesize_utterance(transcript: str, alphabet: list[str], sample_rate: int,
                         config: SynthConfig, rng: np.random.Generator) -> Waveform:
    seg = int(round(sample_rate * config.segment_ms / 1000.0))
    tone_len = int(round(seg * config.tone_fraction))
    samples = rng.normal(scale=config.noise_level, size=seg * len(transcript))
    for i, ch in enumerate(transcript):
        freq = character_frequency(config, alphabet.index(ch))
        amp = config.amplitude + rng.uniform(-1, 1) * config.amplitude_jitter
        t = np.arange(tone_len) / sample_rate
        samples[i * seg:i * seg + tone_len] += amp * np.sin(2.0 * np.pi * freq * t)
    return Waveform(sample_rate=sample_rate, samples=np.clip(samples, -1.0, 1.0))


def synth_corpus(out_dir, alphabet: list[str], sample_rate: int,
                 config: SynthConfig) -> list[ManifestEntry]:
    """Generate WAVs plus a wav manifest and an LM corpus file."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(config.seed)
    entries = []
    for i in range(config.n_utts):
        length = int(rng.integers(config.min_len, config.max_len + 1))
        transcript = "".join(alphabet[int(k)]
                             for k in rng.integers(len(alphabet), size=length))
        wav_path = out_dir / f"utt_{i:04d}.wav"
        write_wav(wav_path, synthesize_utterance(transcript, alphabet, sample_rate,
                                                 config, rng))
        entries.append(ManifestEntry(utt_id=f"utt_{i:04d}", path=wav_path,
                                     transcript=transcript))
    write_manifest(out_dir / "wavs.tsv", entries)
    with open(out_dir / "corpus.txt", "w", encoding="utf-8") as f:
        for e in entries:
            f.write(e.transcript + "\n")
    return entries
