"""WAV ingestion, log-spectrogram features, and the feature cache format.

Input audio is RIFF/WAVE, 16-bit PCM, mono; anything else is rejected
with the offending field named. Features are log-magnitude spectra of
Hann-windowed frames (rfft is used for speed; the naive DFT defines
correctness and the tests hold the two together).

Cache layout (little-endian): magic "SKNF", u32 version, u32 F, u32 T,
u32 sample_rate, f64 frame_length_ms, f64 frame_shift_ms, then F*T
float64 values row-major. Manifests are TSV lines of
``utterance-id<TAB>path<TAB>transcript``; relative paths resolve against
the manifest's directory.
"""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import UnsupportedFormatError

_PCM_SCALE = 32768.0
_LOG_FLOOR = 1e-10
_CACHE_MAGIC = b"SKNF"
_CACHE_VERSION = 1


@dataclass
class Waveform:
    sample_rate: int
    samples: np.ndarray  # float64 in [-1, 1]

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class FeatureMatrix:
    data: np.ndarray  # [F, T] log-magnitude
    sample_rate: int
    frame_length_ms: float
    frame_shift_ms: float

    @property
    def num_features(self) -> int:
        return self.data.shape[0]

    @property
    def num_frames(self) -> int:
        return self.data.shape[1]


def read_wav(path) -> Waveform:
    try:
        with wave.open(str(path), "rb") as w:
            if w.getcomptype() != "NONE":
                raise UnsupportedFormatError(
                    f"{path}: compression type {w.getcomptype()!r}, expected PCM ('NONE')")
            if w.getnchannels() != 1:
                raise UnsupportedFormatError(
                    f"{path}: {w.getnchannels()} channels, expected mono")
            if w.getsampwidth() != 2:
                raise UnsupportedFormatError(
                    f"{path}: sample width {w.getsampwidth()} bytes, expected 2 (16-bit)")
            rate = w.getframerate()
            raw = w.readframes(w.getnframes())
    except wave.Error as e:
        raise UnsupportedFormatError(f"{path}: not a RIFF/WAVE file ({e})") from None
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / _PCM_SCALE
    return Waveform(sample_rate=rate, samples=np.clip(samples, -1.0, 1.0))


def write_wav(path, waveform: Waveform) -> None:
    pcm = np.clip(np.rint(waveform.samples * _PCM_SCALE), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(waveform.sample_rate)
        w.writeframes(pcm.tobytes())


def hann_window(length: int) -> np.ndarray:
    if length == 1:
        return np.ones(1)
    n = np.arange(length)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * n / (length - 1)))


def spectrogram(waveform: Waveform, frame_length_ms: float = 20.0,
                frame_shift_ms: float = 10.0, fft_size: int = 512) -> FeatureMatrix:
    """Hann-windowed log-magnitude spectrogram, F = fft_size/2 + 1 bins."""
    if fft_size < 1 or fft_size & (fft_size - 1):
        raise ValueError(f"fft_size must be a power of two, got {fft_size}")
    sr = waveform.sample_rate
    frame = int(round(sr * frame_length_ms / 1000.0))
    shift = int(round(sr * frame_shift_ms / 1000.0))
    if frame < 1 or shift < 1:
        raise ValueError(f"frame/shift too small: {frame} samples / {shift} samples")
    if frame > fft_size:
        raise ValueError(f"frame of {frame} samples exceeds fft_size {fft_size}")
    n = len(waveform.samples)
    if n < frame:
        raise ValueError(f"utterance of {n} samples is shorter than one "
                         f"{frame}-sample frame")
    t_frames = 1 + (n - frame) // shift
    window = hann_window(frame)
    idx = np.arange(frame)[None, :] + (np.arange(t_frames) * shift)[:, None]
    segments = waveform.samples[idx] * window  # [T, frame]
    padded = np.zeros((t_frames, fft_size))
    padded[:, :frame] = segments
    mag = np.abs(np.fft.rfft(padded, axis=1))  # [T, F]
    data = np.log(np.maximum(mag, _LOG_FLOOR)).T
    return FeatureMatrix(data=data, sample_rate=sr,
                         frame_length_ms=frame_length_ms, frame_shift_ms=frame_shift_ms)


def normalize(features: FeatureMatrix, eps: float = 1e-10) -> FeatureMatrix:
    """Per-utterance, per-feature zero mean and unit variance."""
    if features.num_frames < 2:
        raise ValueError(f"normalization needs at least 2 frames, got {features.num_frames}")
    mean = features.data.mean(axis=1, keepdims=True)
    var = features.data.var(axis=1, keepdims=True)
    data = (features.data - mean) / np.sqrt(var + eps)
    return FeatureMatrix(data=data, sample_rate=features.sample_rate,
                         frame_length_ms=features.frame_length_ms,
                         frame_shift_ms=features.frame_shift_ms)


def save_features(path, features: FeatureMatrix) -> None:
    f_dim, t_dim = features.data.shape
    with open(path, "wb") as f:
        f.write(_CACHE_MAGIC)
        f.write(struct.pack("<IIII", _CACHE_VERSION, f_dim, t_dim, features.sample_rate))
        f.write(struct.pack("<dd", features.frame_length_ms, features.frame_shift_ms))
        f.write(np.ascontiguousarray(features.data, dtype="<f8").tobytes())


def load_features(path) -> FeatureMatrix:
    with open(path, "rb") as f:
        if f.read(4) != _CACHE_MAGIC:
            raise UnsupportedFormatError(f"{path}: not a skipnet feature cache")
        version, f_dim, t_dim, rate = struct.unpack("<IIII", f.read(16))
        if version != _CACHE_VERSION:
            raise UnsupportedFormatError(f"{path}: unsupported cache version {version}")
        frame_ms, shift_ms = struct.unpack("<dd", f.read(16))
        data = np.frombuffer(f.read(8 * f_dim * t_dim), dtype="<f8")
        if data.size != f_dim * t_dim:
            raise UnsupportedFormatError(f"{path}: truncated feature data")
    return FeatureMatrix(data=data.reshape(f_dim, t_dim).copy(), sample_rate=rate,
                         frame_length_ms=frame_ms, frame_shift_ms=shift_ms)


@dataclass
class ManifestEntry:
    utt_id: str
    path: Path
    transcript: str


def read_manifest(path) -> list[ManifestEntry]:
    base = Path(path).parent
    entries = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path}:{line_no}: expected 3 tab-separated fields, "
                                 f"got {len(parts)}")
            utt_id, p, transcript = parts
            file_path = Path(p)
            if not file_path.is_absolute():
                file_path = base / file_path
            entries.append(ManifestEntry(utt_id=utt_id, path=file_path,
                                         transcript=transcript))
    if not entries:
        raise ValueError(f"{path}: manifest is empty")
    return entries


def write_manifest(path, entries: list[ManifestEntry]) -> None:
    base = Path(path).parent
    with open(path, "w", encoding="utf-8") as f:
        for e in entries:
            p = Path(e.path)
            try:
                p = p.relative_to(base)
            except ValueError:
                pass
            f.write(f"{e.utt_id}\t{p}\t{e.transcript}\n")
