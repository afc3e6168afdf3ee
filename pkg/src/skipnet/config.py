"""Run configuration: one JSON file binding model, features, training,
decoding, LM and synthesis settings.

Unknown keys are rejected at every level, dotted ``--set key=value``
overrides are applied before validation, and every command embeds the
resolved configuration in its output directory as ``run_config.json``.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .ctc import Alphabet
from .decoder import DecoderConfig
from .errors import ConfigError
from .model import ModelConfig
from .synth import SynthConfig
from .train import TrainConfig


@dataclass
class FeatureConfig:
    sample_rate: int = 16000
    frame_length_ms: float = 20.0
    frame_shift_ms: float = 10.0
    fft_size: int = 512
    normalize: bool = True

    def __post_init__(self):
        if self.sample_rate < 1:
            raise ConfigError("features.sample_rate", f"must be positive, got {self.sample_rate}")
        if self.fft_size < 1 or self.fft_size & (self.fft_size - 1):
            raise ConfigError("features.fft_size", f"must be a power of two, got {self.fft_size}")

    @property
    def num_features(self) -> int:
        return self.fft_size // 2 + 1


@dataclass
class LmSettings:
    order: int = 4
    mode: str = "char"

    def __post_init__(self):
        if self.order < 1:
            raise ConfigError("lm.order", f"must be >= 1, got {self.order}")
        if self.mode not in ("char", "word"):
            raise ConfigError("lm.mode", f"must be 'char' or 'word', got {self.mode!r}")


@dataclass
class DecoderSettings:
    beam_width: int = 32
    lm_weight: float = 1.0
    insertion_bonus: float = 1.5
    fusion_unit: str = "char"


# model keys derived from other sections rather than written by hand
_DERIVED_MODEL_KEYS = ("input_features", "alphabet_size")


def _build(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigError(path, f"expected an object, got {type(data).__name__}")
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"{path}.{sorted(unknown)[0]}", "unknown key")
    try:
        return cls(**data)
    except TypeError as e:
        raise ConfigError(path, str(e)) from None


@dataclass
class RunConfig:
    alphabet: list[str] = field(default_factory=lambda: ["a", "b", "c", "d"])
    features: FeatureConfig = field(default_factory=FeatureConfig)
    model: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    decoder: DecoderSettings = field(default_factory=DecoderSettings)
    lm: LmSettings = field(default_factory=LmSettings)
    synth: SynthConfig = field(default_factory=SynthConfig)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        allowed = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - allowed
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown top-level key")
        alphabet = data.get("alphabet", ["a", "b", "c", "d"])
        if (not isinstance(alphabet, list) or not alphabet
                or any(not isinstance(s, str) or not s for s in alphabet)):
            raise ConfigError("alphabet", "must be a non-empty list of symbols")
        model = data.get("model", {})
        for key in _DERIVED_MODEL_KEYS:
            if key in model:
                raise ConfigError(f"model.{key}",
                                  "derived from features/alphabet; remove it")
        cfg = cls(
            alphabet=list(alphabet),
            features=_build(FeatureConfig, data.get("features", {}), "features"),
            model=dict(model),
            train=_build(TrainConfig, data.get("train", {}), "train"),
            decoder=_build(DecoderSettings, data.get("decoder", {}), "decoder"),
            lm=_build(LmSettings, data.get("lm", {}), "lm"),
            synth=_build(SynthConfig, data.get("synth", {}), "synth"),
        )
        cfg.make_model_config()  # validate the model section eagerly
        return cfg

    @classmethod
    def load(cls, path, overrides: list[str] | None = None) -> "RunConfig":
        with open(path, encoding="utf-8") as f:
            try:
                data = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigError(str(path), f"invalid JSON: {e}") from None
        for item in overrides or []:
            data = apply_override(data, item)
        return cls.from_dict(data)

    def make_alphabet(self) -> Alphabet:
        return Alphabet(self.alphabet)

    def make_model_config(self, connectivity: str | None = None) -> ModelConfig:
        section = dict(self.model)
        if connectivity is not None:
            section["connectivity"] = connectivity
        allowed = {f.name for f in dataclasses.fields(ModelConfig)}
        unknown = set(section) - allowed
        if unknown:
            raise ConfigError(f"model.{sorted(unknown)[0]}", "unknown key")
        section["input_features"] = self.features.num_features
        section["alphabet_size"] = len(self.alphabet)
        try:
            return ModelConfig(**section)
        except TypeError as e:
            raise ConfigError("model", str(e)) from None

    def make_decoder_config(self, lm=None) -> DecoderConfig:
        return DecoderConfig(beam_width=self.decoder.beam_width,
                             lm_weight=self.decoder.lm_weight,
                             insertion_bonus=self.decoder.insertion_bonus,
                             fusion_unit=self.decoder.fusion_unit, lm=lm)

    def to_dict(self) -> dict:
        return {
            "alphabet": list(self.alphabet),
            "features": dataclasses.asdict(self.features),
            "model": dict(self.model),
            "train": dataclasses.asdict(self.train),
            "decoder": dataclasses.asdict(self.decoder),
            "lm": dataclasses.asdict(self.lm),
            "synth": dataclasses.asdict(self.synth),
        }

    def dump(self, out_dir) -> Path:
        """Embed the resolved config in a run's output directory."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / "run_config.json"
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")
        return path


def apply_override(data: dict, item: str) -> dict:
    """Apply one dotted --set override, e.g. train.lr0=0.05."""
    if "=" not in item:
        raise ConfigError(item, "override must look like section.key=value")
    dotted, raw = item.split("=", 1)
    keys = dotted.strip().split(".")
    if not all(keys):
        raise ConfigError(item, "empty key in override path")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = data
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError(dotted, f"cannot descend into non-object at {k!r}")
    node[keys[-1]] = value
    return data


def worker_count(n_items: int) -> int:
    """Worker threads for embarrassingly parallel stages, capped by the
    SKIPNET_THREADS environment variable."""
    cap = os.environ.get("SKIPNET_THREADS")
    limit = os.cpu_count() or 1
    if cap is not None:
        try:
            limit = max(1, int(cap))
        except ValueError:
            raise ConfigError("SKIPNET_THREADS", f"not an integer: {cap!r}") from None
    return max(1, min(limit, n_items))
