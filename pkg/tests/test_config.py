import json

import pytest

from skipnet.config import RunConfig, apply_override, worker_count
from skipnet.errors import ConfigError


def write_config(tmp_path, data):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(data))
    return path


class TestRunConfig:
    def test_defaults_round_trip(self):
        cfg = RunConfig.from_dict({})
        assert cfg.alphabet == ["a", "b", "c", "d"]
        assert cfg.features.num_features == 257
        again = RunConfig.from_dict(cfg.to_dict())
        assert again.to_dict() == cfg.to_dict()

    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigError, match="optimizer"):
            RunConfig.from_dict({"optimizer": {}})

    def test_unknown_nested_key(self):
        with pytest.raises(ConfigError, match="train.warmup"):
            RunConfig.from_dict({"train": {"warmup": 5}})

    def test_unknown_model_key(self):
        with pytest.raises(ConfigError, match="model.depth"):
            RunConfig.from_dict({"model": {"depth": 9}})

    def test_derived_model_keys_rejected(self):
        with pytest.raises(ConfigError, match="derived"):
            RunConfig.from_dict({"model": {"alphabet_size": 3}})

    def test_alphabet_validation(self):
        with pytest.raises(ConfigError, match="alphabet"):
            RunConfig.from_dict({"alphabet": []})
        with pytest.raises(ConfigError, match="alphabet"):
            RunConfig.from_dict({"alphabet": ["a", 3]})

    def test_model_config_derivation(self):
        cfg = RunConfig.from_dict({"alphabet": ["x", "y"],
                                   "features": {"fft_size": 128}})
        mc = cfg.make_model_config("dense")
        assert mc.input_features == 65
        assert mc.alphabet_size == 2
        assert mc.connectivity == "dense"

    def test_bad_feature_values(self):
        with pytest.raises(ConfigError, match="fft_size"):
            RunConfig.from_dict({"features": {"fft_size": 100}})

    def test_load_with_overrides(self, tmp_path):
        path = write_config(tmp_path, {"train": {"lr0": 0.1}})
        cfg = RunConfig.load(path, overrides=["train.lr0=0.25",
                                              "decoder.beam_width=8",
                                              "lm.mode=word"])
        assert cfg.train.lr0 == 0.25
        assert cfg.decoder.beam_width == 8
        assert cfg.lm.mode == "word"

    def test_override_syntax_errors(self):
        with pytest.raises(ConfigError, match="override"):
            apply_override({}, "no-equals-sign")

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError, match="invalid JSON"):
            RunConfig.load(path)

    def test_dump_embeds_resolved_config(self, tmp_path):
        cfg = RunConfig.from_dict({"train": {"lr0": 0.07}})
        path = cfg.dump(tmp_path / "out")
        data = json.loads(path.read_text())
        assert data["train"]["lr0"] == 0.07
        assert RunConfig.from_dict(data).train.lr0 == 0.07


class TestWorkerCount:
    def test_env_caps_threads(self, monkeypatch):
        monkeypatch.setenv("SKIPNET_THREADS", "2")
        assert worker_count(100) == 2

    def test_items_cap(self, monkeypatch):
        monkeypatch.setenv("SKIPNET_THREADS", "16")
        assert worker_count(3) == 3

    def test_at_least_one(self, monkeypatch):
        monkeypatch.setenv("SKIPNET_THREADS", "0")
        assert worker_count(10) == 1

    def test_bad_env_value(self, monkeypatch):
        monkeypatch.setenv("SKIPNET_THREADS", "lots")
        with pytest.raises(ConfigError, match="SKIPNET_THREADS"):
            worker_count(10)
