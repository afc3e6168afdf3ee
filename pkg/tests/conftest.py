import logging
from dataclasses import dataclass
from pathlib import Path

import pytest

from skipnet.cli import main

logging.getLogger("skipnet").setLevel(logging.WARNING)

CONFIG = str(Path(__file__).resolve().parent.parent / "configs" / "toy.json")

# keep the shared pipeline small: 8 utterances, train until the set is solved
FAST_OVERRIDES = ["--set", "synth.n_utts=8", "--set", "train.epochs=80",
                  "--set", "train.lr0=0.02", "--set", "train.early_stop_cer=0.0"]


@dataclass
class ToyRun:
    config: str
    data_dir: Path
    feat_manifest: Path
    lm_path: Path
    run_dir: Path
    checkpoint: Path


@pytest.fixture(scope="session")
def toy_run(tmp_path_factory) -> ToyRun:
    """synth -> featurize -> lm-train -> train, shared across CLI tests."""
    root = tmp_path_factory.mktemp("toyrun")
    data = root / "data"
    feats = root / "feats"
    run = root / "run"
    lm = root / "lm.arpa"
    assert main(["synth-data", "--config", CONFIG, "--out", str(data),
                 *FAST_OVERRIDES]) == 0
    assert main(["featurize", "--config", CONFIG, "--manifest",
                 str(data / "wavs.tsv"), "--out", str(feats), *FAST_OVERRIDES]) == 0
    assert main(["lm-train", "--config", CONFIG, "--corpus",
                 str(data / "corpus.txt"), "--out", str(lm), *FAST_OVERRIDES]) == 0
    assert main(["train", "--config", CONFIG, "--manifest",
                 str(feats / "features.tsv"), "--out", str(run),
                 *FAST_OVERRIDES]) == 0
    return ToyRun(config=CONFIG, data_dir=data, feat_manifest=feats / "features.tsv",
                  lm_path=lm, run_dir=run, checkpoint=run / "best.ckpt")
