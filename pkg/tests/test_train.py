import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skipnet.ctc import Alphabet
from skipnet.errors import NumericsError
from skipnet.model import ModelConfig, build_model, load_checkpoint
from skipnet.tensor import Tensor
from skipnet.train import (TrainConfig, Utterance, corpus_error_rates,
                           edit_distance, edit_distance_metrics, lr_at,
                           read_metrics_csv, sgd_step, train)

logging.disable(logging.WARNING)

ALPHABET = Alphabet(["a", "b"])


def tiny_model(seed=0, kind="plain"):
    cfg = ModelConfig(connectivity=kind, input_features=5, width=6, body_layers=3,
                      body_kernel=3, stride_kernel=3, stride=1, head_kernel=3,
                      alphabet_size=2, growth_rate=2)
    return build_model(cfg, seed=seed)


def make_utts(n, seed=0, t_frames=20):
    rng = np.random.default_rng(seed)
    utts = []
    for i in range(n):
        text = "".join(rng.choice(["a", "b"]) for _ in range(3))
        # class-correlated features so the task is learnable
        feats = rng.normal(scale=0.3, size=(5, t_frames))
        for j, ch in enumerate(text):
            sl = slice(j * (t_frames // 3), (j + 1) * (t_frames // 3))
            feats[ALPHABET.index(ch) - 1, sl] += 2.0
        utts.append(Utterance(utt_id=f"u{i}", features=feats,
                              labels=ALPHABET.encode(text), transcript=text))
    return utts


class TestSgdStep:
    def test_vanilla_step(self):
        p = Tensor([0.0], requires_grad=True)
        p.grad[...] = 1.0
        sgd_step([p], {}, lr=0.1, momentum=0.0, clip_norm=100.0)
        np.testing.assert_allclose(p.data, [-0.1])

    def test_momentum_two_steps(self):
        p = Tensor([0.0], requires_grad=True)
        state = {}
        for _ in range(2):
            p.grad[...] = 1.0
            sgd_step([p], state, lr=1.0, momentum=0.9, clip_norm=100.0)
        np.testing.assert_allclose(p.data, [-2.9])  # -(1 + 1.9)

    def test_global_norm_clip(self):
        p = Tensor(np.zeros(4), requires_grad=True)
        p.grad[...] = np.array([6.0, 8.0, 0.0, 0.0])  # norm 10
        norm = sgd_step([p], {}, lr=1.0, momentum=0.0, clip_norm=1.0)
        assert norm == 10.0
        np.testing.assert_allclose(p.data, [-0.6, -0.8, 0.0, 0.0])

    def test_nan_grad_raises(self):
        p = Tensor([0.0], requires_grad=True)
        p.grad[...] = np.nan
        with pytest.raises(NumericsError):
            sgd_step([p], {}, lr=0.1, momentum=0.9, clip_norm=1.0)


class TestLrSchedule:
    def test_paper_schedule(self):
        cfg = TrainConfig(lr0=0.1, lr_drop_epochs=[82, 123], lr_drop_factor=10.0)
        assert lr_at(cfg, 81) == 0.1
        assert lr_at(cfg, 82) == pytest.approx(0.01)
        assert lr_at(cfg, 122) == pytest.approx(0.01)
        assert lr_at(cfg, 123) == pytest.approx(0.001)

    def test_no_drops(self):
        cfg = TrainConfig(lr0=0.5, lr_drop_epochs=[])
        assert lr_at(cfg, 1000) == 0.5

    def test_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(lr0=0.0)
        with pytest.raises(ValueError):
            TrainConfig(lr_drop_factor=1.0)


class TestEditDistance:
    def test_exact_match(self):
        assert edit_distance_metrics("the cat", "the cat", unit="word") == (0, 2, 0.0)

    def test_word_deletion(self):
        d, n, rate = edit_distance_metrics("a b c", "a c", unit="word")
        assert (d, n) == (1, 3)
        assert rate == pytest.approx(1 / 3)

    def test_char_substitution(self):
        d, n, rate = edit_distance_metrics("abc", "axc", unit="char")
        assert (d, n) == (1, 3)
        assert rate == pytest.approx(1 / 3)

    def test_empty_reference_rejected(self):
        with pytest.raises(ValueError, match="empty reference"):
            edit_distance_metrics("", "abc", unit="char")

    def test_corpus_rates(self):
        cer, wer = corpus_error_rates([("abc", "abc"), ("ab", "b")])
        assert cer == pytest.approx(1 / 5)
        assert wer == pytest.approx(1 / 2)

    @given(st.text("ab", max_size=8), st.text("ab", max_size=8))
    @settings(max_examples=60, deadline=None)
    def test_symmetry(self, a, b):
        assert edit_distance(list(a), list(b)) == edit_distance(list(b), list(a))

    @given(st.text("abc", max_size=6), st.text("abc", max_size=6),
           st.text("abc", max_size=6))
    @settings(max_examples=60, deadline=None)
    def test_triangle_inequality(self, a, b, c):
        ab = edit_distance(list(a), list(b))
        bc = edit_distance(list(b), list(c))
        ac = edit_distance(list(a), list(c))
        assert ac <= ab + bc

    @given(st.text("abcd", max_size=10))
    @settings(max_examples=40, deadline=None)
    def test_identity(self, a):
        assert edit_distance(list(a), list(a)) == 0


class TestTrainLoop:
    @pytest.mark.parametrize("kind", ["plain", "residual", "highway", "dense"])
    def test_single_utterance_loss_strictly_decreases(self, tmp_path, kind):
        # end-to-end gradient smoke test at the default learning rate
        model = tiny_model(seed=1, kind=kind)
        utts = make_utts(1, seed=2)
        cfg = TrainConfig(epochs=20, batch_size=1, seed=3, lr_drop_epochs=[])
        result = train(model, utts, cfg, ALPHABET, tmp_path / kind)
        losses = [r.loss for r in result.metrics if r.split == "train"]
        assert len(losses) == 20
        assert all(a > b for a, b in zip(losses, losses[1:])), losses

    def test_same_seed_identical_metrics_and_checkpoints(self, tmp_path):
        rows = []
        for run in range(2):
            model = tiny_model(seed=5)
            cfg = TrainConfig(lr0=0.02, epochs=5, batch_size=2, seed=9,
                              lr_drop_epochs=[])
            train(model, make_utts(4, seed=6), cfg, ALPHABET, tmp_path / f"r{run}")
            rows.append(read_metrics_csv(tmp_path / f"r{run}" / "metrics.csv"))
        for a, b in zip(rows[0], rows[1]):
            # identical modulo the wall-time column
            assert (a.epoch, a.split, a.loss, a.cer, a.wer, a.lr) == \
                   (b.epoch, b.split, b.loss, b.cer, b.wer, b.lr)
        for name in ("best.ckpt", "final.ckpt"):
            assert (tmp_path / "r0" / name).read_bytes() == \
                   (tmp_path / "r1" / name).read_bytes()

    def test_csv_lr_column_matches_lr_at(self, tmp_path):
        model = tiny_model(seed=7)
        cfg = TrainConfig(lr0=0.04, epochs=6, batch_size=2, seed=1,
                          lr_drop_epochs=[3, 5], lr_drop_factor=10.0)
        train(model, make_utts(3, seed=8), cfg, ALPHABET, tmp_path)
        for row in read_metrics_csv(tmp_path / "metrics.csv"):
            assert row.lr == pytest.approx(lr_at(cfg, row.epoch))

    def test_infeasible_target_skipped_not_fatal(self, tmp_path):
        model = tiny_model(seed=9)
        utts = make_utts(2, seed=10)
        # 30 labels cannot fit in the model's output frames: skipped, counted
        long_text = "ab" * 15
        utts.append(Utterance(utt_id="long", features=utts[0].features,
                              labels=ALPHABET.encode(long_text), transcript=long_text))
        cfg = TrainConfig(lr0=0.02, epochs=2, batch_size=4, seed=11, lr_drop_epochs=[])
        result = train(model, utts, cfg, ALPHABET, tmp_path)
        assert result.skipped_utterances == 2  # once per epoch
        assert result.epochs_run == 2

    @pytest.mark.filterwarnings("ignore:overflow encountered")
    def test_divergence_halts_with_checkpoint(self, tmp_path):
        model = tiny_model(seed=12)
        model.stem.conv.weight.data[...] = 1e308  # forward overflows immediately
        cfg = TrainConfig(lr0=0.02, epochs=3, batch_size=1, seed=13, lr_drop_epochs=[])
        result = train(model, make_utts(2, seed=14), cfg, ALPHABET, tmp_path)
        assert result.halted is not None
        assert (tmp_path / "best.ckpt").exists()
        load_checkpoint(tmp_path / "best.ckpt")  # parses and validates

    def test_early_stop_on_cer(self, tmp_path):
        model = tiny_model(seed=15)
        cfg = TrainConfig(lr0=0.03, epochs=400, batch_size=2, seed=16,
                          lr_drop_epochs=[], early_stop_cer=0.2)
        result = train(model, make_utts(4, seed=17), cfg, ALPHABET, tmp_path)
        assert result.epochs_run < 400
        train_rows = [r for r in result.metrics if r.split == "train"]
        assert train_rows[-1].cer <= 0.2

    def test_dev_split_rows_written(self, tmp_path):
        model = tiny_model(seed=18)
        cfg = TrainConfig(lr0=0.02, epochs=3, batch_size=2, seed=19, lr_drop_epochs=[])
        result = train(model, make_utts(3, seed=20), cfg, ALPHABET, tmp_path,
                       val_utts=make_utts(2, seed=21))
        splits = {r.split for r in result.metrics}
        assert splits == {"train", "dev"}
