import logging
import math

import numpy as np
import pytest

from skipnet.ctc import Alphabet, ctc_path_distribution, greedy_decode
from skipnet.decoder import DecoderConfig, exhaustive_decode, prefix_beam_search
from skipnet.lm import train_lm

logging.disable(logging.WARNING)


def random_logprobs(v, t, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(v, t))
    return x - np.log(np.exp(x).sum(axis=0, keepdims=True))


def peaked_logprobs(frames, v, strength=8.0):
    lp = np.full((v, len(frames)), -strength)
    for t, s in enumerate(frames):
        lp[s, t] = 0.0
    return lp - np.log(np.exp(lp).sum(axis=0, keepdims=True))


AB = Alphabet(["a", "b"])


class TestExhaustive:
    def test_uniform_two_frames_prefers_single_symbol(self):
        lp = np.full((2, 2), math.log(0.5))
        res = exhaustive_decode(lp, DecoderConfig(lm_weight=0, insertion_bonus=0),
                                Alphabet(["a"]))
        assert res.text == "a"  # P(a)=3/4 beats P('')=1/4
        assert abs(res.score - math.log(0.75)) < 1e-12

    def test_blank_frames_decode_empty(self):
        lp = peaked_logprobs([0, 0, 0], v=3)
        res = exhaustive_decode(lp, DecoderConfig(lm_weight=0, insertion_bonus=0), AB)
        assert res.text == ""

    def test_refuses_large_instances(self):
        with pytest.raises(ValueError, match="refused"):
            exhaustive_decode(np.zeros((30, 30)), DecoderConfig(), AB)

    def test_lm_dominates_when_weight_huge(self):
        lm = train_lm(["ab"] * 20, order=2, mode="char")
        cfg = DecoderConfig(lm_weight=60.0, insertion_bonus=0.0, lm=lm)
        lp = random_logprobs(3, 4, seed=3)
        res = exhaustive_decode(lp, cfg, AB)
        assert res.text == "ab"
        res_beam = prefix_beam_search(lp, cfg, AB)
        assert res_beam.text == "ab"


class TestPrefixBeamSearch:
    def test_empty_input(self):
        res = prefix_beam_search(np.zeros((3, 0)), DecoderConfig(), AB)
        assert res.text == "" and res.score == 0.0

    def test_matches_exhaustive_no_fusion(self):
        cfg_args = dict(lm_weight=0.0, insertion_bonus=0.0)
        rng = np.random.default_rng(17)
        for _ in range(30):
            v = int(rng.integers(2, 4))  # |A| <= 2 plus blank
            t = int(rng.integers(1, 7))
            lp = random_logprobs(v, t, seed=int(rng.integers(2 ** 31)))
            alphabet = Alphabet(["a", "b"][:v - 1])
            full = DecoderConfig(beam_width=v ** t, **cfg_args)
            got = prefix_beam_search(lp, full, alphabet)
            want = exhaustive_decode(lp, full, alphabet)
            assert got.labels == want.labels, (lp.shape, got.text, want.text)

    def test_final_scores_equal_exhaustive_ctc_probability(self):
        lp = random_logprobs(3, 5, seed=23)
        cfg = DecoderConfig(beam_width=10 ** 4, lm_weight=0.0, insertion_bonus=0.0)
        res = prefix_beam_search(lp, cfg, AB)
        dist = ctc_path_distribution(lp)
        # merge correctness: every surviving prefix's probability equals the
        # brute-force sum over frame paths that collapse to it
        for hyp in res.beam:
            want = dist.get(hyp.prefix, 0.0)
            assert abs(math.exp(hyp.log_p_total) - want) < 1e-12, hyp.prefix
        total = sum(math.exp(h.log_p_total) for h in res.beam)
        assert abs(total - 1.0) < 1e-9

    def test_beam_one_on_peaked_frames_equals_greedy(self):
        frames = [1, 1, 0, 2, 2, 0, 1]
        lp = peaked_logprobs(frames, v=3, strength=12.0)
        cfg = DecoderConfig(beam_width=1, lm_weight=0.0, insertion_bonus=0.0)
        res = prefix_beam_search(lp, cfg, AB)
        assert res.labels == greedy_decode(lp)

    def test_monotone_in_beam_width(self):
        rng = np.random.default_rng(29)
        for _ in range(20):
            lp = random_logprobs(3, int(rng.integers(2, 7)),
                                 seed=int(rng.integers(2 ** 31)))
            scores = []
            for b in (1, 2, 4, 8):
                cfg = DecoderConfig(beam_width=b, lm_weight=0.0, insertion_bonus=0.0)
                scores.append(prefix_beam_search(lp, cfg, AB).score)
            assert all(a <= b + 1e-12 for a, b in zip(scores, scores[1:])), scores

    def test_matches_exhaustive_with_char_fusion(self):
        lm = train_lm(["abab", "abba", "ab", "baba"], order=3, mode="char")
        rng = np.random.default_rng(2024)
        for _ in range(20):
            t = int(rng.integers(1, 6))
            lp = random_logprobs(3, t, seed=int(rng.integers(2 ** 31)))
            cfg = DecoderConfig(beam_width=3 ** t, lm_weight=1.3,
                                insertion_bonus=0.7, lm=lm)
            beam = prefix_beam_search(lp, cfg, AB)
            exact = exhaustive_decode(lp, cfg, AB)
            assert beam.labels == exact.labels
            assert abs(beam.score - exact.score) < 1e-9

    def test_matches_exhaustive_with_word_fusion(self):
        alphabet = Alphabet(["a", "b", " "])
        lm = train_lm(["ab a", "a ab", "ab ab"], order=2, mode="word")
        rng = np.random.default_rng(77)
        for _ in range(10):
            t = int(rng.integers(1, 5))
            lp = random_logprobs(4, t, seed=int(rng.integers(2 ** 31)))
            cfg = DecoderConfig(beam_width=4 ** t, lm_weight=2.0,
                                insertion_bonus=0.3, fusion_unit="word", lm=lm)
            beam = prefix_beam_search(lp, cfg, alphabet)
            exact = exhaustive_decode(lp, cfg, alphabet)
            assert beam.labels == exact.labels
            assert abs(beam.score - exact.score) < 1e-9

    def test_deterministic(self):
        lp = random_logprobs(3, 6, seed=31)
        cfg = DecoderConfig(beam_width=4)
        a = prefix_beam_search(lp, cfg, AB)
        b = prefix_beam_search(lp, cfg, AB)
        assert a.labels == b.labels and a.score == b.score

    def test_insertion_bonus_lengthens_output(self):
        lp = random_logprobs(3, 6, seed=37)
        short = prefix_beam_search(lp, DecoderConfig(beam_width=64, lm_weight=0,
                                                     insertion_bonus=0.0), AB)
        long = prefix_beam_search(lp, DecoderConfig(beam_width=64, lm_weight=0,
                                                    insertion_bonus=5.0), AB)
        assert len(long.labels) >= len(short.labels)

    def test_char_lm_fusion_changes_ranking(self):
        lm = train_lm(["abab", "abab", "ab"], order=3, mode="char")
        lp = random_logprobs(3, 5, seed=41)
        plain = prefix_beam_search(lp, DecoderConfig(beam_width=32, lm_weight=0.0,
                                                     insertion_bonus=0.0), AB)
        fused = prefix_beam_search(lp, DecoderConfig(beam_width=32, lm_weight=8.0,
                                                     insertion_bonus=0.0, lm=lm), AB)
        assert fused.score != plain.score

    def test_word_fusion_smoke(self):
        alphabet = Alphabet(["a", "b", " "])
        lm = train_lm(["ab ab", "ab b"], order=2, mode="word")
        lp = random_logprobs(4, 6, seed=43)
        cfg = DecoderConfig(beam_width=16, lm_weight=1.0, insertion_bonus=0.5,
                            fusion_unit="word", lm=lm)
        res = prefix_beam_search(lp, cfg, alphabet)
        assert math.isfinite(res.score)

    def test_unnormalized_rejected(self):
        with pytest.raises(ValueError, match="normalized"):
            prefix_beam_search(np.zeros((3, 4)), DecoderConfig(), AB)

    def test_bad_config(self):
        with pytest.raises(ValueError):
            DecoderConfig(beam_width=0)
        with pytest.raises(ValueError):
            DecoderConfig(lm_weight=-1.0)
        with pytest.raises(ValueError):
            DecoderConfig(fusion_unit="sentence")
