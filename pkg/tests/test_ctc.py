import math

import numpy as np
import pytest

from skipnet.ctc import (Alphabet, ctc_brute_force, ctc_log_prob, ctc_loss,
                         ctc_loss_op, ctc_path_distribution, greedy_decode,
                         min_frames)
from skipnet.errors import InfeasibleTargetError, ShapeError
from skipnet.tensor import Tensor, backward


def uniform_logprobs(v, t):
    return np.full((v, t), -math.log(v))


def random_logprobs(v, t, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(v, t))
    return x - np.log(np.exp(x).sum(axis=0, keepdims=True))


class TestAlphabet:
    def test_roundtrip(self):
        a = Alphabet(["a", "b", "c"])
        seq = a.encode("cab")
        assert seq.indices == (3, 1, 2)
        assert a.decode(seq.indices) == "cab"

    def test_blank_reserved(self):
        a = Alphabet(["x"])
        assert a.index("x") == 1
        assert a.num_classes == 2

    def test_duplicate_symbols_rejected(self):
        with pytest.raises(ValueError):
            Alphabet(["a", "a"])

    def test_unknown_symbol(self):
        with pytest.raises(KeyError):
            Alphabet(["a"]).encode("b")


class TestCtcLoss:
    def test_single_frame_single_label(self):
        loss, _ = ctc_loss(uniform_logprobs(2, 1), [1])
        assert abs(loss - math.log(2)) < 1e-12

    def test_two_frames_three_paths(self):
        # paths aa, a-, -a collapse to "a": P = 3/4
        loss, _ = ctc_loss(uniform_logprobs(2, 2), [1])
        assert abs(loss - math.log(4.0 / 3.0)) < 1e-12

    def test_empty_target_is_all_blank_path(self):
        lp = random_logprobs(3, 6, seed=0)
        loss, grad = ctc_loss(lp, [])
        assert abs(loss + lp[0].sum()) < 1e-12
        np.testing.assert_allclose(grad[0], -1.0, atol=1e-12)
        np.testing.assert_allclose(grad[1:], 0.0, atol=1e-12)

    def test_infeasible_raises_not_inf(self):
        with pytest.raises(InfeasibleTargetError):
            ctc_loss(uniform_logprobs(3, 2), [1, 1])  # repeat needs 3 frames

    def test_min_frames(self):
        assert min_frames([]) == 0
        assert min_frames([1]) == 1
        assert min_frames([1, 1]) == 3
        assert min_frames([1, 2, 2, 1]) == 5

    def test_label_out_of_range(self):
        with pytest.raises(ShapeError):
            ctc_loss(uniform_logprobs(2, 4), [2])

    def test_matches_brute_force_on_spec_instances(self):
        for t, target in [(1, [1]), (2, [1])]:
            loss, _ = ctc_loss(uniform_logprobs(2, t), target)
            oracle = ctc_brute_force(uniform_logprobs(2, t), target)
            assert abs(loss - oracle) < 1e-12

    def test_brute_force_equivalence_random(self):
        # the defining invariant: forward-backward equals path enumeration
        rng = np.random.default_rng(42)
        checked = 0
        while checked < 200:
            v = int(rng.integers(2, 5))  # alphabet size <= 3 plus blank
            t = int(rng.integers(1, 9))
            tgt_len = int(rng.integers(0, 4))
            target = list(rng.integers(1, v, size=tgt_len))
            lp = random_logprobs(v, t, seed=int(rng.integers(2 ** 31)))
            if t < min_frames(target):
                with pytest.raises(InfeasibleTargetError):
                    ctc_loss(lp, target)
                continue
            loss, _ = ctc_loss(lp, target)
            assert abs(loss - ctc_brute_force(lp, target)) < 1e-9
            checked += 1

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        for trial in range(5):
            v, t = 4, 7
            x = rng.normal(size=(v, t))
            target = [1, 3, 2]

            def loss_of(xflat):
                lp = xflat.reshape(v, t)
                lp = lp - np.log(np.exp(lp).sum(axis=0, keepdims=True))
                return ctc_loss(lp, target)[0]

            # gradient wrt the raw logprobs (holding them as free variables)
            lp = x - np.log(np.exp(x).sum(axis=0, keepdims=True))
            _, grad = ctc_loss(lp, target)
            eps = 1e-6
            for idx in np.ndindex(v, t):
                lp_hi = lp.copy()
                lp_hi[idx] += eps
                lp_lo = lp.copy()
                lp_lo[idx] -= eps
                num = (ctc_loss_unnormalized(lp_hi, target) -
                       ctc_loss_unnormalized(lp_lo, target)) / (2 * eps)
                rel = abs(grad[idx] - num) / max(1.0, abs(grad[idx]))
                assert rel < 1e-5

    def test_gradient_columns_sum_to_minus_one(self):
        # total state occupancy at each frame equals P(target), so the
        # gradient over symbols must sum to exactly -1 per frame
        rng = np.random.default_rng(6)
        checked = 0
        while checked < 25:
            v, t = int(rng.integers(2, 6)), int(rng.integers(1, 12))
            target = list(rng.integers(1, v, size=int(rng.integers(0, 5))))
            if t < min_frames(target):
                continue
            lp = random_logprobs(v, t, seed=int(rng.integers(2 ** 31)))
            _, grad = ctc_loss(lp, target)
            np.testing.assert_allclose(grad.sum(axis=0), -1.0, atol=1e-12)
            checked += 1

    def test_one_hot_path_loss_zero(self):
        lp = np.full((3, 4), -745.0)  # effectively zero probability
        path = [1, 0, 2, 2]
        for t, s in enumerate(path):
            lp[s, t] = 0.0
        loss, _ = ctc_loss(lp, [1, 2])
        assert abs(loss) < 1e-9

    def test_permutation_covariant(self):
        lp = random_logprobs(4, 6, seed=9)
        loss, _ = ctc_loss(lp, [1, 3, 2])
        perm = np.array([0, 3, 1, 2])  # relabel symbols 1->3, 2->1, 3->2
        lp_perm = np.empty_like(lp)
        for old in range(4):
            lp_perm[perm[old]] = lp[old]
        loss_perm, _ = ctc_loss(lp_perm, [int(perm[i]) for i in (1, 3, 2)])
        assert abs(loss - loss_perm) < 1e-12

    def test_total_mass_at_most_one(self):
        for seed in range(5):
            lp = random_logprobs(3, 5, seed=seed)
            dist = ctc_path_distribution(lp)
            total = sum(dist.values())
            assert total <= 1.0 + 1e-9
            assert abs(total - 1.0) < 1e-9  # full paths partition the space


def ctc_loss_unnormalized(lp, target):
    """Forward pass treating lp entries as free log-scores."""
    return ctc_loss(lp, target)[0]


class TestBruteForce:
    def test_refuses_large_instances(self):
        with pytest.raises(ValueError, match="refused"):
            ctc_brute_force(uniform_logprobs(10, 8), [1])

    def test_target_longer_than_frames(self):
        with pytest.raises(InfeasibleTargetError):
            ctc_brute_force(uniform_logprobs(3, 2), [1, 2, 1])

    def test_one_hot_path_spelling_target(self):
        lp = np.full((3, 4), -745.0)
        for t, s in enumerate([1, 0, 2, 2]):
            lp[s, t] = 0.0
        assert abs(ctc_brute_force(lp, [1, 2])) < 1e-9

    def test_deterministic_path(self):
        lp = np.log(np.array([[0.1, 0.8, 0.1],
                              [0.8, 0.1, 0.1],
                              [0.1, 0.1, 0.8]]))
        loss = ctc_brute_force(lp, [1, 2])
        by_hand = 0.0
        for path in [(0, 1, 2), (1, 0, 2), (1, 1, 2), (1, 2, 2), (1, 2, 0)]:
            p = 1.0
            for t, s in enumerate(path):
                p *= np.exp(lp[s, t])
            by_hand += p
        assert abs(loss + math.log(by_hand)) < 1e-12


class TestCtcOp:
    def test_backward_injects_gradient(self):
        lp_data = random_logprobs(3, 5, seed=1)
        lp = Tensor(lp_data, requires_grad=True)
        loss = ctc_loss_op(lp, [1, 2])
        backward(loss)
        _, grad = ctc_loss(lp_data, [1, 2])
        np.testing.assert_allclose(lp.grad, grad, atol=1e-12)


class TestGreedyDecode:
    def test_collapse_repeats(self):
        frames = [1, 1, 0, 1]
        lp = np.full((2, 4), -10.0)
        for t, s in enumerate(frames):
            lp[s, t] = 0.0
        assert greedy_decode(lp) == (1, 1)

    def test_all_blank_empty(self):
        lp = np.zeros((3, 5))
        lp[0] = 10.0
        assert greedy_decode(lp) == ()

    def test_abb_pattern(self):
        frames = [1, 2, 2, 0, 2]
        lp = np.full((3, 5), -10.0)
        for t, s in enumerate(frames):
            lp[s, t] = 0.0
        assert greedy_decode(lp) == (1, 2, 2)

    def test_log_prob_of_empty_frames(self):
        assert ctc_log_prob(np.zeros((2, 0)), []) == 0.0
        assert ctc_log_prob(np.zeros((2, 0)), [1]) == -np.inf
