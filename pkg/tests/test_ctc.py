"""CTC loss against closed forms and the enumeration oracle."""

import itertools
import math

import numpy as np
import pytest

from abn import errors
from abn import tensor as tc
from abn.ctc import (
    BLANK,
    ErrorRate,
    LabelSequence,
    ctc_brute_force,
    ctc_feasible,
    ctc_loss,
    edit_distance,
    greedy_decode,
    min_frames,
    sequence_ctc_loss,
    token_error_rate,
)
from abn.data import SequenceBatch
from abn.tensor import GradTape, Tensor, backward, finite_diff_check, recording


class TestLabelSequence:
    def test_rejects_blank(self):
        with pytest.raises(errors.ContractError):
            LabelSequence([1, BLANK, 2])

    def test_rejects_negative(self):
        with pytest.raises(errors.ContractError):
            LabelSequence([-1])

    def test_empty_allowed(self):
        assert len(LabelSequence([])) == 0

    def test_min_frames_counts_repeats(self):
        assert min_frames(LabelSequence([1, 2, 3])) == 3
        assert min_frames(LabelSequence([1, 1])) == 3
        assert min_frames(LabelSequence([1, 1, 1])) == 5
        assert min_frames(LabelSequence([])) == 0


class TestCtcLossClosedForms:
    def test_single_frame_uniform(self):
        loss = ctc_loss(Tensor([[0.0, 0.0]]), LabelSequence([1]))
        assert loss.item() == pytest.approx(math.log(2.0), abs=1e-12)

    def test_two_frames_uniform(self):
        loss = ctc_loss(Tensor([[0.0, 0.0], [0.0, 0.0]]), LabelSequence([1]))
        # paths (a,a), (a,-), (-,a): p = 3/4
        assert loss.item() == pytest.approx(-math.log(0.75), abs=1e-12)
        assert loss.item() == pytest.approx(0.2876820724517809, abs=1e-12)

    def test_empty_labels_all_blank_path(self):
        rng = np.random.default_rng(2)
        logits = rng.normal(size=(3, 4))
        loss = ctc_loss(Tensor(logits), LabelSequence([]))
        y_log = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
        assert loss.item() == pytest.approx(-y_log[:, BLANK].sum(), abs=1e-12)

    def test_infeasible_gives_infinite_loss_and_zero_grad(self):
        logits = Tensor(np.random.default_rng(3).normal(size=(2, 3)))
        tape = GradTape()
        with recording(tape):
            loss = ctc_loss(logits, LabelSequence([1, 1]))  # needs 3 frames
        assert math.isinf(loss.item())
        g = backward(tape, loss).wrt(logits)
        np.testing.assert_array_equal(g, np.zeros((2, 3)))
        assert not ctc_feasible(2, LabelSequence([1, 1]))

    def test_label_outside_vocab_rejected(self):
        with pytest.raises(errors.ContractError):
            ctc_loss(Tensor(np.zeros((3, 2))), LabelSequence([2]))

    def test_shift_invariance(self):
        rng = np.random.default_rng(5)
        logits = rng.normal(size=(4, 3))
        labels = LabelSequence([2, 1])
        base = ctc_loss(Tensor(logits), labels).item()
        shifted = logits + rng.normal(size=(4, 1))  # per-frame constant
        assert ctc_loss(Tensor(shifted), labels).item() == pytest.approx(base, abs=1e-10)


class TestBruteForce:
    def test_matches_closed_forms(self):
        lp_uniform = np.log(np.full((1, 2), 0.5))
        assert ctc_brute_force(lp_uniform, LabelSequence([1])) == pytest.approx(
            math.log(2.0), abs=1e-12
        )
        lp2 = np.log(np.full((2, 2), 0.5))
        assert ctc_brute_force(lp2, LabelSequence([1])) == pytest.approx(
            -math.log(0.75), abs=1e-12
        )

    def test_labels_longer_than_frames(self):
        lp = np.log(np.full((2, 3), 1.0 / 3.0))
        assert math.isinf(ctc_brute_force(lp, LabelSequence([1, 2, 1])))

    def test_deterministic_path_probability_one(self):
        lp = np.full((3, 2), -np.inf)
        lp[0, 1] = 0.0  # emit token 1
        lp[1, 0] = 0.0  # blank
        lp[2, 1] = 0.0  # emit token 1 again
        assert ctc_brute_force(lp, LabelSequence([1, 1])) == pytest.approx(0.0, abs=1e-12)

    def test_refuses_large_instances(self):
        with pytest.raises(errors.ContractError):
            ctc_brute_force(np.zeros((9, 2)), LabelSequence([1]))
        with pytest.raises(errors.ContractError):
            ctc_brute_force(np.zeros((3, 5)), LabelSequence([1]))


def all_label_sequences(vocab, max_len):
    tokens = range(1, vocab)
    for length in range(max_len + 1):
        for combo in itertools.product(tokens, repeat=length):
            yield LabelSequence(list(combo))


class TestOracleSweep:
    @pytest.mark.parametrize("vocab", [2, 3])
    def test_exhaustive_agreement(self, vocab):
        rng = np.random.default_rng(1000 + vocab)
        for t_frames in range(1, 7):
            for labels in all_label_sequences(vocab, 3):
                logits = rng.normal(size=(t_frames, vocab))
                y_log = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
                expect = ctc_brute_force(y_log, labels)
                got = ctc_loss(Tensor(logits), labels).item()
                if math.isinf(expect):
                    assert math.isinf(got), f"T={t_frames}, labels={labels}"
                else:
                    assert got == pytest.approx(expect, abs=1e-9), (
                        f"T={t_frames}, labels={labels}"
                    )


class TestGradient:
    @pytest.mark.parametrize(
        "t_frames,tokens",
        [(3, [1]), (4, [2, 1]), (5, [1, 1]), (6, [1, 2, 1]), (2, [])],
    )
    def test_finite_differences(self, t_frames, tokens):
        rng = np.random.default_rng(60 + t_frames)
        logits = Tensor(rng.normal(size=(t_frames, 3)))
        err = finite_diff_check(lambda t: ctc_loss(t, LabelSequence(tokens)), logits)
        assert err < 1e-4

    def test_gradient_rows_sum_to_zero(self):
        # Shift invariance implies each frame's gradient sums to zero.
        rng = np.random.default_rng(70)
        logits = Tensor(rng.normal(size=(5, 3)))
        tape = GradTape()
        with recording(tape):
            loss = ctc_loss(logits, LabelSequence([1, 2]))
        g = backward(tape, loss).wrt(logits)
        np.testing.assert_allclose(g.sum(axis=1), np.zeros(5), atol=1e-12)


class TestGreedyDecode:
    def test_collapse_repeats(self):
        logits = np.full((4, 3), -5.0)
        for t, sym in enumerate((1, 1, 0, 1)):
            logits[t, sym] = 5.0
        assert greedy_decode(Tensor(logits)).tokens == [1, 1]

    def test_all_blank(self):
        logits = np.zeros((3, 2))
        logits[:, BLANK] = 9.0
        assert greedy_decode(Tensor(logits)).tokens == []

    def test_blank_separates(self):
        logits = np.full((3, 3), -5.0)
        for t, sym in enumerate((1, 0, 2)):
            logits[t, sym] = 5.0
        assert greedy_decode(Tensor(logits)).tokens == [1, 2]

    def test_ties_pick_lowest_index(self):
        assert greedy_decode(Tensor(np.zeros((2, 3)))).tokens == []


class TestErrorRate:
    def test_identical(self):
        r = token_error_rate(LabelSequence([1, 2, 3]), LabelSequence([1, 2, 3]))
        assert r == ErrorRate(0, 0.0)

    def test_single_substitution(self):
        r = token_error_rate(LabelSequence([1, 2, 3]), LabelSequence([1, 2, 4]))
        assert r.distance == 1
        assert r.rate == pytest.approx(1.0 / 3.0)

    def test_empty_hypothesis(self):
        r = token_error_rate(LabelSequence([]), LabelSequence([5, 6, 7, 8]))
        assert r == ErrorRate(4, 1.0)

    def test_empty_reference_flagged(self):
        r = token_error_rate(LabelSequence([1]), LabelSequence([]))
        assert r.distance == 1
        assert r.rate is None

    def test_edit_distance_dp(self):
        assert edit_distance([1, 2, 3], [2, 3, 4]) == 2
        assert edit_distance([], [1, 1]) == 2
        assert edit_distance([1, 3, 5], [1, 3, 5]) == 0
        assert edit_distance("kitten", "sitting") == 3


class TestSequenceLoss:
    def test_mean_over_utterances(self):
        rng = np.random.default_rng(80)
        feats = rng.normal(size=(2, 4, 3))
        batch = SequenceBatch(Tensor(feats), [4, 2])
        labels = [LabelSequence([1, 2]), LabelSequence([1])]
        total = sequence_ctc_loss(batch, labels)
        l0 = ctc_loss(Tensor(feats[0]), labels[0]).item()
        l1 = ctc_loss(Tensor(feats[1, :2]), labels[1]).item()
        assert total.item() == pytest.approx((l0 + l1) / 2.0, abs=1e-12)

    def test_only_valid_frames_consumed(self):
        rng = np.random.default_rng(81)
        feats = rng.normal(size=(1, 5, 3))
        corrupted = feats.copy()
        corrupted[0, 3:] = 77.0
        labels = [LabelSequence([2])]
        a = sequence_ctc_loss(SequenceBatch(Tensor(feats), [3]), labels)
        b = sequence_ctc_loss(SequenceBatch(Tensor(corrupted), [3]), labels)
        assert a.item() == b.item()

    def test_infeasible_member_poisons_batch(self):
        feats = np.zeros((2, 2, 3))
        batch = SequenceBatch(Tensor(feats), [2, 1])
        labels = [LabelSequence([1]), LabelSequence([1, 1])]
        assert math.isinf(sequence_ctc_loss(batch, labels).item())

    def test_label_count_mismatch(self):
        batch = SequenceBatch(Tensor(np.zeros((2, 2, 3))), [2, 2])
        with pytest.raises(errors.ShapeError):
            sequence_ctc_loss(batch, [LabelSequence([1])])

    def test_gradient_through_batch(self):
        rng = np.random.default_rng(82)
        feats = Tensor(rng.normal(size=(2, 4, 3)))
        labels = [LabelSequence([1, 2]), LabelSequence([2])]

        def f(theta):
            return sequence_ctc_loss(SequenceBatch(theta, [4, 3]), labels)

        assert finite_diff_check(f, feats) < 1e-4
