"""Tensor core: forward semantics, taped gradients, finite differences."""

import math

import numpy as np
import pytest

from abn import errors
from abn import tensor as tc
from abn.tensor import GradTape, Tensor, backward, finite_diff_check, recording


class TestTensorBasics:
    def test_values_are_row_major_float64(self):
        t = Tensor([[1, 2], [3, 4]])
        assert t.data.dtype == np.float64
        assert t.values.tolist() == [1.0, 2.0, 3.0, 4.0]
        assert t.size == 4

    def test_rejects_nonfinite(self):
        with pytest.raises(errors.DomainError):
            Tensor([1.0, float("nan")])
        with pytest.raises(errors.DomainError):
            Tensor([float("inf")])

    def test_rejects_zero_dimension(self):
        with pytest.raises(errors.ShapeError):
            Tensor(np.zeros((2, 0)))

    def test_immutable(self):
        t = Tensor([1.0, 2.0])
        with pytest.raises(ValueError):
            t.data[0] = 5.0

    def test_constructor_copies_input(self):
        src = np.array([1.0, 2.0])
        t = Tensor(src)
        src[0] = 99.0
        assert t.values[0] == 1.0


class TestMatmul:
    def test_identity(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]])
        out = tc.matmul(tc.eye(2), a)
        np.testing.assert_array_equal(out.data, a.data)

    def test_hand_product(self):
        out = tc.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        assert out.data.tolist() == [[11.0]]

    def test_zero_annihilates(self):
        rng = np.random.default_rng(0)
        b = Tensor(rng.normal(size=(3, 4)))
        out = tc.matmul(tc.zeros(2, 3), b)
        np.testing.assert_array_equal(out.data, np.zeros((2, 4)))

    def test_dimension_mismatch_names_shapes(self):
        with pytest.raises(errors.ShapeError, match=r"\(2, 3\).*\(2, 4\)"):
            tc.matmul(tc.zeros(2, 3), tc.zeros(2, 4))

    def test_associative_on_random_triples(self):
        rng = np.random.default_rng(7)
        for _ in range(5):
            a = Tensor(rng.normal(size=(4, 3)))
            b = Tensor(rng.normal(size=(3, 5)))
            c = Tensor(rng.normal(size=(5, 2)))
            left = tc.matmul(tc.matmul(a, b), c).data
            right = tc.matmul(a, tc.matmul(b, c)).data
            np.testing.assert_allclose(left, right, rtol=1e-10, atol=1e-12)


class TestAffine:
    def test_identity_weight(self):
        v = Tensor([1.5, -2.0, 0.25])
        out = tc.affine(v, tc.eye(3), tc.zeros(3))
        np.testing.assert_array_equal(out.data, v.data)

    def test_hand_case(self):
        out = tc.affine(Tensor([3.0]), Tensor([[2.0]]), Tensor([1.0]))
        assert out.data.tolist() == [7.0]

    def test_zero_weight_returns_bias(self):
        out = tc.affine(Tensor([5.0, -3.0]), tc.zeros(4, 2), Tensor([1.0, 2.0, 3.0, 4.0]))
        assert out.data.tolist() == [1.0, 2.0, 3.0, 4.0]

    def test_batched_rows(self):
        # Rows are independent samples: [B, in] @ W.T + b.
        x = Tensor([[1.0, 0.0], [0.0, 1.0]])
        w = Tensor([[2.0, 3.0]])
        b = Tensor([10.0])
        out = tc.affine(x, w, b)
        assert out.data.tolist() == [[12.0], [13.0]]


class TestElementwise:
    def test_sigmoid_symmetry(self):
        assert tc.sigmoid(Tensor([0.0])).item() == 0.5

    def test_sigmoid_closed_form(self):
        assert tc.sigmoid(Tensor([math.log(3.0)])).item() == pytest.approx(0.75, abs=1e-15)

    def test_tanh_odd(self):
        assert tc.tanh(Tensor([0.0])).item() == 0.0

    def test_log_rejects_nonpositive(self):
        with pytest.raises(errors.DomainError):
            tc.log(Tensor([0.0]))


class TestMaskedSoftmax:
    def test_uniform(self):
        out = tc.masked_softmax(Tensor([0.0, 0.0]))
        assert out.data.tolist() == [0.5, 0.5]

    def test_closed_form(self):
        out = tc.masked_softmax(Tensor([math.log(2.0), 0.0]))
        np.testing.assert_allclose(out.data, [2.0 / 3.0, 1.0 / 3.0], atol=1e-15)

    def test_masked_position_exactly_zero(self):
        out = tc.masked_softmax(Tensor([0.0, 0.0, 5.0]), valid=2)
        assert out.data.tolist() == [0.5, 0.5, 0.0]

    def test_boolean_mask(self):
        out = tc.masked_softmax(Tensor([3.0, 1.0, 1.0]), valid=np.array([False, True, True]))
        assert out.data[0] == 0.0
        np.testing.assert_allclose(out.data[1:], [0.5, 0.5])

    def test_all_masked_raises(self):
        with pytest.raises(errors.DomainError):
            tc.masked_softmax(Tensor([1.0, 2.0]), valid=0)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(13)
        scores = Tensor(rng.normal(size=(6, 9)) * 4.0)
        out = tc.masked_softmax(scores, valid=7)
        sums = out.data.sum(axis=-1)
        assert np.all(np.abs(sums - 1.0) <= 1e-12)
        assert np.all(out.data >= 0.0)
        assert np.all(out.data[:, 7:] == 0.0)

    def test_stable_at_large_scores(self):
        out = tc.masked_softmax(Tensor([1000.0, 1000.0]))
        assert out.data.tolist() == [0.5, 0.5]


class TestBackward:
    def test_sum_gradient_is_ones(self):
        x = Tensor(np.arange(6.0).reshape(2, 3) + 1.0)
        tape = GradTape()
        with recording(tape):
            loss = tc.tsum(x)
        g = backward(tape, loss).wrt(x)
        np.testing.assert_array_equal(g, np.ones((2, 3)))

    def test_sigmoid_gradient_at_zero(self):
        x = Tensor([0.0])
        tape = GradTape()
        with recording(tape):
            loss = tc.tsum(tc.sigmoid(x))
        g = backward(tape, loss).wrt(x)
        assert g[0] == pytest.approx(0.25, abs=1e-15)

    def test_untouched_parameter_gets_zeros(self):
        x = Tensor([1.0, 2.0])
        unused = Tensor([[3.0, 4.0]])
        tape = GradTape()
        with recording(tape):
            loss = tc.tsum(x)
        grads = backward(tape, loss)
        np.testing.assert_array_equal(grads.wrt(unused), np.zeros((1, 2)))
        assert unused not in grads

    def test_nonscalar_loss_rejected(self):
        x = Tensor([1.0, 2.0])
        tape = GradTape()
        with recording(tape):
            y = tc.mul(x, 2.0)
        with pytest.raises(errors.ContractError):
            backward(tape, y)

    def test_reused_operand_accumulates(self):
        # loss = sum(x*x) has gradient 2x.
        x = Tensor([1.0, -2.0, 3.0])
        tape = GradTape()
        with recording(tape):
            loss = tc.tsum(tc.mul(x, x))
        g = backward(tape, loss).wrt(x)
        np.testing.assert_allclose(g, [2.0, -4.0, 6.0])

    def test_no_tape_records_nothing(self):
        tape = GradTape()
        tc.mul(Tensor([1.0]), Tensor([2.0]))
        assert len(tape) == 0

    def test_nested_recording_rejected(self):
        with recording(GradTape()):
            with pytest.raises(errors.ContractError):
                with recording(GradTape()):
                    pass


class TestFiniteDiffCheck:
    def test_quadratic_is_near_exact(self):
        err = finite_diff_check(lambda t: tc.tsum(tc.mul(t, t)), Tensor([3.0]))
        assert err < 1e-9

    def test_tanh_sum(self):
        rng = np.random.default_rng(21)
        theta = Tensor(rng.normal(size=(4,)))
        err = finite_diff_check(lambda t: tc.tsum(tc.tanh(t)), theta)
        assert err < 1e-6

    def test_constant_function(self):
        err = finite_diff_check(lambda t: tc.tsum(tc.mul(t, 0.0)), Tensor([1.0, 2.0]))
        assert err == 0.0

    def test_matmul_chain_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        b = Tensor(rng.normal(size=(3, 2)))

        def f(theta):
            return tc.tsum(tc.tanh(tc.matmul(theta, b)))

        err = finite_diff_check(f, Tensor(rng.normal(size=(2, 3))))
        assert err < 1e-4


def _check(f, shape, seed, tol=1e-4):
    rng = np.random.default_rng(seed)
    theta = Tensor(rng.normal(size=shape))
    assert finite_diff_check(f, theta) < tol


class TestPrimitiveGradients:
    """Every primitive passes the finite-difference oracle on a fixed seed."""

    def test_add(self):
        c = Tensor(np.random.default_rng(1).normal(size=(3, 4)))
        _check(lambda t: tc.tsum(tc.add(t, c)), (3, 4), 100)

    def test_add_broadcast(self):
        c = Tensor(np.random.default_rng(2).normal(size=(4,)))
        _check(lambda t: tc.tsum(tc.mul(tc.add(t, c), tc.add(t, c))), (3, 4), 101)

    def test_sub(self):
        c = Tensor(np.random.default_rng(3).normal(size=(3, 4)))
        _check(lambda t: tc.tsum(tc.mul(tc.sub(c, t), tc.sub(c, t))), (3, 4), 102)

    def test_mul(self):
        c = Tensor(np.random.default_rng(4).normal(size=(3, 4)))
        _check(lambda t: tc.tsum(tc.mul(t, c)), (3, 4), 103)

    def test_div(self):
        c = Tensor(np.abs(np.random.default_rng(5).normal(size=(3, 4))) + 1.0)
        _check(lambda t: tc.tsum(tc.div(t, c)), (3, 4), 104)
        _check(lambda t: tc.tsum(tc.div(c, tc.add(tc.mul(t, t), 1.0))), (3, 4), 105)

    def test_neg(self):
        _check(lambda t: tc.tsum(tc.tanh(tc.neg(t))), (5,), 106)

    def test_matmul_both_sides(self):
        c = Tensor(np.random.default_rng(6).normal(size=(4, 2)))
        _check(lambda t: tc.tsum(tc.tanh(tc.matmul(t, c))), (3, 4), 107)
        d = Tensor(np.random.default_rng(7).normal(size=(2, 4)))
        _check(lambda t: tc.tsum(tc.tanh(tc.matmul(d, t))), (4, 3), 108)

    def test_linear_vector_and_rows(self):
        x1 = Tensor(np.random.default_rng(8).normal(size=(4,)))
        _check(lambda t: tc.tsum(tc.tanh(tc.linear(x1, t))), (3, 4), 109)
        x2 = Tensor(np.random.default_rng(9).normal(size=(5, 4)))
        _check(lambda t: tc.tsum(tc.tanh(tc.linear(x2, t))), (3, 4), 110)
        w = Tensor(np.random.default_rng(10).normal(size=(3, 4)))
        _check(lambda t: tc.tsum(tc.tanh(tc.linear(t, w))), (5, 4), 111)

    def test_sigmoid_tanh_exp(self):
        _check(lambda t: tc.tsum(tc.sigmoid(t)), (6,), 112)
        _check(lambda t: tc.tsum(tc.tanh(t)), (6,), 113)
        _check(lambda t: tc.tsum(tc.exp(t)), (6,), 114)

    def test_log_sqrt(self):
        rng = np.random.default_rng(115)
        theta = Tensor(np.abs(rng.normal(size=(5,))) + 0.5)
        assert finite_diff_check(lambda t: tc.tsum(tc.log(t)), theta) < 1e-4
        assert finite_diff_check(lambda t: tc.tsum(tc.sqrt(t)), theta) < 1e-4

    def test_sum_mean_axes(self):
        _check(lambda t: tc.tsum(tc.mul(tc.tsum(t, axis=0), tc.tsum(t, axis=0))), (3, 4), 116)
        _check(lambda t: tc.tsum(tc.mul(tc.tmean(t, axis=1, keepdims=True), t)), (3, 4), 117)

    def test_masked_softmax_grad(self):
        _check(lambda t: tc.tsum(tc.tanh(tc.mul(tc.masked_softmax(t, valid=3), 5.0))), (4,), 118)
        _check(
            lambda t: tc.tsum(tc.mul(tc.masked_softmax(t, valid=4), tc.exp(t))), (2, 5), 119
        )

    def test_reshape_transpose(self):
        _check(lambda t: tc.tsum(tc.tanh(tc.reshape(t, (2, 6)))), (3, 4), 120)
        _check(lambda t: tc.tsum(tc.tanh(tc.matmul(t, tc.transpose(t)))), (3, 4), 121)

    def test_concat_stack(self):
        c = Tensor(np.random.default_rng(11).normal(size=(2, 3)))
        _check(lambda t: tc.tsum(tc.tanh(tc.concat([t, c], axis=0))), (2, 3), 122)
        _check(lambda t: tc.tsum(tc.tanh(tc.stack([t, c, t], axis=0))), (2, 3), 123)

    def test_indexing_ops(self):
        _check(lambda t: tc.tsum(tc.tanh(tc.index_axis(t, 0, 1))), (3, 4), 124)
        _check(lambda t: tc.tsum(tc.tanh(tc.rows(t, 1, 3))), (4, 2), 125)
        _check(lambda t: tc.tsum(tc.tanh(tc.pad_rows(t, 5))), (3, 2), 126)

    def test_where_mask(self):
        mask = np.array([[True, False], [False, True]])
        c = Tensor(np.random.default_rng(12).normal(size=(2, 2)))
        _check(lambda t: tc.tsum(tc.tanh(tc.where_mask(mask, t, c))), (2, 2), 127)
        _check(lambda t: tc.tsum(tc.tanh(tc.where_mask(mask, c, t))), (2, 2), 128)


class TestDropout:
    def test_infer_mode_is_identity(self):
        x = Tensor([1.0, 2.0, 3.0])
        out = tc.dropout(x, 0.5, None, "infer")
        assert out is x

    def test_zero_rate_is_identity(self):
        x = Tensor([1.0, 2.0])
        assert tc.dropout(x, 0.0, np.random.default_rng(0), "train") is x

    def test_train_scales_kept_entries(self):
        rng = np.random.default_rng(42)
        x = Tensor(np.ones(1000))
        out = tc.dropout(x, 0.25, rng, "train")
        kept = out.data[out.data != 0.0]
        np.testing.assert_allclose(kept, 4.0 / 3.0)
        # Keep fraction concentrates near 0.75 on 1000 draws.
        assert abs(kept.size / 1000.0 - 0.75) < 0.05

    def test_bad_rate_rejected(self):
        with pytest.raises(errors.ContractError):
            tc.dropout(Tensor([1.0]), 1.0, None, "train")
        with pytest.raises(errors.ContractError):
            tc.dropout(Tensor([1.0]), 0.5, None, "bad-mode")
