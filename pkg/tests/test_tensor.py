import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gatlab import tensor as T
from gatlab.errors import ContractError, DegenerateNeighborhoodError, DimensionError
from gatlab.tensor import Tensor


def numeric_grad(f, x, eps=1e-6):
    """Independent central-difference oracle on a plain numpy function."""
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + eps
        hi = f(x)
        x[idx] = old - eps
        lo = f(x)
        x[idx] = old
        g[idx] = (hi - lo) / (2 * eps)
    return g


class TestMatmul:
    def test_identity(self):
        out = T.matmul(np.eye(2), np.array([[1.0, 2.0], [3.0, 4.0]]))
        np.testing.assert_array_equal(out.data, [[1, 2], [3, 4]])

    def test_row_times_column(self):
        out = Tensor([[1.0, 2.0]]) @ Tensor([[3.0], [4.0]])
        np.testing.assert_array_equal(out.data, [[11.0]])

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            T.matmul(np.zeros((2, 3)), np.zeros((2, 3)))

    def test_backward_of_sum_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        a0, b0 = rng.standard_normal((3, 4)), rng.standard_normal((4, 2))
        a, b = Tensor(a0, requires_grad=True), Tensor(b0, requires_grad=True)
        with T.Tape() as tape:
            tape.backward(T.tsum(a @ b))
        np.testing.assert_allclose(a.grad, numeric_grad(lambda x: (x @ b0).sum(), a0.copy()), rtol=1e-6)
        np.testing.assert_allclose(b.grad, numeric_grad(lambda x: (a0 @ x).sum(), b0.copy()), rtol=1e-6)


class TestActivations:
    def test_leaky_relu_values(self):
        out = T.leaky_relu(Tensor([[2.0, -2.0]]), 0.2)
        np.testing.assert_allclose(out.data, [[2.0, -0.4]])

    def test_leaky_relu_zero(self):
        np.testing.assert_array_equal(T.leaky_relu(Tensor([[0.0]])).data, [[0.0]])

    def test_default_slope(self):
        assert T.DEFAULT_SLOPE == 0.2

    @pytest.mark.parametrize("slope", [0.0, 1.0, -0.1, 1.5])
    def test_slope_outside_open_interval_rejected(self, slope):
        with pytest.raises(ValueError):
            T.leaky_relu(Tensor([[1.0]]), slope)

    def test_leaky_relu_gradient_at_zero_is_slope(self):
        x = Tensor([[0.0]], requires_grad=True)
        with T.Tape() as tape:
            tape.backward(T.tsum(T.leaky_relu(x, 0.3)))
        np.testing.assert_allclose(x.grad, [[0.3]])

    @pytest.mark.parametrize("fn", [T.relu, T.elu, T.identity, lambda x: T.leaky_relu(x, 0.2)])
    def test_gradients(self, fn):
        rng = np.random.default_rng(1)
        x = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        w = rng.standard_normal((3, 4))
        assert T.grad_check(lambda: T.tsum(fn(x) * w), x) < 1e-6


class TestConcat:
    def test_values(self):
        np.testing.assert_array_equal(T.concat_rows(Tensor([[1.0]]), Tensor([[2.0]])).data, [[1, 2]])

    def test_empty_right_operand(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(T.concat_rows(a, np.zeros((2, 0))).data, a.data)

    def test_backward_of_sum_is_ones(self):
        a = Tensor(np.ones((2, 3)), requires_grad=True)
        b = Tensor(np.ones((2, 1)), requires_grad=True)
        with T.Tape() as tape:
            tape.backward(T.tsum(T.concat_rows(a, b)))
        np.testing.assert_array_equal(a.grad, np.ones((2, 3)))
        np.testing.assert_array_equal(b.grad, np.ones((2, 1)))

    def test_row_mismatch(self):
        with pytest.raises(DimensionError):
            T.concat_rows(np.zeros((2, 1)), np.zeros((3, 1)))


class TestSegmentSoftmax:
    def test_single_edge(self):
        out = T.segment_softmax(Tensor([[7.3]]), [0], 1)
        np.testing.assert_array_equal(out.data, [[1.0]])

    def test_equal_scores(self):
        out = T.segment_softmax(Tensor([[1.0], [1.0]]), [0, 0], 1)
        np.testing.assert_allclose(out.data, [[0.5], [0.5]])

    def test_analytic_pair(self):
        out = T.segment_softmax(Tensor([[0.0], [np.log(3.0)]]), [0, 0], 1)
        np.testing.assert_allclose(out.data, [[0.25], [0.75]], rtol=1e-14)

    def test_empty_segment_raises(self):
        with pytest.raises(DegenerateNeighborhoodError):
            T.segment_softmax(Tensor([[1.0]]), [0], 2)

    def test_large_scores_stay_finite(self):
        out = T.segment_softmax(Tensor([[1000.0], [999.0], [-1000.0]]), [0, 0, 1], 2)
        assert np.all(np.isfinite(out.data))
        np.testing.assert_allclose(out.data[:2, 0], [1 / (1 + np.e**-1), 1 / (1 + np.e)])

    @settings(max_examples=60, deadline=None)
    @given(
        arrays(np.float64, st.integers(1, 40), elements=st.floats(-50, 50)),
        st.integers(1, 6),
        st.integers(0, 2**31),
    )
    def test_rows_sum_to_one(self, scores, segments, seed):
        rng = np.random.default_rng(seed)
        segments = min(segments, scores.shape[0])
        ids = np.concatenate([np.arange(segments), rng.integers(0, segments, scores.shape[0] - segments)])
        out = T.segment_softmax(Tensor(scores.reshape(-1, 1)), ids, segments).data[:, 0]
        sums = np.bincount(ids, weights=out, minlength=segments)
        assert np.abs(sums - 1.0).max() <= 1e-12
        assert np.all(out >= 0)

    def test_gradient(self):
        rng = np.random.default_rng(2)
        s = Tensor(rng.standard_normal((7, 1)), requires_grad=True)
        ids = np.array([0, 0, 1, 1, 1, 2, 0])
        w = rng.standard_normal((7, 1))
        assert T.grad_check(lambda: T.tsum(T.segment_softmax(s, ids, 3) * w), s) < 1e-7


class TestReductionsAndGathers:
    def test_broadcast_add_gradient(self):
        rng = np.random.default_rng(3)
        a = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
        row = Tensor(rng.standard_normal((1, 3)), requires_grad=True)
        col = Tensor(rng.standard_normal((4, 1)), requires_grad=True)
        w = rng.standard_normal((4, 3))
        assert T.grad_check(lambda: T.tsum((a + row) * col * w - a), [a, row, col]) < 1e-8

    def test_gather_and_segment_sum_are_adjoint(self):
        rng = np.random.default_rng(4)
        x = Tensor(rng.standard_normal((5, 2)), requires_grad=True)
        idx = np.array([4, 0, 0, 2, 4, 4])
        w = rng.standard_normal((3, 2))
        seg = np.array([0, 1, 2, 2, 1, 0])
        loss = lambda: T.tsum(T.segment_sum(T.gather_rows(x, idx), seg, 3) * w)
        assert T.grad_check(loss, x) < 1e-8
        np.testing.assert_allclose(T.gather_rows(x, idx).data, x.data[idx])

    def test_fused_edge_ops(self):
        rng = np.random.default_rng(5)
        left = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
        right = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
        bias = Tensor(rng.standard_normal((1, 3)), requires_grad=True)
        a = Tensor(rng.standard_normal((3, 1)), requires_grad=True)
        src = np.array([0, 1, 2, 3, 3, 1])
        dst = np.array([1, 1, 0, 0, 2, 3])
        z = left.data[dst] + right.data[src] + bias.data
        expect = np.where(z > 0, z, 0.2 * z) @ a.data
        np.testing.assert_allclose(T.gatv2_edge_scores(left, right, bias, a, dst, src).data, expect)
        np.testing.assert_allclose(
            T.edge_inner(left, right, dst, src).data[:, 0], np.sum(left.data[dst] * right.data[src], 1))
        w = Tensor(rng.random((6, 1)), requires_grad=True)
        agg = T.weighted_aggregate(w, right, src, dst, 4).data
        oracle = np.zeros((4, 3))
        for e in range(6):
            oracle[dst[e]] += w.data[e, 0] * right.data[src[e]]
        np.testing.assert_allclose(agg, oracle)
        coef = rng.standard_normal((6, 1))
        params = [left, right, bias, a, w]
        assert T.grad_check(lambda: T.tsum(T.gatv2_edge_scores(left, right, bias, a, dst, src) * coef), params) < 1e-7
        assert T.grad_check(lambda: T.tsum(T.edge_inner(left, right, dst, src) * coef), params) < 1e-7
        out_w = rng.standard_normal((4, 3))
        assert T.grad_check(lambda: T.tsum(T.weighted_aggregate(w, right, src, dst, 4) * out_w), params) < 1e-7


class TestCrossEntropy:
    def test_matches_log_softmax(self):
        rng = np.random.default_rng(6)
        z = rng.standard_normal((5, 4))
        y = np.array([0, 3, 1, 1, 2])
        logp = z - np.log(np.exp(z).sum(1, keepdims=True))
        np.testing.assert_allclose(T.cross_entropy(Tensor(z), y).item(), -logp[np.arange(5), y].mean())

    def test_gradient_against_finite_differences(self):
        rng = np.random.default_rng(7)
        z = Tensor(rng.standard_normal((6, 5)), requires_grad=True)
        y = rng.integers(0, 5, 6)
        assert T.grad_check(lambda: T.cross_entropy(z, y), z) < 1e-6


class TestGradCheck:
    def test_sum_is_exact(self):
        x = Tensor(np.random.default_rng(8).standard_normal((3, 3)), requires_grad=True)
        assert T.grad_check(lambda: T.tsum(x), x) < 1e-10

    def test_non_scalar_rejected(self):
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        with pytest.raises(ContractError):
            T.grad_check(lambda: x * 2.0, x)

    def test_detects_wrong_gradient(self):
        x = Tensor(np.ones((2, 2)), requires_grad=True)

        def bogus():
            return T._make(np.array([[np.sum(x.data ** 2)]]), (x,), lambda g: (g * x.data,))

        assert T.grad_check(bogus, x) > 0.1


class TestTape:
    def test_no_grad_records_nothing(self):
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        with T.Tape() as tape:
            with T.no_grad():
                y = x * 3.0
            assert len(tape) == 0
        assert not y.requires_grad

    def test_backward_requires_scalar(self):
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        with T.Tape() as tape:
            y = x * 2.0
            with pytest.raises(ContractError):
                tape.backward(y)

    def test_gradient_accumulates_over_reuse(self):
        x = Tensor([[3.0]], requires_grad=True)
        with T.Tape() as tape:
            tape.backward(x * x + x)
        np.testing.assert_allclose(x.grad, [[7.0]])

    def test_tensor_backward_uses_default_tape(self):
        x = Tensor([[2.0, 1.0]], requires_grad=True)
        (x * x).sum().backward()
        np.testing.assert_allclose(x.grad, [[4.0, 2.0]])
