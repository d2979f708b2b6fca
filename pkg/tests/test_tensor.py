"""Autodiff core: forward values, gradients, broadcasting and contracts."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cocgan import tensor as T
from cocgan.errors import ContractError


def leaf(rng, *shape):
    return T.Tensor(rng.standard_normal(shape), requires_grad=True)


class TestForward:
    def test_default_dtype_is_float32(self):
        assert T.Tensor([1.0, 2.0]).dtype == np.float32

    def test_default_dtype_context_restores(self):
        with T.default_dtype(np.float64):
            assert T.Tensor([1.0]).dtype == np.float64
        assert T.Tensor([1.0]).dtype == np.float32

    def test_sigmoid_is_stable_for_large_inputs(self):
        out = T.sigmoid(T.Tensor([-1000.0, 0.0, 1000.0])).data
        np.testing.assert_allclose(out, [0.0, 0.5, 1.0])
        assert np.all(np.isfinite(out))

    def test_log_clamp_keeps_probabilities_inside_open_interval(self, f64):
        out = T.log(T.Tensor([0.0, 1.0]), clamp=1e-7).data
        assert out[0] == pytest.approx(math.log(1e-7), rel=1e-12)
        assert out[1] == pytest.approx(math.log1p(-1e-7), rel=1e-9)

    def test_gelu_matches_tanh_approximation(self, f64):
        x = np.linspace(-6, 6, 101)
        ref = 0.5 * x * (1 + np.tanh(math.sqrt(2 / math.pi) * (x + 0.044715 * x ** 3)))
        np.testing.assert_allclose(T.gelu(T.Tensor(x)).data, ref, rtol=1e-12, atol=1e-12)

    def test_log_softmax_rows_normalize(self, rng, f64):
        z = T.Tensor(rng.standard_normal((5, 7)) * 30)
        np.testing.assert_allclose(np.exp(T.log_softmax(z).data).sum(axis=1), 1.0, rtol=1e-12)

    def test_cosine_similarity_of_parallel_vectors_is_one(self, rng, f64):
        v = rng.standard_normal((1, 1, 6))
        sim = T.cosine_similarity(T.Tensor(v), T.Tensor(3.0 * v)).data
        # the norm epsilon costs a few 1e-9
        assert sim.item() == pytest.approx(1.0, abs=1e-7)

    def test_cosine_similarity_shape(self, rng):
        a = T.Tensor(rng.standard_normal((2, 3, 4)))
        b = T.Tensor(rng.standard_normal((2, 5, 4)))
        assert T.cosine_similarity(a, b).shape == (2, 3, 5)

    def test_layer_norm_zero_mean_unit_variance(self, rng, f64):
        x = T.Tensor(rng.standard_normal((4, 9)) * 5 + 3)
        y = T.layer_norm(x).data
        np.testing.assert_allclose(y.mean(axis=-1), 0, atol=1e-12)
        np.testing.assert_allclose(y.var(axis=-1), 1, atol=1e-6)


class TestBackward:
    def test_requires_scalar_root(self, rng):
        x = leaf(rng, 3)
        with pytest.raises(ContractError):
            T.backward(T.mul(x, 2.0))

    def test_grad_accumulates_on_shared_leaf(self, f64):
        x = T.Tensor([3.0], requires_grad=True)
        y = T.sum_(T.add(T.mul(x, x), x))
        T.backward(y)
        assert x.grad.item() == pytest.approx(7.0)

    def test_no_grad_builds_no_graph(self, rng):
        x = leaf(rng, 3)
        with T.no_grad():
            y = T.mul(x, 2.0)
        assert not y.requires_grad

    def test_unbroadcast_sums_expanded_axes(self, f64):
        g = np.ones((4, 3, 5))
        np.testing.assert_array_equal(T.unbroadcast(g, (3, 1)), np.full((3, 1), 20.0))

    def test_deep_chain_does_not_recurse(self, f64):
        x = T.Tensor([1.0], requires_grad=True)
        y = x
        for _ in range(5000):
            y = T.add(y, 0.0)
        T.backward(T.sum_(y))
        assert x.grad.item() == 1.0

    @pytest.mark.parametrize(
        "op",
        [
            lambda a, b: T.add(a, b),
            lambda a, b: T.sub(a, b),
            lambda a, b: T.mul(a, b),
            lambda a, b: T.div(a, T.add(T.square(b), 1.0)),
        ],
        ids=["add", "sub", "mul", "div"],
    )
    def test_broadcasting_binary_ops(self, op, rng, f64):
        a, b = leaf(rng, 3, 4), leaf(rng, 4)
        assert T.grad_check(lambda: T.sum_(T.square(op(a, b))), [a, b])

    @pytest.mark.parametrize(
        "fn",
        [T.sigmoid, T.tanh, T.gelu, T.exp, lambda x: T.sqrt(T.add(T.square(x), 1.0)),
         lambda x: T.log(T.add(T.square(x), 0.5)), lambda x: T.log_softmax(x, axis=-1),
         lambda x: T.l2_normalize(x), lambda x: T.transpose(x, (1, 0))],
        ids=["sigmoid", "tanh", "gelu", "exp", "sqrt", "log", "log_softmax", "l2_normalize", "transpose"],
    )
    def test_unary_ops(self, fn, rng, f64):
        x = leaf(rng, 3, 5)
        probe = T.Tensor(rng.standard_normal(fn(x).shape))
        assert T.grad_check(lambda: T.sum_(T.mul(fn(x), probe)), [x])

    def test_matmul_batched(self, rng, f64):
        a, b = leaf(rng, 2, 3, 4), leaf(rng, 4, 5)
        assert T.grad_check(lambda: T.sum_(T.square(T.matmul(a, b))), [a, b])

    def test_linear(self, rng, f64):
        x, w, b = leaf(rng, 2, 3, 4), leaf(rng, 4, 6), leaf(rng, 6)
        assert T.grad_check(lambda: T.sum_(T.square(T.linear(x, w, b))), [x, w, b])

    def test_layer_norm(self, rng, f64):
        x, w, b = leaf(rng, 3, 7), leaf(rng, 7), leaf(rng, 7)
        probe = T.Tensor(rng.standard_normal((3, 7)))
        assert T.grad_check(lambda: T.sum_(T.mul(T.layer_norm(x, w, b), probe)), [x, w, b])

    def test_cosine_similarity(self, rng, f64):
        a, b = leaf(rng, 2, 3, 5), leaf(rng, 2, 4, 5)
        probe = T.Tensor(rng.standard_normal((2, 3, 4)))
        assert T.grad_check(lambda: T.sum_(T.mul(T.cosine_similarity(a, b), probe)), [a, b])

    def test_indexing_ops(self, rng, f64):
        x = leaf(rng, 6, 3)
        idx = np.array([0, 2, 2, 5])
        seg = np.array([1, 0, 1, 1, 2, 0])
        probe = T.Tensor(rng.standard_normal((3, 3)))

        def f():
            rows = T.gather_rows(x, idx)
            sums = T.segment_sum(x, seg, 3)
            return T.add(T.sum_(T.square(rows)), T.sum_(T.mul(sums, probe)))

        assert T.grad_check(f, [x])

    def test_pick_and_mean_over_tuple_axes(self, rng, f64):
        x = leaf(rng, 2, 3, 4)
        idx = np.array([[0, 2, 1, 1], [2, 2, 0, 1]])
        assert T.grad_check(lambda: T.sum_(T.square(T.pick(x, idx, axis=1))), [x])
        assert T.grad_check(lambda: T.sum_(T.square(T.mean(x, axis=(0, 2)))), [x])

    def test_concat_reshape_getitem(self, rng, f64):
        a, b = leaf(rng, 2, 3), leaf(rng, 2, 2)

        def f():
            c = T.concat([a, b], axis=1)
            return T.sum_(T.square(T.getitem(T.reshape(c, (5, 2)), slice(1, 4))))

        assert T.grad_check(f, [a, b])


class TestGradCheck:
    def test_detects_wrong_gradient(self, f64):
        x = T.Tensor([0.3, -0.7], requires_grad=True)

        def bad():
            out = T._make(x.data ** 2, (x,), lambda g: (g * x.data,), "bad")
            return T.sum_(out)

        assert not T.grad_check(bad, [x]).passed

    @pytest.mark.parametrize("error", [1e-3, "one entry"])
    def test_detects_small_gradient_errors(self, rng, f64, error):
        x = leaf(rng, 50)

        def skewed(g):
            grad = 2.0 * g * x.data
            if error == "one entry":
                grad = grad.copy()
                grad[7] += 0.05 * np.abs(grad).max()
            else:
                grad = grad * (1 + error)
            return (grad,)

        assert not T.grad_check(lambda: T.sum_(T._make(x.data ** 2, (x,), skewed, "skewed")), [x]).passed

    def test_report_keeps_entry_diagnostic(self, rng, f64):
        x = leaf(rng, 6)
        report = T.grad_check(lambda: T.sum_(T.tanh(x)), [x])
        assert report.passed and 0.0 <= report.max_entry_error < 1e-3

    def test_restores_inputs(self, rng, f64):
        x = leaf(rng, 4)
        before = x.data.copy()
        T.grad_check(lambda: T.sum_(T.tanh(x)), [x])
        np.testing.assert_array_equal(x.data, before)


class TestProperties:
    @given(arrays(np.float64, st.integers(1, 20), elements=st.floats(-50, 50)))
    def test_sigmoid_symmetry(self, x):
        with T.default_dtype(np.float64):
            s = T.sigmoid(T.Tensor(x)).data
            s_neg = T.sigmoid(T.Tensor(-x)).data
        np.testing.assert_allclose(s + s_neg, 1.0, atol=1e-12)

    @given(arrays(np.float64, (3, 4), elements=st.floats(-10, 10)), st.sampled_from([None, 0, 1]))
    def test_sum_gradient_is_ones(self, x, axis):
        with T.default_dtype(np.float64):
            t = T.Tensor(x, requires_grad=True)
            T.backward(T.sum_(T.sum_(t, axis=axis)))
        np.testing.assert_array_equal(t.grad, np.ones_like(x))


class TestParamInit:
    def test_uniform_fan_in_bound(self, rng):
        p = T.param_init((400, 5), "uniform_fan_in", rng)
        assert np.abs(p.data).max() <= 1 / math.sqrt(400)
        assert p.requires_grad

    @pytest.mark.parametrize("scheme,value,expected", [("zeros", 0.0, 0.0), ("constant", 1.0, 1.0)])
    def test_deterministic_schemes(self, scheme, value, expected):
        np.testing.assert_array_equal(T.param_init((3,), scheme, value=value).data, expected)
