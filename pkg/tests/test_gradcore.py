import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edgekt.errors import ConfigError, MissingGradError, ShapeError
from edgekt.gradcore import (LRSchedule, Optimizer, Parameter, Tensor, batch_norm,
                             categorical_log_loss, conv2d, cross_entropy, euclidean_distance,
                             finite_difference_check, l2_normalize_flat, linear, no_grad,
                             one_hot, pad_channels, relu, softmax_rows, two_sided_log_loss,
                             weighted_sum)
from oracles import adam_reference, conv2d_loops, nesterov_reference, two_sided_loss_direct


class TestTensor:
    def test_backward_accumulates_into_leaves(self):
        a = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
        out = euclidean_distance(relu(a), np.zeros(3))
        out.backward()
        out2 = euclidean_distance(relu(a), np.zeros(3))
        out2.backward()
        expected = 2 * np.array([1.0, 0.0, 3.0]) / math.sqrt(10)
        np.testing.assert_allclose(a.grad, expected)

    def test_no_grad_builds_no_graph(self):
        a = Tensor(np.ones(3), requires_grad=True)
        with no_grad():
            out = relu(a)
        assert not out.requires_grad

    def test_frozen_parameter_gets_no_grad(self):
        w = Parameter(np.ones((2, 3)), "w", trainable=False)
        x = Tensor(np.ones((1, 3)), requires_grad=True)
        y = linear(x, w)
        euclidean_distance(y, np.zeros((1, 2))).backward()
        assert w.grad is None
        assert x.grad is not None

    def test_shared_subexpression_gradient(self):
        # y = relu(a) used twice: gradient must sum both paths
        a = Tensor(np.array([[2.0]]), requires_grad=True)
        r = relu(a)
        s = weighted_sum([1.0, 1.0], [euclidean_distance(r, np.zeros((1, 1))),
                                      euclidean_distance(r, np.zeros((1, 1)))])
        s.backward()
        assert a.grad[0, 0] == pytest.approx(2.0)


class TestConv:
    @pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 0), (2, 1)])
    def test_matches_loop_reference(self, stride, pad):
        rng = np.random.default_rng(stride * 10 + pad)
        x = rng.standard_normal((2, 3, 7, 6))
        w = rng.standard_normal((4, 3, 3, 3))
        b = rng.standard_normal(4)
        out = conv2d(x, w, b, stride=stride, padding=pad).data
        np.testing.assert_allclose(out, conv2d_loops(x, w, b, stride, pad), rtol=1e-12, atol=1e-12)

    def test_one_by_one_conv_is_channel_mix(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((1, 3, 4, 4))
        w = rng.standard_normal((2, 3, 1, 1))
        out = conv2d(x, w).data
        np.testing.assert_allclose(out, np.einsum("oc,nchw->nohw", w[:, :, 0, 0], x))

    def test_channel_mismatch_raises(self):
        with pytest.raises(ShapeError):
            conv2d(np.zeros((1, 3, 5, 5)), np.zeros((2, 4, 3, 3)))

    def test_empty_output_raises(self):
        with pytest.raises(ShapeError):
            conv2d(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 5, 5)))

    def test_preserves_float32(self):
        out = conv2d(np.zeros((1, 2, 4, 4), np.float32), np.zeros((1, 2, 3, 3), np.float32), padding=1)
        assert out.dtype == np.float32


class TestGradients:
    """Single-probe central-difference checks; the acceptance suite runs ten per op."""

    def test_conv(self):
        rng = np.random.default_rng(0)
        rep = finite_difference_check(lambda x, w, b: conv2d(x, w, b, stride=2, padding=1),
                                      [rng.standard_normal((2, 2, 5, 5)),
                                       rng.standard_normal((3, 2, 3, 3)), rng.standard_normal(3)])
        assert rep.passed, rep

    @pytest.mark.parametrize("train", [True, False])
    def test_batch_norm(self, train):
        rng = np.random.default_rng(1)
        rm, rv = rng.standard_normal(3), rng.uniform(0.5, 2, 3)

        def fn(x, s, b):
            return batch_norm(x, s, b, rm.copy(), rv.copy(), train=train)

        rep = finite_difference_check(fn, [rng.standard_normal((4, 3, 2, 2)),
                                           rng.uniform(0.5, 1.5, 3), rng.standard_normal(3)])
        assert rep.passed, rep

    def test_normalize_and_distance(self):
        rng = np.random.default_rng(2)
        t = rng.standard_normal((2, 4, 3, 3))

        def fn(s):
            q, _ = l2_normalize_flat(pad_channels(s, 4))
            qt, _ = l2_normalize_flat(t)
            return euclidean_distance(q, qt.data)

        rep = finite_difference_check(fn, [rng.standard_normal((2, 3, 3, 3))])
        assert rep.passed, rep

    @pytest.mark.parametrize("loss", [two_sided_log_loss, categorical_log_loss])
    def test_log_losses_through_softmax(self, loss):
        rng = np.random.default_rng(4)
        y = one_hot(rng.integers(0, 4, 5), 4, np.float64)
        rep = finite_difference_check(lambda z: loss(softmax_rows(z), y),
                                      [rng.standard_normal((5, 4))])
        assert rep.passed, rep

    def test_cross_entropy(self):
        rng = np.random.default_rng(5)
        labels = rng.integers(0, 3, 6)
        rep = finite_difference_check(lambda z: cross_entropy(z, labels), [rng.standard_normal((6, 3))])
        assert rep.passed, rep

    def test_detects_wrong_gradient(self):
        from edgekt.gradcore.tensor import as_tensor, make_result

        def bad_square(x):
            x = as_tensor(x)
            return make_result(x.data ** 2, [x], lambda g: (g * x.data,))  # missing factor 2

        rep = finite_difference_check(bad_square, [np.array([1.0, 2.0])])
        assert not rep.passed


class TestElementwise:
    def test_euclidean_subgradient_zero_at_zero(self):
        a = Tensor(np.ones(4), requires_grad=True)
        d = euclidean_distance(a, np.ones(4))
        d.backward()
        assert float(d.data) == 0.0
        np.testing.assert_array_equal(a.grad, np.zeros(4))

    def test_normalize_degenerate_flag(self):
        q, degenerate = l2_normalize_flat(np.zeros((2, 3, 2, 2)))
        assert degenerate
        assert not np.any(q.data)

    def test_normalize_per_sample_rows(self):
        rng = np.random.default_rng(0)
        q, _ = l2_normalize_flat(rng.standard_normal((3, 2, 2, 2)), per_sample=True)
        np.testing.assert_allclose(np.linalg.norm(q.data, axis=1), 1.0)

    def test_pad_channels_rejects_shrink(self):
        with pytest.raises(ShapeError):
            pad_channels(np.zeros((1, 5, 2, 2)), 3)

    def test_two_sided_uniform_two_classes(self):
        loss = two_sided_log_loss(np.full((3, 2), 0.5), one_hot(np.array([0, 1, 0]), 2, np.float64))
        assert float(loss.data) == pytest.approx(2 * math.log(2))

    def test_two_sided_perfect_prediction_near_zero(self):
        y = one_hot(np.array([0, 2]), 3, np.float64)
        assert float(two_sided_log_loss(y, y).data) <= 3 * 1e-7 * 20

    def test_two_sided_matches_direct_formula(self):
        rng = np.random.default_rng(9)
        p = softmax_rows(rng.standard_normal((7, 5))).data
        y = one_hot(rng.integers(0, 5, 7), 5, np.float64)
        assert float(two_sided_log_loss(p, y).data) == pytest.approx(two_sided_loss_direct(p, y), rel=1e-12)

    def test_cross_entropy_uniform_logits(self):
        assert float(cross_entropy(np.zeros((4, 10)), np.arange(4)).data) == pytest.approx(math.log(10))

    def test_batch_norm_running_stats(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((4, 2, 3, 3))
        rm, rv = np.zeros(2), np.ones(2)
        batch_norm(x, np.ones(2), np.zeros(2), rm, rv, train=True)
        m = 4 * 9
        np.testing.assert_allclose(rm, 0.1 * x.mean(axis=(0, 2, 3)))
        np.testing.assert_allclose(rv, 0.9 + 0.1 * x.var(axis=(0, 2, 3)) * m / (m - 1))

    def test_batch_norm_eval_leaves_stats(self):
        rm, rv = np.array([1.0]), np.array([4.0])
        out = batch_norm(np.full((1, 1, 1, 1), 3.0), np.ones(1), np.zeros(1), rm, rv, train=False)
        assert out.data.item() == pytest.approx(2 / math.sqrt(4 + 1e-5))
        assert rm[0] == 1.0 and rv[0] == 4.0

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 3), st.integers(0, 2**31))
    def test_padding_preserves_norm(self, n, c, extra, seed):
        x = np.random.default_rng(seed).standard_normal((n, c, 2, 3))
        padded = pad_channels(x, c + extra).data
        assert np.linalg.norm(padded) == pytest.approx(np.linalg.norm(x), rel=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31), st.floats(1e-3, 1e3))
    def test_normalize_scale_invariant(self, seed, scale):
        x = np.random.default_rng(seed).standard_normal((2, 3, 2, 2))
        a, _ = l2_normalize_flat(x)
        b, _ = l2_normalize_flat(x * scale)
        np.testing.assert_allclose(a.data, b.data, atol=1e-12)


def _scalar_param(value):
    p = Parameter(np.array([value]), "w")
    return p


class TestOptimizer:
    def test_plain_sgd_limit(self):
        p = _scalar_param(1.0)
        opt = Optimizer([p], lr=0.1, momentum=0.0)
        p.grad = np.array([2.0])
        opt.step()
        assert p.data[0] == pytest.approx(0.8)

    def test_nesterov_matches_scalar_recursion(self):
        p = _scalar_param(3.0)
        opt = Optimizer([p], lr=0.05, momentum=0.9, weight_decay=0.01)
        grad = lambda w: 2 * (w - 1.0)  # noqa: E731
        ref = nesterov_reference(3.0, grad, 0.05, 0.9, 0.01, 3)
        for r in ref:
            p.grad = np.array([grad(p.data[0])])
            opt.step()
            assert p.data[0] == pytest.approx(r, abs=1e-14)

    def test_adam_matches_reference(self):
        p = _scalar_param(-2.0)
        opt = Optimizer([p], kind="adam", lr=0.01)
        grad = lambda w: 3 * w ** 2 - 1  # noqa: E731
        ref = adam_reference(-2.0, grad, 0.01, 0.9, 0.999, 1e-8, 5)
        for r in ref:
            p.grad = np.array([grad(p.data[0])])
            opt.step()
            assert p.data[0] == pytest.approx(r, abs=1e-14)

    def test_non_trainable_untouched(self):
        a, b = Parameter(np.ones(2), "a"), Parameter(np.ones(2), "b", trainable=False)
        opt = Optimizer([a, b], lr=0.5)
        a.grad = np.ones(2)
        b.grad = np.ones(2)
        before = b.data.copy()
        opt.step()
        np.testing.assert_array_equal(b.data, before)

    def test_missing_gradient(self):
        opt = Optimizer([Parameter(np.ones(1), "lonely")])
        with pytest.raises(MissingGradError, match="lonely"):
            opt.step()

    def test_rejects_unknown_kind(self):
        with pytest.raises(ConfigError):
            Optimizer([], kind="rmsprop")


class TestSchedule:
    def test_exponential_factor(self):
        s = LRSchedule("exponential", 0.01, 50, factor=0.98)
        assert s.rate(0) == pytest.approx(0.01)
        assert s.rate(1) == pytest.approx(0.98 * 0.01)

    def test_step_drop(self):
        s = LRSchedule("step", 0.1, 100, drops=(30, 60, 90), drop_factor=0.1)
        assert s.rate(29) == pytest.approx(0.1)
        assert s.rate(30) == pytest.approx(0.01)
        assert s.rate(65) == pytest.approx(0.001)

    def test_cosine_endpoints(self):
        s = LRSchedule("cosine", 0.1, 200)
        assert s.rate(0) == pytest.approx(0.1)
        assert s.rate(100) == pytest.approx(0.05)
        assert 0 < s.rate(199) < 1e-4

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            LRSchedule("constant", 0.1, 5).rate(5)
