"""Tensor and autodiff unit tests.

Analytic gradients are checked against the central finite-difference oracle
in double precision; the heavier multi-seed sweep lives in the acceptance
suite.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from altfreeze.tensor import (
    Tensor,
    avg_pool,
    backward,
    batch_norm,
    cast,
    clamp,
    conv3d,
    finite_difference_grad,
    linear,
    log,
    no_grad,
    relu,
    sigmoid,
    tmean,
    tsum,
)


def rel_err(a, f):
    """Max absolute deviation relative to the larger gradient scale."""
    a = np.asarray(a)
    f = np.asarray(f)
    scale = max(float(np.max(np.abs(a))), float(np.max(np.abs(f))), 1e-10)
    return float(np.max(np.abs(a - f)) / scale)


def conv3d_reference(x, k, bias=None, stride=(1, 1, 1), padding=(0, 0, 0)):
    """Direct-summation cross-correlation oracle (no kernel flip)."""
    co, ci, kt, kh, kw = k.shape
    pt, ph, pw = padding
    st_, sh, sw = stride
    xp = np.pad(x, ((0, 0), (pt, pt), (ph, ph), (pw, pw)))
    to = (xp.shape[1] - kt) // st_ + 1
    ho = (xp.shape[2] - kh) // sh + 1
    wo = (xp.shape[3] - kw) // sw + 1
    out = np.zeros((co, to, ho, wo))
    for o in range(co):
        for t in range(to):
            for h in range(ho):
                for w in range(wo):
                    acc = 0.0
                    for c in range(ci):
                        for i in range(kt):
                            for j in range(kh):
                                for l in range(kw):
                                    acc += (
                                        xp[c, t * st_ + i, h * sh + j, w * sw + l]
                                        * k[o, c, i, j, l]
                                    )
                    out[o, t, h, w] = acc + (bias[o] if bias is not None else 0.0)
    return out


class TestConv3d:
    def test_identity_kernel(self):
        rng = np.random.default_rng(0)
        x = Tensor(rng.random((2, 3, 5, 5)))
        k = Tensor(np.eye(2).reshape(2, 2, 1, 1, 1))
        assert np.array_equal(conv3d(x, k).data, x.data)

    def test_single_weight_identity(self):
        x = Tensor(np.random.default_rng(1).random((1, 4, 6, 6)))
        k = Tensor(np.ones((1, 1, 1, 1, 1)))
        assert np.array_equal(conv3d(x, k).data, x.data)

    def test_temporal_difference_example(self):
        # 1-channel T=3 signal [1,2,3], temporal kernel [1,0,-1], pad (1,0,0)
        x = Tensor(np.array([1.0, 2.0, 3.0]).reshape(1, 3, 1, 1))
        k = Tensor(np.array([1.0, 0.0, -1.0]).reshape(1, 1, 3, 1, 1))
        out = conv3d(x, k, padding=(1, 0, 0))
        expected = conv3d_reference(x.data, k.data, padding=(1, 0, 0))
        np.testing.assert_allclose(out.data, expected, rtol=0, atol=0)
        np.testing.assert_array_equal(out.data.ravel(), [-2.0, -2.0, 2.0])

    def test_matches_reference_oracle(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(3, 5, 6, 7))
        k = rng.normal(size=(4, 3, 3, 1, 3))
        b = rng.normal(size=4)
        out = conv3d(Tensor(x), Tensor(k), Tensor(b), stride=(1, 2, 2), padding=(1, 0, 1))
        expected = conv3d_reference(x, k, b, stride=(1, 2, 2), padding=(1, 0, 1))
        np.testing.assert_allclose(out.data, expected, rtol=1e-12, atol=1e-12)

    def test_shape_formula(self):
        x = Tensor(np.zeros((3, 8, 32, 32)))
        k = Tensor(np.zeros((16, 3, 1, 3, 3)))
        out = conv3d(x, k, stride=(1, 2, 2), padding=(0, 1, 1))
        assert out.shape == (16, 8, 16, 16)

    def test_batched_matches_unbatched(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(2, 2, 4, 5, 5))
        k = rng.normal(size=(3, 2, 3, 1, 1))
        batched = conv3d(Tensor(x), Tensor(k), padding=(1, 0, 0)).data
        for n in range(2):
            single = conv3d(Tensor(x[n]), Tensor(k), padding=(1, 0, 0)).data
            np.testing.assert_array_equal(batched[n], single)

    def test_channel_mismatch_names_axis(self):
        x = Tensor(np.zeros((3, 4, 4, 4)))
        k = Tensor(np.zeros((2, 5, 1, 1, 1)))
        with pytest.raises(ValueError, match="channel"):
            conv3d(x, k)

    def test_oversized_kernel_names_axis(self):
        x = Tensor(np.zeros((1, 2, 4, 4)))
        k = Tensor(np.zeros((1, 1, 5, 1, 1)))
        with pytest.raises(ValueError, match="temporal"):
            conv3d(x, k)
        k = Tensor(np.zeros((1, 1, 1, 7, 1)))
        with pytest.raises(ValueError, match="height"):
            conv3d(x, k)

    def test_linearity(self):
        rng = np.random.default_rng(11)
        x = rng.normal(size=(2, 4, 6, 6))
        y = rng.normal(size=(2, 4, 6, 6))
        k = Tensor(rng.normal(size=(3, 2, 1, 3, 3)))
        a, b = 1.7, -0.3
        lhs = conv3d(Tensor(a * x + b * y), k, padding=(0, 1, 1)).data
        rhs = a * conv3d(Tensor(x), k, padding=(0, 1, 1)).data + b * conv3d(
            Tensor(y), k, padding=(0, 1, 1)
        ).data
        assert rel_err(lhs, rhs) < 1e-10

    @pytest.mark.parametrize(
        "shape,kshape,stride,pad",
        [
            ((2, 2, 4, 6, 6), (3, 2, 3, 1, 1), (1, 2, 2), (1, 0, 0)),
            ((2, 3, 4, 5, 5), (4, 3, 1, 3, 3), (1, 1, 1), (0, 1, 1)),
            ((1, 2, 4, 4, 4), (5, 2, 1, 1, 1), (1, 1, 1), (0, 0, 0)),
            ((1, 2, 4, 4, 4), (3, 2, 1, 1, 1), (1, 1, 1), (1, 1, 1)),
            ((2, 2, 6, 5, 5), (3, 2, 1, 3, 3), (1, 2, 2), (0, 1, 1)),
        ],
    )
    def test_gradients_vs_finite_differences(self, shape, kshape, stride, pad):
        rng = np.random.default_rng(hash((shape, kshape)) % 2**32)
        x = Tensor(rng.normal(size=shape), requires_grad=True, dtype=np.float64)
        k = Tensor(rng.normal(size=kshape) * 0.4, requires_grad=True, dtype=np.float64)
        b = Tensor(rng.normal(size=(kshape[0],)), requires_grad=True, dtype=np.float64)

        def loss_fn():
            out = conv3d(x, k, b, stride=stride, padding=pad)
            return (out * out).sum()

        grads = backward(loss_fn())
        for p in (x, k, b):
            def f(t, p=p):
                old = p.data
                p.data = t.data
                try:
                    return float(loss_fn().data)
                finally:
                    p.data = old

            fd = finite_difference_grad(f, p, eps=1e-5)
            assert rel_err(grads[p].data, fd.data) < 1e-4


class TestBatchNorm:
    def test_normalization_fixed_point(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(64, 3, 2, 4, 4))
        x = (x - x.mean(axis=(0, 2, 3, 4), keepdims=True)) / x.std(
            axis=(0, 2, 3, 4), keepdims=True
        )
        gamma = Tensor(np.ones(3))
        beta = Tensor(np.zeros(3))
        out = batch_norm(x=Tensor(x), gamma=gamma, beta=beta,
                         running_mean=np.zeros(3), running_var=np.ones(3), training=True)
        np.testing.assert_allclose(out.data, x, rtol=1e-5, atol=1e-5)

    def test_gamma_zero_gives_beta(self):
        rng = np.random.default_rng(1)
        x = Tensor(rng.normal(size=(4, 3, 2, 2)))
        beta = np.array([0.3, -0.7, 2.0])
        out = batch_norm(x, Tensor(np.zeros(3)), Tensor(beta),
                         np.zeros(3), np.ones(3), training=True)
        expected = np.broadcast_to(beta[None, :, None, None], (4, 3, 2, 2))
        np.testing.assert_array_equal(out.data, expected)

    def test_train_mode_moments(self):
        rng = np.random.default_rng(2)
        x = Tensor(rng.normal(2.0, 3.0, size=(8, 4, 3, 5, 5)))
        out = batch_norm(x, Tensor(np.ones(4)), Tensor(np.zeros(4)),
                         np.zeros(4), np.ones(4), training=True)
        mean = out.data.mean(axis=(0, 2, 3, 4))
        var = out.data.var(axis=(0, 2, 3, 4))
        assert np.max(np.abs(mean)) < 1e-5
        assert np.max(np.abs(var - 1.0)) < 1e-3

    def test_running_stats_update_and_eval(self):
        rng = np.random.default_rng(3)
        x = rng.normal(1.5, 2.0, size=(16, 2, 3, 3))
        rm, rv = np.zeros(2), np.ones(2)
        batch_norm(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), rm, rv,
                   training=True, momentum=0.1)
        mu = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        np.testing.assert_allclose(rm, 0.1 * mu, rtol=1e-6)
        np.testing.assert_allclose(rv, 0.9 + 0.1 * var, rtol=1e-6)
        # eval normalizes by the running stats, not the batch
        out = batch_norm(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), rm, rv,
                         training=False)
        expected = (x - rm[None, :, None, None]) / np.sqrt(rv[None, :, None, None] + 1e-5)
        np.testing.assert_allclose(out.data, expected, rtol=1e-5)

    def test_update_can_be_suppressed(self):
        rng = np.random.default_rng(4)
        x = Tensor(rng.normal(size=(4, 2, 3, 3)))
        rm, rv = np.zeros(2), np.ones(2)
        batch_norm(x, Tensor(np.ones(2)), Tensor(np.zeros(2)), rm, rv,
                   training=True, update_running_stats=False)
        assert np.all(rm == 0) and np.all(rv == 1)

    def test_zero_batch_and_bad_eps(self):
        with pytest.raises(ValueError, match="zero batch"):
            batch_norm(Tensor(np.zeros((0, 2, 3, 3))), Tensor(np.ones(2)),
                       Tensor(np.zeros(2)), np.zeros(2), np.ones(2), training=True)
        with pytest.raises(ValueError, match="epsilon"):
            batch_norm(Tensor(np.zeros((2, 2, 3, 3))), Tensor(np.ones(2)),
                       Tensor(np.zeros(2)), np.zeros(2), np.ones(2), training=True, eps=0.0)

    @pytest.mark.parametrize("training", [True, False])
    def test_gradients(self, training):
        rng = np.random.default_rng(5)
        x = Tensor(rng.normal(2.0, 3.0, size=(4, 3, 2, 4, 4)), requires_grad=True, dtype=np.float64)
        gamma = Tensor(rng.normal(size=3), requires_grad=True, dtype=np.float64)
        beta = Tensor(rng.normal(size=3), requires_grad=True, dtype=np.float64)
        rm = rng.normal(size=3)
        rv = rng.random(3) + 0.5
        # elementwise weights break the normalization invariance of the loss
        r = Tensor(rng.normal(size=x.shape))

        def loss_fn():
            out = batch_norm(x, gamma, beta, rm, rv, training=training,
                             update_running_stats=False)
            return (out * out * r).mean()

        grads = backward(loss_fn())
        for p in (x, gamma, beta):
            def f(t, p=p):
                old = p.data
                p.data = t.data
                try:
                    return float(loss_fn().data)
                finally:
                    p.data = old

            fd = finite_difference_grad(f, p, eps=1e-5)
            assert rel_err(grads[p].data, fd.data) < 1e-4


class TestElementwise:
    @pytest.mark.parametrize(
        "op,domain",
        [
            (relu, (-2.0, 2.0)),
            (sigmoid, (-3.0, 3.0)),
            (lambda t: clamp(t, -1.0, 1.0), (-3.0, 3.0)),
            (lambda t: log(t), (0.5, 3.0)),
            (lambda t: avg_pool(t, axes=(1, 2, 3)), (-2.0, 2.0)),
            (tsum, (-2.0, 2.0)),
            (tmean, (-2.0, 2.0)),
        ],
    )
    def test_gradients(self, op, domain):
        rng = np.random.default_rng(abs(hash(str(op))) % 2**32)
        x = Tensor(rng.uniform(*domain, size=(2, 3, 4, 4)), requires_grad=True, dtype=np.float64)

        def loss_fn():
            out = op(x)
            return (out * out).sum() if out.shape else out * out

        grads = backward(loss_fn())

        def f(t):
            old = x.data
            x.data = t.data
            try:
                return float(loss_fn().data)
            finally:
                x.data = old

        fd = finite_difference_grad(f, x, eps=1e-5)
        assert rel_err(grads[x].data, fd.data) < 1e-4

    def test_linear_gradients(self):
        rng = np.random.default_rng(9)
        x = Tensor(rng.normal(size=(4, 6)), requires_grad=True, dtype=np.float64)
        w = Tensor(rng.normal(size=(3, 6)), requires_grad=True, dtype=np.float64)
        b = Tensor(rng.normal(size=3), requires_grad=True, dtype=np.float64)

        def loss_fn():
            out = linear(x, w, b)
            return (out * out).sum()

        grads = backward(loss_fn())
        for p in (x, w, b):
            def f(t, p=p):
                old = p.data
                p.data = t.data
                try:
                    return float(loss_fn().data)
                finally:
                    p.data = old

            fd = finite_difference_grad(f, p, eps=1e-5)
            assert rel_err(grads[p].data, fd.data) < 1e-4

    def test_no_implicit_broadcasting(self):
        a = Tensor(np.zeros((2, 3)))
        b = Tensor(np.zeros((3,)))
        with pytest.raises(ValueError, match="shape mismatch"):
            _ = a + b

    def test_cast_round_trip_grad(self):
        x = Tensor(np.array([1.0, 2.0], dtype=np.float32), requires_grad=True)
        y = cast(x, np.float64)
        grads = backward(tsum(y * y))
        assert grads[x].dtype == np.float32
        np.testing.assert_allclose(grads[x].data, [2.0, 4.0])

    def test_log_rejects_nonpositive(self):
        with pytest.raises(ValueError, match="positive"):
            log(Tensor(np.array([1.0, 0.0])))


class TestBackward:
    def test_linear_form(self):
        x = np.array([1.0, -2.0, 3.0])
        w = Tensor(np.zeros(3), requires_grad=True)
        loss = tsum(w * Tensor(x))
        grads = backward(loss)
        np.testing.assert_array_equal(grads[w].data, x)

    def test_unreachable_param_absent(self):
        w = Tensor(np.ones(2), requires_grad=True)
        p = Tensor(np.ones(2), requires_grad=True)
        loss = tsum(w * w)
        grads = backward(loss)
        assert w in grads and p not in grads

    def test_non_scalar_loss_rejected(self):
        w = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ValueError, match="scalar"):
            backward(w * 2.0)

    def test_grad_accumulates_across_uses(self):
        w = Tensor(np.array([2.0]), requires_grad=True)
        loss = tsum(w * w) + tsum(w * 3.0)
        grads = backward(loss)
        np.testing.assert_allclose(grads[w].data, [7.0])

    def test_replay_determinism(self):
        rng = np.random.default_rng(13)
        x = rng.normal(size=(2, 3, 4, 6, 6)).astype(np.float32)
        k = Tensor(rng.normal(size=(4, 3, 1, 3, 3)).astype(np.float32), requires_grad=True)

        def run():
            out = conv3d(Tensor(x), k, padding=(0, 1, 1))
            out = relu(out)
            loss = tmean(out * out)
            return loss.data.copy(), backward(loss)[k].data.copy()

        l1, g1 = run()
        l2, g2 = run()
        assert np.array_equal(l1, l2)
        assert np.array_equal(g1, g2)

    def test_no_grad_suppresses_tape(self):
        w = Tensor(np.ones(2), requires_grad=True)
        with no_grad():
            out = w * 2.0
        assert not out.requires_grad
        assert out._parents == ()


class TestFiniteDifference:
    def test_quadratic(self):
        theta = Tensor(np.array([3.0]))
        grad = finite_difference_grad(lambda t: float(t.data[0] ** 2), theta, eps=1e-5)
        assert abs(grad.data[0] - 6.0) < 1e-6

    def test_constant_function(self):
        theta = Tensor(np.array([1.0, 2.0, 3.0]))
        grad = finite_difference_grad(lambda t: 4.2, theta)
        np.testing.assert_array_equal(grad.data, np.zeros(3))

    def test_bad_eps(self):
        with pytest.raises(ValueError, match="eps"):
            finite_difference_grad(lambda t: 0.0, Tensor(np.zeros(1)), eps=0.0)


@settings(max_examples=30, deadline=None)
@given(
    st.lists(st.floats(-5, 5), min_size=1, max_size=12),
    st.floats(0.1, 3.0),
)
def test_sigmoid_range_property(values, scale):
    out = sigmoid(Tensor(np.array(values) * scale))
    assert np.all(out.data > 0) and np.all(out.data < 1)
