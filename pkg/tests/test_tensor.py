"""Tensor engine: forward oracles, tape semantics, gradient rules."""

import numpy as np
import pytest

from nightseg import tensor as T
from nightseg.gradcheck import grad_check
from nightseg.tensor import Tape, Tensor, backward


class TestMatmul:
    def test_identity(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        out = T.matmul(Tensor(np.eye(2)), Tensor(a))
        assert np.array_equal(out.data, a)

    def test_hand_dot_product(self):
        out = T.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        assert out.data.tolist() == [[11.0]]

    def test_matches_triple_loop_oracle(self):
        rng = np.random.default_rng(11)
        a = rng.normal(size=(5, 4))
        b = rng.normal(size=(4, 3))
        want = np.zeros((5, 3))
        for i in range(5):
            for j in range(3):
                for k in range(4):
                    want[i, j] += a[i, k] * b[k, j]
        got = T.matmul(Tensor(a), Tensor(b)).data
        assert np.abs(got - want).max() < 1e-12

    def test_shape_mismatch_reports_both_shapes(self):
        with pytest.raises(ValueError, match=r"\(2, 3\).*\(2, 2\)"):
            T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 2))))


class TestSoftmax:
    def test_uniform_input(self):
        out = T.softmax(Tensor([0.0, 0.0, 0.0]), axis=0).data
        assert np.abs(out - 1 / 3).max() < 1e-15

    def test_large_logit_no_overflow(self):
        out = T.softmax(Tensor([1000.0, 0.0, 0.0]), axis=0).data
        assert np.isfinite(out).all()
        assert abs(out[0] - 1.0) < 1e-12
        assert out[1] < 1e-300

    def test_matches_direct_formula(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=17)
        want = np.exp(x) / np.sum(np.exp(x))
        got = T.softmax(Tensor(x), axis=0).data
        assert np.abs(got - want).max() < 1e-12

    def test_rows_sum_to_one_sweep(self):
        rng = np.random.default_rng(8)
        for _ in range(100):
            x = rng.normal(size=(4, 7)) * rng.uniform(0.01, 100)
            y = T.softmax(Tensor(x), axis=1).data
            assert np.abs(y.sum(axis=1) - 1.0).max() < 1e-6
            assert (y >= 0).all()


def conv_oracle(x, w, stride, pad):
    """Six-nested-loop cross-correlation with zero padding."""
    xp = np.pad(x, ((pad, pad), (pad, pad), (0, 0)))
    kh, kw, cin, cout = w.shape
    ho = (x.shape[0] + 2 * pad - kh) // stride + 1
    wo = (x.shape[1] + 2 * pad - kw) // stride + 1
    out = np.zeros((ho, wo, cout))
    for oi in range(ho):
        for oj in range(wo):
            for oc in range(cout):
                acc = 0.0
                for ki in range(kh):
                    for kj in range(kw):
                        for c in range(cin):
                            acc += xp[oi * stride + ki, oj * stride + kj, c] * w[ki, kj, c, oc]
                out[oi, oj, oc] = acc
    return out


class TestConv2d:
    def test_1x1_unit_kernel_is_identity(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(4, 5, 1))
        w = np.ones((1, 1, 1, 1))
        out = T.conv2d(Tensor(x), Tensor(w)).data
        assert np.array_equal(out, x)

    def test_box_sum(self):
        x = np.ones((3, 3, 1))
        w = np.ones((3, 3, 1, 1))
        out = T.conv2d(Tensor(x), Tensor(w), stride=1, padding=1).data
        assert out[1, 1, 0] == 9.0

    @pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1), (2, 0), (3, 2)])
    def test_matches_nested_loop_oracle(self, stride, pad):
        rng = np.random.default_rng(stride * 10 + pad)
        x = rng.normal(size=(7, 6, 3))
        w = rng.normal(size=(3, 3, 3, 2))
        got = T.conv2d(Tensor(x), Tensor(w), stride, pad).data
        assert np.abs(got - conv_oracle(x, w, stride, pad)).max() < 1e-10

    def test_kernel_larger_than_padded_input_rejected(self):
        with pytest.raises(ValueError, match="larger than padded input"):
            T.conv2d(Tensor(np.zeros((2, 2, 1))), Tensor(np.zeros((5, 5, 1, 1))))


class TestUpsample:
    def test_constant_plane(self):
        out = T.upsample_bilinear2x(Tensor(np.full((3, 4, 2), 7.0))).data
        assert out.shape == (6, 8, 2)
        assert np.abs(out - 7.0).max() == 0.0

    def test_single_pixel_replicates(self):
        out = T.upsample_bilinear2x(Tensor(np.full((1, 1, 1), 2.5))).data
        assert out.shape == (2, 2, 1)
        assert np.abs(out - 2.5).max() == 0.0

    def test_matches_per_pixel_formula_oracle(self):
        import math
        rng = np.random.default_rng(5)
        x = rng.normal(size=(4, 4, 2))
        got = T.upsample_bilinear2x(Tensor(x)).data
        want = np.zeros((8, 8, 2))
        for a in range(8):
            for b in range(8):
                sy, sx = (a + 0.5) / 2 - 0.5, (b + 0.5) / 2 - 0.5
                y0, x0 = math.floor(sy), math.floor(sx)
                ty, tx = sy - y0, sx - x0
                for yy, wy in ((y0, 1 - ty), (y0 + 1, ty)):
                    for xx, wx in ((x0, 1 - tx), (x0 + 1, tx)):
                        want[a, b] += wy * wx * x[min(max(yy, 0), 3), min(max(xx, 0), 3)]
        assert np.abs(got - want).max() < 1e-12


class TestBackward:
    def test_sum_gives_ones(self):
        x = Tensor([1.0, 5.0, -2.0], requires_grad=True)
        with Tape():
            backward(T.tsum(x))
        assert np.array_equal(x.grad, np.ones(3))

    def test_quadratic(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with Tape():
            backward(T.tsum(T.mul(x, x)))
        assert np.array_equal(x.grad, np.array([2.0, 4.0]))

    def test_composite_conv_softmax_sum_matches_fd(self):
        # the row sums of softmax are constant, so both gradients vanish
        rng = np.random.default_rng(0)
        w = Tensor(rng.normal(size=(3, 3, 2, 2)))
        x = Tensor(rng.normal(size=(4, 4, 2)), requires_grad=True)
        with Tape():
            backward(T.tsum(T.softmax(T.reshape(T.conv2d(x, w, 1, 1), (32,)), axis=0)))
        assert np.abs(x.grad).max() < 1e-12
        h = 1e-5
        flat = x.data.reshape(-1)
        keep = flat[0]

        def f():
            return T.tsum(T.softmax(T.reshape(T.conv2d(x, w, 1, 1), (32,)), axis=0)).item()

        flat[0] = keep + h
        fp = f()
        flat[0] = keep - h
        fm = f()
        flat[0] = keep
        assert abs((fp - fm) / (2 * h)) < 1e-9

    def test_non_scalar_loss_rejected(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with Tape():
            y = T.mul(x, x)
            with pytest.raises(ValueError, match="scalar"):
                backward(y)

    def test_loss_off_tape_rejected(self):
        x = Tensor([1.0], requires_grad=True)
        y = T.tsum(x)  # no active tape
        with pytest.raises(ValueError, match="tape"):
            backward(y)

    def test_tape_consumed_after_backward(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with Tape() as tape:
            y = T.tsum(x)
            backward(y)
            assert len(tape) == 0
            with pytest.raises(RuntimeError, match="consumed"):
                tape.run(y)

    def test_every_requires_grad_ancestor_gets_grad(self):
        rng = np.random.default_rng(4)
        a = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
        b = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
        c = Tensor(rng.normal(size=(3, 3)), requires_grad=False)
        with Tape():
            backward(T.tsum(T.mul(T.add(T.matmul(a, b), c), c)))
        assert a.grad is not None and a.grad.shape == a.shape
        assert b.grad is not None and b.grad.shape == b.shape
        assert c.grad is None

    def test_fanout_accumulates(self):
        x = Tensor([3.0], requires_grad=True)
        with Tape():
            backward(T.tsum(T.add(T.mul(x, x), T.mul(x, x))))
        assert np.allclose(x.grad, [12.0])

    def test_backward_replays_in_exact_reverse_execution_order(self):
        order = []
        original = Tape.record

        def spying_record(self, fn, _orig=original):
            tag = len(order)
            order.append(("fwd", tag))

            def wrapped():
                order.append(("bwd", tag))
                fn()

            _orig(self, wrapped)

        x = Tensor([1.0, 2.0], requires_grad=True)
        Tape.record = spying_record
        try:
            with Tape():
                backward(T.tsum(T.relu(T.mul(x, x))))
        finally:
            Tape.record = original
        fwd = [t for kind, t in order if kind == "fwd"]
        bwd = [t for kind, t in order if kind == "bwd"]
        assert bwd == list(reversed(fwd))


class TestGradCheckExamples:
    def test_sum_of_squares(self):
        x = Tensor([1.0, 2.0, 3.0])
        assert grad_check(lambda t: T.tsum(T.mul(t, t)), x) < 1e-9

    def test_softmax_conservation(self):
        # analytic gradient of sum(softmax(x)) is exactly zero
        x = Tensor(np.random.default_rng(1).normal(size=5), requires_grad=True)
        with Tape():
            backward(T.tsum(T.softmax(x, axis=0)))
        assert np.abs(x.grad).max() < 1e-12

    def test_dice_loss_gradient(self):
        from nightseg.losses import dice_loss

        rng = np.random.default_rng(2)
        tgt = (rng.random((4, 4)) > 0.5).astype(np.float64)
        err = grad_check(lambda t: dice_loss(T.sigmoid(t), tgt), Tensor(rng.normal(size=(4, 4))))
        assert err < 1e-4

    def test_non_finite_reported_with_coordinate(self):
        def f(t):
            return T.tsum(T.recip(t))

        with np.errstate(divide="ignore"), pytest.raises(ValueError, match="coordinate"):
            grad_check(f, Tensor([1.0, 0.0, 2.0]))


class TestPerOpGradients:
    """Every primitive, checked against central differences on random instances."""

    @pytest.mark.parametrize("case", range(10))
    def test_random_instances(self, case):
        rng = np.random.default_rng(100 + case)
        head = Tensor(rng.normal(size=(3, 4)))
        ops = [
            lambda x: T.tsum(T.mul(T.add(x, head), head)),
            lambda x: T.tsum(T.mul(T.sub(x, head), head)),
            lambda x: T.tsum(T.mul(T.mul(x, head), head)),
            lambda x: T.tsum(T.mul(T.scale(x, -1.7), head)),
            lambda x: T.tsum(T.mul(T.add_scalar(x, 0.3), head)),
            lambda x: T.tsum(T.mul(T.relu(x), head)),
            lambda x: T.tsum(T.mul(T.sigmoid(x), head)),
            lambda x: T.tsum(T.mul(T.reshape(T.transpose2d(x), (3, 4)), head)),
            lambda x: T.tsum(T.mul(T.recip(T.add_scalar(T.mul(x, x), 1.0)), head)),
            lambda x: T.tsum(T.mul(T.mul_scalar_t(x, T.tmean(x)), head)),
        ]
        x = Tensor(rng.normal(size=(3, 4)))
        for f in ops:
            assert grad_check(f, Tensor(x.data.copy())) < 1e-4


def test_dtype_preserved_float32():
    x = Tensor(np.ones((2, 2), dtype=np.float32))
    y = T.add(x, x)
    assert y.data.dtype == np.float32


def test_finite_assertion():
    t = Tensor([1.0, np.inf])
    with pytest.raises(FloatingPointError):
        t.assert_finite("probe")
