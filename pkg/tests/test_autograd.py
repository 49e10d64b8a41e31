import numpy as np
import pytest

import tgnseal.autograd as ag
from tgnseal.autograd import AdamState, Tensor, adam_step, backward, finite_diff_check
from tgnseal.errors import ShapeError


def param(rng, shape, scale=1.0):
    return ag.parameter(scale * rng.standard_normal(shape))


class TestForwardValues:
    def test_matmul_identity(self):
        x = ag.constant(np.arange(9.0).reshape(3, 3))
        out = ag.matmul(ag.constant(np.eye(3)), x)
        assert np.array_equal(out.data, x.data)

    def test_sigmoid_zero(self):
        out = ag.sigmoid(ag.constant(np.zeros((2, 3))))
        assert np.array_equal(out.data, np.full((2, 3), 0.5))

    def test_conv1d_unit_kernel_identity(self):
        x = ag.constant(np.array([[1.0, -2.0, 3.0, 0.5]]))
        w = ag.constant(np.array([[[1.0]]]))  # 1 filter, 1 channel, kernel 1
        out = ag.conv1d(x, w, stride=1)
        assert np.array_equal(out.data, x.data)

    def test_shape_errors_name_op(self):
        with pytest.raises(ShapeError, match="matmul"):
            ag.matmul(ag.constant(np.zeros((2, 3))), ag.constant(np.zeros((2, 3))))
        with pytest.raises(ShapeError, match="conv1d"):
            ag.conv1d(ag.constant(np.zeros((2, 3))), ag.constant(np.zeros((4, 3, 9))))

    def test_softmax_rows(self):
        out = ag.softmax(ag.constant(np.zeros((2, 4))), axis=1)
        assert np.allclose(out.data, 0.25)

    def test_maxpool(self):
        x = ag.constant(np.array([[1.0, 5.0, 2.0, 3.0, 9.0]]))
        out = ag.maxpool1d(x, 2)
        assert np.array_equal(out.data, np.array([[5.0, 3.0]]))  # remainder dropped


class TestBackwardBasics:
    def test_sum_grad_ones(self):
        x = param(np.random.default_rng(0), (3, 4))
        backward(ag.sum_(x))
        assert np.array_equal(x.grad, np.ones((3, 4)))

    def test_quadratic_grad(self):
        x = param(np.random.default_rng(1), (5,))
        backward(ag.sum_(ag.mul(x, x)))
        assert np.allclose(x.grad, 2 * x.data)

    def test_fanout_accumulates(self):
        x = param(np.random.default_rng(2), (4,))
        y = ag.add(ag.sum_(x), ag.sum_(x))  # x used twice
        backward(y)
        assert np.allclose(x.grad, 2.0)

    def test_grads_accumulate_across_calls(self):
        x = param(np.random.default_rng(3), (3,))
        backward(ag.sum_(x))
        backward(ag.sum_(x))
        assert np.allclose(x.grad, 2.0)

    def test_non_scalar_loss_rejected(self):
        x = param(np.random.default_rng(4), (3,))
        with pytest.raises(ShapeError):
            backward(ag.mul(x, x))
        ag.tape_clear()

    def test_no_grad_records_nothing(self):
        x = param(np.random.default_rng(5), (3,))
        with ag.no_grad():
            out = ag.sum_(ag.mul(x, x))
        assert ag.tape_size() == 0
        assert not out.requires_grad

    def test_forward_bit_deterministic(self):
        rng = np.random.default_rng(6)
        a, b = rng.standard_normal((8, 8)), rng.standard_normal((8, 8))
        r1 = ag.matmul(ag.constant(a), ag.constant(b)).data
        r2 = ag.matmul(ag.constant(a), ag.constant(b)).data
        assert np.array_equal(r1, r2)


class TestGradChecks:
    """Central finite differences (h=1e-5) vs analytic grads, rel tol 1e-4."""

    def check(self, build, *params):
        report = finite_diff_check(build, list(params))
        assert report.passed, f"max rel err {report.max_rel_err}"

    @pytest.mark.parametrize("seed", range(5))
    def test_matmul(self, seed):
        rng = np.random.default_rng(seed)
        a, b = param(rng, (3, 4)), param(rng, (4, 2))
        self.check(lambda: ag.sum_(ag.matmul(a, b)), a, b)

    @pytest.mark.parametrize("seed", range(5))
    def test_add_mul_broadcast(self, seed):
        rng = np.random.default_rng(seed)
        a, b, c = param(rng, (3, 4)), param(rng, (4,)), param(rng, (3, 1))
        self.check(lambda: ag.sum_(ag.mul(ag.add(a, b), c)), a, b, c)

    @pytest.mark.parametrize("seed", range(3))
    def test_concat_slice(self, seed):
        rng = np.random.default_rng(seed)
        a, b = param(rng, (2, 3)), param(rng, (2, 2))
        def f():
            cat = ag.concat([a, b], axis=1)
            return ag.sum_(ag.slice_(cat, (slice(None), slice(1, 4))))
        self.check(f, a, b)

    @pytest.mark.parametrize("seed", range(3))
    def test_take_rows_reshape(self, seed):
        rng = np.random.default_rng(seed)
        a = param(rng, (5, 3))
        idx = np.array([4, 0, 0, 2])  # includes a duplicate row
        self.check(lambda: ag.sum_(ag.reshape(ag.take_rows(a, idx), (2, 6))), a)

    @pytest.mark.parametrize("op", [ag.sigmoid, ag.tanh, ag.relu])
    @pytest.mark.parametrize("seed", range(3))
    def test_elementwise(self, op, seed):
        rng = np.random.default_rng(seed)
        a = param(rng, (4, 3))
        # keep relu away from the kink
        a.data[np.abs(a.data) < 1e-3] += 0.01
        self.check(lambda: ag.sum_(op(a)), a)

    @pytest.mark.parametrize("seed", range(3))
    def test_softmax(self, seed):
        rng = np.random.default_rng(seed)
        a, w = param(rng, (3, 5)), param(rng, (3, 5))
        self.check(lambda: ag.sum_(ag.mul(ag.softmax(a, axis=1), w)), a, w)

    @pytest.mark.parametrize("seed", range(3))
    def test_mean_axes(self, seed):
        rng = np.random.default_rng(seed)
        a = param(rng, (4, 3))
        self.check(lambda: ag.sum_(ag.mean(a, axis=0)), a)
        self.check(lambda: ag.mean(a, axis=None), a)

    @pytest.mark.parametrize("seed", range(3))
    @pytest.mark.parametrize("stride", [1, 2, 3])
    def test_conv1d(self, seed, stride):
        rng = np.random.default_rng(seed)
        x, w, b = param(rng, (2, 9)), param(rng, (3, 2, 3)), param(rng, (3,))
        self.check(lambda: ag.sum_(ag.conv1d(x, w, b, stride=stride)), x, w, b)

    @pytest.mark.parametrize("seed", range(3))
    def test_maxpool1d(self, seed):
        rng = np.random.default_rng(seed)
        x = param(rng, (3, 8))
        # separate values so +-h cannot flip the argmax
        x.data = np.argsort(x.data, axis=None).reshape(3, 8).astype(float) * 0.37
        self.check(lambda: ag.sum_(ag.maxpool1d(x, 2)), x)

    @pytest.mark.parametrize("seed", range(3))
    def test_bce(self, seed):
        rng = np.random.default_rng(seed)
        logits = param(rng, (6,))
        labels = (rng.random(6) < 0.5).astype(float)
        self.check(lambda: ag.bce_loss(ag.sigmoid(logits), labels), logits)


class TestBceValues:
    def test_half(self):
        loss = ag.bce_loss(ag.constant(np.array(0.5)), 1.0)
        assert abs(float(loss.data) - np.log(2.0)) < 1e-12

    def test_clamped_high(self):
        loss = ag.bce_loss(ag.constant(np.array(1.0 - 1e-7)), 1.0)
        assert 0 < float(loss.data) < 2e-7

    def test_clamp_keeps_finite(self):
        loss = ag.bce_loss(ag.constant(np.array([0.0, 1.0])), np.array([1.0, 0.0]))
        assert np.isfinite(float(loss.data))

    def test_mean_over_batch(self):
        loss = ag.bce_loss(ag.constant(np.array([0.5, 0.5])), np.array([1.0, 0.0]))
        assert abs(float(loss.data) - np.log(2.0)) < 1e-12


class TestAdam:
    def test_first_step_sign(self):
        p = ag.parameter(np.array([1.0, -2.0]))
        p.grad = np.array([10.0, -0.5])
        state = AdamState(lr=1e-3)
        before = p.data.copy()
        adam_step(state, [p])
        assert np.allclose(before - p.data, 1e-3 * np.sign([10.0, -0.5]), atol=1e-6)

    def test_zero_grad_no_move(self):
        p = ag.parameter(np.array([1.0, 2.0]))
        state = AdamState(lr=0.1)
        adam_step(state, [p])
        assert np.array_equal(p.data, np.array([1.0, 2.0]))

    def test_quadratic_convergence(self):
        # 200 steps on f(x) = (x - 3)^2 from x=0 reaches |x - 3| < 1e-3
        p = ag.parameter(np.array(0.0))
        state = AdamState(lr=0.05)
        for _ in range(200):
            diff = ag.add(p, ag.constant(np.array(-3.0)))
            loss = ag.mul(diff, diff)
            backward(loss)
            adam_step(state, [p])
        assert abs(float(p.data) - 3.0) < 1e-3

    def test_deterministic(self):
        def run():
            p = ag.parameter(np.array([0.3, -0.7]))
            st = AdamState(lr=0.01)
            for _ in range(5):
                backward(ag.sum_(ag.mul(p, p)))
                adam_step(st, [p])
            return p.data.copy()
        assert np.array_equal(run(), run())
