import numpy as np
import pytest

from cure import nn
from cure.errors import ShapeError, ValidationError
from cure.nn import (
    AdamState,
    MlpParams,
    MlpSpec,
    adam_step,
    backward,
    bce_loss,
    forward,
    grad_check,
    init_params,
    mse_loss,
)


def _one_layer(w, b, act):
    return MlpParams([np.asarray(w, float)], [np.asarray(b, float)], (act,))


def _finite_diff(f, x, h=1e-5):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


class TestInit:
    spec = MlpSpec(5, ((7, "relu"), (3, "sigmoid"), (2, "identity")))

    def test_deterministic(self):
        a, b = init_params(self.spec, 42), init_params(self.spec, 42)
        assert a.tobytes() == b.tobytes()

    def test_zero_biases(self):
        for bias in init_params(self.spec, 1).biases:
            assert np.all(bias == 0.0)

    def test_seeds_differ(self):
        a, b = init_params(self.spec, 1), init_params(self.spec, 2)
        assert any(not np.array_equal(x, y) for x, y in zip(a.weights, b.weights))

    def test_shapes_and_scales(self):
        p = init_params(MlpSpec(400, ((300, "relu"), (200, "sigmoid"))), 0)
        assert p.weights[0].shape == (300, 400) and p.weights[1].shape == (200, 300)
        assert np.std(p.weights[0]) == pytest.approx(np.sqrt(2 / 400), rel=0.02)
        limit = np.sqrt(6 / 500)
        assert np.abs(p.weights[1]).max() <= limit
        assert np.std(p.weights[1]) == pytest.approx(limit / np.sqrt(3), rel=0.02)

    def test_large_seed(self):
        init_params(self.spec, 2**64 - 1)

    @pytest.mark.parametrize(
        "bad", [dict(input_dim=0, layers=((1, "relu"),)), dict(input_dim=2, layers=()), dict(input_dim=2, layers=((0, "relu"),)), dict(input_dim=2, layers=((2, "tanh"),))]
    )
    def test_invalid_spec(self, bad):
        with pytest.raises(ValidationError):
            MlpSpec(**bad)


class TestForward:
    def test_identity_map(self):
        y, _ = forward(_one_layer(np.eye(2), [0, 0], "identity"), [1.0, 2.0])
        np.testing.assert_array_equal(y, [1.0, 2.0])

    def test_sigmoid_zero(self):
        y, _ = forward(_one_layer(np.zeros((3, 4)), np.zeros(3), "sigmoid"), [5.0, -2.0, 1e3, 7.0])
        np.testing.assert_array_equal(y, [0.5, 0.5, 0.5])

    def test_relu_negative(self):
        y, _ = forward(_one_layer([[1.0]], [0.0], "relu"), [-1.0])
        assert y[0] == 0.0

    def test_sigmoid_extremes_finite(self):
        y, _ = forward(_one_layer([[1.0]], [0.0], "sigmoid"), np.array([[-1e4], [1e4]]))
        assert y[0, 0] == 0.0 and y[1, 0] == 1.0

    def test_batch_matches_rows(self):
        p = init_params(MlpSpec(3, ((4, "relu"), (2, "sigmoid"))), 5)
        x = np.random.default_rng(0).normal(size=(6, 3))
        yb, _ = forward(p, x)
        for i in range(6):
            np.testing.assert_allclose(forward(p, x[i])[0], yb[i], rtol=1e-14)

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            forward(init_params(MlpSpec(3, ((2, "relu"),)), 0), [1.0, 2.0])


class TestBackward:
    def test_zero_grad_out(self):
        p = init_params(MlpSpec(3, ((4, "relu"), (2, "sigmoid"))), 5)
        _, cache = forward(p, [0.3, -1.0, 2.0])
        grads, gin = backward(cache, np.zeros(2))
        assert all(np.all(a == 0) for a in grads.arrays())
        assert np.all(gin == 0)

    def test_identity_layer_grad_in(self):
        w = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
        _, cache = forward(_one_layer(w, [0.5, -0.5], "identity"), [1.0, 1.0, 1.0])
        g = np.array([0.7, -1.3])
        _, gin = backward(cache, g)
        np.testing.assert_allclose(gin, w.T @ g, rtol=0, atol=1e-15)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        p = init_params(MlpSpec(4, ((6, "relu"), (3, "sigmoid"))), 7)
        x, t = rng.normal(size=4), rng.normal(size=3)

        def loss_x(xv):
            return mse_loss(forward(p, xv)[0], t)[0]

        y, cache = forward(p, x)
        _, g = mse_loss(y, t)
        grads, gin = backward(cache, g)
        np.testing.assert_allclose(gin, _finite_diff(loss_x, x), rtol=1e-6, atol=1e-10)

        w0 = p.weights[0]

        def loss_w(wv):
            q = p.copy()
            q.weights[0] = wv
            return mse_loss(forward(q, x)[0], t)[0]

        np.testing.assert_allclose(grads.weights[0], _finite_diff(loss_w, w0.copy()), rtol=1e-6, atol=1e-10)

    def test_grad_out_shape_mismatch(self):
        p = init_params(MlpSpec(3, ((2, "relu"),)), 0)
        _, cache = forward(p, [1.0, 2.0, 3.0])
        with pytest.raises(ShapeError):
            backward(cache, np.zeros(3))


class TestLosses:
    def test_mse_zero(self):
        loss, g = mse_loss([1.0, 2.0], [1.0, 2.0])
        assert loss == 0.0 and np.all(g == 0)

    def test_mse_value(self):
        assert mse_loss([1.0, 0.0], [0.0, 0.0])[0] == 0.5

    def test_mse_grad_fd(self):
        rng = np.random.default_rng(3)
        pred, tgt = rng.normal(size=5), rng.normal(size=5)
        _, g = mse_loss(pred, tgt)
        np.testing.assert_allclose(g, _finite_diff(lambda v: mse_loss(v, tgt)[0], pred), rtol=1e-6)

    def test_mse_length_mismatch(self):
        with pytest.raises(ShapeError):
            mse_loss([1.0], [1.0, 2.0])

    def test_bce_values(self):
        assert bce_loss(0.5, 1)[0] == pytest.approx(np.log(2), abs=1e-12)
        assert bce_loss(1 - 1e-7, 1)[0] == pytest.approx(0.0, abs=1e-6)
        assert bce_loss(0.9, 0)[0] == pytest.approx(-np.log(0.1), abs=1e-12)

    def test_bce_clamped_endpoints_finite(self):
        for p in (0.0, 1.0):
            for y in (0, 1):
                loss, grad = bce_loss(p, y)
                assert np.isfinite(loss) and np.isfinite(grad) and loss >= 0

    def test_bce_grad_fd(self):
        for p in (0.2, 0.5, 0.83):
            for y in (0, 1):
                fd = (bce_loss(p + 1e-6, y)[0] - bce_loss(p - 1e-6, y)[0]) / 2e-6
                assert bce_loss(p, y)[1] == pytest.approx(fd, rel=1e-6)


class TestAdam:
    def _scalar(self, w):
        return MlpParams([np.array([[w]])], [np.zeros(1)], ("identity",))

    def test_zero_grads_no_change(self):
        p = init_params(MlpSpec(3, ((2, "relu"),)), 0)
        zero = p.with_arrays([np.zeros_like(a) for a in p.arrays()])
        q, st = adam_step(p, zero, AdamState.zeros_like(p))
        assert q.tobytes() == p.tobytes() and st.t == 1

    def test_first_step_is_lr(self):
        p = self._scalar(0.3)
        g = p.with_arrays([np.array([[1.0]]), np.zeros(1)])
        q, _ = adam_step(p, g, AdamState.zeros_like(p, lr=0.01))
        assert q.weights[0][0, 0] - 0.3 == pytest.approx(-0.01, rel=1e-6)

    def test_inputs_untouched(self):
        p = self._scalar(1.0)
        st = AdamState.zeros_like(p)
        g = p.with_arrays([np.array([[1.0]]), np.ones(1)])
        adam_step(p, g, st)
        assert p.weights[0][0, 0] == 1.0 and st.t == 0 and np.all(st.m[0] == 0)

    def test_quadratic(self):
        # reference scalar Adam written out by hand
        w, m, v = 1.0, 0.0, 0.0
        for t in range(1, 101):
            g = 2 * w
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            w -= 0.1 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
        assert abs(w) < 0.1

        p = self._scalar(1.0)
        st = AdamState.zeros_like(p, lr=0.1)
        for _ in range(100):
            g = p.with_arrays([2 * p.weights[0], np.zeros(1)])
            p, st = adam_step(p, g, st)
        assert abs(p.weights[0][0, 0]) < 0.1
        assert p.weights[0][0, 0] == pytest.approx(w, rel=1e-12, abs=1e-15)

    def test_bad_betas(self):
        with pytest.raises(ValidationError):
            AdamState.zeros_like(self._scalar(1.0), beta1=1.0)


class TestGradCheck:
    @pytest.mark.parametrize("spec", nn.GRADCHECK_SPECS)
    def test_small_nets(self, spec):
        assert grad_check(spec, 0) <= 1e-5

    def test_zero_input_zero_weights(self):
        spec = MlpSpec(3, ((4, "sigmoid"), (2, "identity")))
        p = init_params(spec, 0)
        p = p.with_arrays([np.zeros_like(a) for a in p.arrays()])
        errs = nn.grad_check_errors(spec, 0, params=p, x=np.zeros(3))
        # arrays() order is w0, b0, w1, b1; zero downstream weights make the
        # hidden bias gradient exactly zero both analytically and numerically
        assert errs[1] == 0.0 and errs[0] == 0.0
        assert max(errs) <= 1e-5

    def test_repeatable(self):
        spec = nn.GRADCHECK_SPECS[3]
        assert grad_check(spec, 9) == grad_check(spec, 9)

    def test_detects_wrong_derivative(self, monkeypatch):
        bad = nn.Activation(nn.ACTIVATIONS["sigmoid"].fn, lambda z, a: -a * (1 - a))
        monkeypatch.setitem(nn.ACTIVATIONS, "sigmoid", bad)
        assert grad_check(MlpSpec(3, ((4, "sigmoid"), (2, "identity"))), 0) > 1e-5

    def test_rejects_large_spec(self):
        with pytest.raises(ValidationError):
            grad_check(MlpSpec(3, ((64, "relu"),)), 0)
