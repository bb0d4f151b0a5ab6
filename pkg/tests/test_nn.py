import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gaussunmix import nn
from gaussunmix.nn import (EPS, AdamState, DenseLayer, DenseNetwork, adam_step, glorot_layer, load_network,
                           loss_ce, loss_mse, loss_psid, loss_smooth, numerical_gradients, relative_errors,
                           save_network, softmax)


def toy_net(rng, dims, bias, out_act, hidden="relu"):
    layers = [glorot_layer(rng, a, b, bias, hidden) for a, b in zip(dims[:-2], dims[1:-1])]
    layers.append(glorot_layer(rng, dims[-2], dims[-1], bias, out_act))
    if bias:
        for l in layers:
            l.bias[:] = rng.normal(0, 0.1, l.out_dim)
    return DenseNetwork(layers)


# ---------------------------------------------------------------- loop oracles

def smooth_oracle(Y, Yh):
    B, N = Y.shape
    return sum((Y[b, j] - Yh[b, j]) ** 2 for b in range(B) for j in range(N)) / N


def ce_oracle(L, Lh):
    K, N = L.shape
    total = 0.0
    for j in range(N):
        for k in range(K):
            p = min(max(Lh[k, j], EPS), 1 - EPS)
            total += L[k, j] * math.log(p) + (1 - L[k, j]) * math.log(1 - p)
    return -total / N


def psid_oracle(Y, Yh):
    B, N = Y.shape
    total = 0.0
    for j in range(N):
        s, t = sum(Y[:, j]), sum(Yh[:, j])
        for b in range(B):
            q = max(Y[b, j] / s, EPS)
            r = max(Yh[b, j] / t, EPS)
            total += q * math.log(q / r) + r * math.log(r / q)
    return total / N


class TestForward:
    def test_identity_layer(self, rng):
        net = DenseNetwork([DenseLayer(np.eye(3), np.zeros(3), "linear")])
        X = rng.random((3, 5))
        np.testing.assert_array_equal(net(X), X)

    def test_relu(self):
        net = DenseNetwork([DenseLayer(np.eye(2), None, "relu")])
        np.testing.assert_array_equal(net(np.array([[-1.0], [2.0]]))[:, 0], [0.0, 2.0])

    def test_leaky_relu(self):
        net = DenseNetwork([DenseLayer(np.eye(3), None, "leaky_relu")])
        out = net(np.array([[-2.0], [0.0], [3.0]]))[:, 0]
        np.testing.assert_array_equal(out, [-2.0 * nn.LEAKY_SLOPE, 0.0, 3.0])

    def test_two_layer_by_hand(self):
        W1, b1 = np.array([[1.0, -1.0], [2.0, 0.5]]), np.array([0.5, -1.0])
        W2 = np.array([[1.0, 1.0], [-1.0, 2.0]])
        net = DenseNetwork([DenseLayer(W1, b1, "relu"), DenseLayer(W2, None, "linear")])
        # x=(1,3): z1=(1-3+.5, 2+1.5-1)=(-1.5, 2.5) -> a1=(0, 2.5) -> (2.5, 5)
        np.testing.assert_allclose(net(np.array([[1.0], [3.0]]))[:, 0], [2.5, 5.0])

    def test_dimension_mismatch(self, rng):
        net = toy_net(rng, [3, 2], True, "linear")
        with pytest.raises(ValueError):
            net(np.ones((4, 2)))

    def test_layer_size_mismatch(self, rng):
        with pytest.raises(ValueError):
            DenseNetwork([glorot_layer(rng, 3, 2, False, "relu"), glorot_layer(rng, 3, 2, False, "relu")])

    def test_relu_eps_floor(self):
        net = DenseNetwork([DenseLayer(np.zeros((3, 2)), None, "relu_eps")])
        np.testing.assert_array_equal(net(np.ones((2, 4))), EPS)


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(softmax(np.zeros((3, 1)))[:, 0], [1 / 3] * 3)

    def test_no_overflow(self):
        p = softmax(np.array([[1000.0], [0.0]]))[:, 0]
        assert np.isfinite(p).all() and p[0] == pytest.approx(1.0) and p[1] < 1e-12

    @given(arrays(np.float64, (4, 3), elements=st.floats(-50, 50)), st.floats(-100, 100))
    def test_shift_invariant_and_simplex(self, z, c):
        p = softmax(z)
        np.testing.assert_allclose(softmax(z + c), p, atol=1e-12)
        np.testing.assert_allclose(p.sum(axis=0), 1.0, atol=1e-12)
        assert np.all(p > 0)


class TestLosses:
    def test_smooth_values(self, rng):
        Y = rng.random((3, 4))
        assert loss_smooth(Y, Y) == 0.0
        assert loss_smooth(np.array([[2.0]]), np.array([[0.0]])) == 4.0
        Yh = rng.random((3, 4))
        assert loss_smooth(Y, Yh) == pytest.approx(smooth_oracle(Y, Yh), abs=1e-9)

    def test_ce_values(self, rng):
        L = np.eye(3)
        assert loss_ce(L, L) <= 3 * EPS * abs(math.log(EPS))
        got = loss_ce(np.array([[1.0], [0.0]]), np.array([[0.5], [0.5]]))
        assert got == pytest.approx(2 * math.log(2))
        L = rng.dirichlet(np.ones(4), 6).T
        Lh = rng.dirichlet(np.ones(4), 6).T
        assert loss_ce(L, Lh) == pytest.approx(ce_oracle(L, Lh), abs=1e-9)

    def test_mse_values(self, rng):
        Y = rng.random((3, 4))
        assert loss_mse(Y, Y) == 0.0
        assert loss_mse(np.zeros((2, 1)), np.ones((2, 1))) == 1.0
        Yh = rng.random((3, 4))
        assert loss_mse(Y, Yh) == pytest.approx(smooth_oracle(Y, Yh) / 3, abs=1e-12)

    def test_psid_values(self, rng):
        Y = rng.random((5, 4)) + 0.01
        assert loss_psid(Y, Y) == pytest.approx(0.0, abs=1e-15)
        a = np.array([[1.0], [0.0]]) + EPS
        b = np.array([[0.0], [1.0]]) + EPS
        assert loss_psid(a, b) > 10 and loss_psid(a, b) == pytest.approx(loss_psid(b, a))
        Yh = rng.random((5, 4)) + 0.01
        assert loss_psid(Y, Yh) == pytest.approx(psid_oracle(Y, Yh), abs=1e-9)

    def test_psid_zero_norm(self):
        with pytest.raises(ValueError):
            loss_psid(np.zeros((3, 1)), np.ones((3, 1)))

    @given(st.integers(0, 2**32 - 1))
    def test_non_negative(self, seed):
        r = np.random.default_rng(seed)
        L, Lh = r.dirichlet(np.ones(3), 5).T, r.dirichlet(np.ones(3), 5).T
        Y, Yh = r.random((4, 5)) + 1e-3, r.random((4, 5)) + 1e-3
        assert loss_ce(L, Lh) >= 0
        assert loss_smooth(Y, Yh) >= 0 and loss_mse(Y, Yh) >= 0 and loss_psid(Y, Yh) >= 0


def _check(loss_fn, params, analytic):
    numeric = numerical_gradients(loss_fn, params, h=1e-4)
    worst = max(float(relative_errors(a, n).max()) for a, n in zip(analytic, numeric))
    assert worst <= 1e-4, worst


class TestBackward:
    def test_smooth_gradient(self, rng):
        net = toy_net(rng, [6, 5, 4, 3], True, "linear")
        X, Y = rng.random((6, 7)), rng.random((3, 7))

        def loss():
            return loss_smooth(Y, net(X))
        out, cache = net.forward(X)
        _check(loss, net.params(), net.backward(cache, nn.loss_smooth_grad(Y, out)[1])[0])

    def test_ce_gradient_joint(self, rng):
        net = toy_net(rng, [5, 4, 3, 3], False, "softmax")
        X, L = rng.random((5, 6)), rng.dirichlet(np.ones(3), 6).T

        def loss():
            return loss_ce(L, net(X))
        out, cache = net.forward(X)
        g = nn.softmax_ce_logit_grad(L, out)
        _check(loss, net.params(), net.backward(cache, g, grad_is_preactivation=True)[0])
        # the unfused chain rule agrees
        unfused = net.backward(cache, nn.loss_ce_grad(L, out)[1])[0]
        for a, b in zip(unfused, net.backward(cache, g, grad_is_preactivation=True)[0]):
            np.testing.assert_allclose(a, b, atol=1e-12)

    def test_ce_gradient_leaky_hidden(self, rng):
        net = toy_net(rng, [5, 4, 3, 3], False, "softmax", hidden="leaky_relu")
        X, L = rng.normal(size=(5, 6)), rng.dirichlet(np.ones(3), 6).T

        def loss():
            return loss_ce(L, net(X))
        out, cache = net.forward(X)
        _check(loss, net.params(), net.backward(cache, nn.softmax_ce_logit_grad(L, out), grad_is_preactivation=True)[0])

    def test_mse_gradient(self, rng):
        net = toy_net(rng, [3, 4, 5], False, "relu_eps")
        for l in net.layers:
            l.weights = np.abs(l.weights)
        X, Y = rng.dirichlet(np.ones(3), 6).T, rng.random((5, 6))

        def loss():
            return loss_mse(Y, net(X))
        out, cache = net.forward(X)
        _check(loss, net.params(), net.backward(cache, nn.loss_mse_grad(Y, out)[1])[0])

    def test_psid_gradient(self, rng):
        net = toy_net(rng, [3, 4, 5], False, "relu_eps")
        for l in net.layers:
            l.weights = np.abs(l.weights)
        X, Y = rng.dirichlet(np.ones(3), 6).T, rng.random((5, 6)) + 0.05

        def loss():
            return loss_psid(Y, net(X))
        out, cache = net.forward(X)
        _check(loss, net.params(), net.backward(cache, nn.loss_psid_grad(Y, out)[1])[0])

    def test_input_gradient(self, rng):
        net = toy_net(rng, [4, 3, 2], True, "linear")
        X, Y = rng.random((4, 3)), rng.random((2, 3))
        out, cache = net.forward(X)
        _, dX = net.backward(cache, nn.loss_smooth_grad(Y, out)[1], need_input_grad=True)
        numeric = numerical_gradients(lambda: loss_smooth(Y, net(X)), [X])[0]
        np.testing.assert_allclose(dX, numeric, rtol=1e-5, atol=1e-9)

    def test_zero_upstream(self, rng):
        net = toy_net(rng, [4, 3, 2], True, "linear")
        _, cache = net.forward(rng.random((4, 3)))
        assert all(np.all(g == 0) for g in net.backward(cache, np.zeros((2, 3)))[0])

    def test_linear_1x1_by_hand(self):
        w, x, y = 0.7, 2.0, 0.5
        net = DenseNetwork([DenseLayer(np.array([[w]]), None, "linear")])
        X, Y = np.array([[x, x]]), np.array([[y, y]])
        out, cache = net.forward(X)
        gW = net.backward(cache, nn.loss_smooth_grad(Y, out)[1])[0][0]
        # two identical columns, each contributing 2(wx - y)x / N
        assert gW[0, 0] == pytest.approx(2 * 2 * (w * x - y) * x / 2)


class TestAdam:
    def test_zero_gradient(self):
        p = [np.array([1.0, -2.0])]
        st_ = AdamState()
        adam_step(st_, p, [np.zeros(2)])
        np.testing.assert_array_equal(p[0], [1.0, -2.0])
        assert st_.step == 1

    def test_first_step_is_lr_sign(self):
        p = [np.zeros(3)]
        adam_step(AdamState(lr=1e-3), p, [np.array([0.5, -3.0, 1e-2])])
        np.testing.assert_allclose(p[0], [-1e-3, 1e-3, -1e-3], rtol=1e-4)

    def test_deterministic(self, rng):
        g = [rng.normal(size=4)]
        outs = []
        for _ in range(2):
            p, s = [np.ones(4)], AdamState()
            for _ in range(3):
                adam_step(s, p, g)
            outs.append(p[0].copy())
        np.testing.assert_array_equal(outs[0], outs[1])

    def test_epoch_on_quadratic_decreases(self, rng):
        x = [rng.normal(size=5)]
        target = rng.normal(size=5)
        start = float(np.sum((x[0] - target) ** 2))
        s = AdamState(lr=1e-2)
        for _ in range(10):
            adam_step(s, x, [2 * (x[0] - target)])
        assert float(np.sum((x[0] - target) ** 2)) < start


class TestGradientTools:
    def test_relative_error_floor(self):
        assert relative_errors(np.array([1e-12]), np.array([-1e-12]))[0] == 0.0
        assert relative_errors(np.array([1.0]), np.array([1.1]))[0] == pytest.approx(0.1 / 1.1)

    def test_numerical_gradient_restores_params(self, rng):
        p = rng.normal(size=(2, 2))
        before = p.copy()
        numerical_gradients(lambda: float(np.sum(p ** 3)), [p])
        np.testing.assert_array_equal(p, before)


class TestCheckpoint:
    def test_round_trip(self, rng, tmp_path):
        net = toy_net(rng, [4, 3, 2], True, "softmax")
        save_network(net, tmp_path / "net", AdamState(lr=5e-4, step=7))
        back, adam = load_network(tmp_path / "net")
        assert back.dims == net.dims
        for a, b in zip(back.params(), net.params()):
            np.testing.assert_array_equal(a, b)
        assert [l.activation for l in back.layers] == [l.activation for l in net.layers]
        assert adam.lr == 5e-4 and adam.step == 7

    def test_payload_is_little_endian_f8(self, rng, tmp_path):
        net = toy_net(rng, [2, 2], False, "linear")
        save_network(net, tmp_path / "n")
        raw = (tmp_path / "n.bin").read_bytes()
        np.testing.assert_array_equal(np.frombuffer(raw, "<f8").reshape(2, 2), net.layers[0].weights)

    def test_truncated_payload(self, rng, tmp_path):
        net = toy_net(rng, [2, 2], True, "linear")
        save_network(net, tmp_path / "n")
        (tmp_path / "n.bin").write_bytes((tmp_path / "n.bin").read_bytes()[:-8])
        with pytest.raises(ValueError):
            load_network(tmp_path / "n")
