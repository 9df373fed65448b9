import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from koopctl.net import ACTIVATIONS, Layer, Mlp, OptimizerState, opt_step


def loss_and_grads(net, x, target):
    out, tape = net.forward(x)
    r = out - target
    grads, g_in = net.backward(tape, r)
    return 0.5 * float((r**2).sum()), grads, g_in


def fd_check(net, x, target, h=1e-5):
    _, grads, _ = loss_and_grads(net, x, target)
    worst = 0.0
    for p, g in zip(net.params(), grads):
        for i in np.ndindex(p.shape):
            old = p[i]
            p[i] = old + h
            up = loss_and_grads(net, x, target)[0]
            p[i] = old - h
            dn = loss_and_grads(net, x, target)[0]
            p[i] = old
            fd = (up - dn) / (2 * h)
            worst = max(worst, abs(g[i] - fd) / max(1.0, abs(g[i])))
    return worst


class TestForward:
    def test_identity_layer(self):
        net = Mlp([Layer(np.eye(3), np.zeros(3))])
        x = np.array([[1.0, -2.0, 0.5]])
        np.testing.assert_array_equal(net(x), x)

    def test_relu(self):
        net = Mlp([Layer(np.eye(2), np.zeros(2), "relu")])
        np.testing.assert_array_equal(net(np.array([[-1.0, 2.0]])), [[0.0, 2.0]])

    def test_repeatable(self):
        net = Mlp.init([4, 8, 2], "tanh", np.random.default_rng(0))
        x = np.random.default_rng(1).normal(size=(5, 4))
        assert net(x).tobytes() == net(x).tobytes()
        np.testing.assert_array_equal(net.forward(x)[0], net(x))

    def test_shape_check(self):
        net = Mlp.init([4, 2], "relu", np.random.default_rng(0))
        with pytest.raises(ValueError):
            net.forward(np.zeros((3, 5)))

    def test_bad_chain(self):
        with pytest.raises(ValueError):
            Mlp([Layer(np.zeros((2, 3)), np.zeros(3)), Layer(np.zeros((4, 1)), np.zeros(1))])

    @settings(max_examples=25)
    @given(st.integers(1, 12), st.integers(0, 10_000))
    def test_batch_equivariance(self, batch, seed):
        rng = np.random.default_rng(seed)
        net = Mlp.init([3, 6, 6, 2], "relu", rng)
        x = rng.normal(size=(batch, 3))
        perm = rng.permutation(batch)
        np.testing.assert_allclose(net(x[perm]), net(x)[perm], rtol=0, atol=1e-14)


class TestBackward:
    def test_scalar_chain(self):
        net = Mlp([Layer(np.array([[2.0]]), np.zeros(1))])
        _, tape = net.forward(np.array([[3.0]]))
        grads, _ = net.backward(tape, np.array([[1.5]]))
        assert grads[0][0, 0] == pytest.approx(3 * 1.5)

    def test_zero_output_grad(self):
        net = Mlp.init([3, 5, 2], "tanh", np.random.default_rng(0))
        _, tape = net.forward(np.ones((4, 3)))
        grads, g_in = net.backward(tape, np.zeros((4, 2)))
        assert all(not g.any() for g in grads) and not g_in.any()

    @pytest.mark.parametrize("act", ACTIVATIONS)
    @pytest.mark.parametrize("n_layers", [1, 2, 3, 4])
    def test_finite_differences(self, act, n_layers):
        rng = np.random.default_rng(10 * n_layers + ACTIVATIONS.index(act))
        sizes = [3] + [4] * (n_layers - 1) + [2]
        net = Mlp.init(sizes, [act] * n_layers, rng)
        for layer in net.layers:  # keep relu pre-activations off the kink
            layer.b[...] = rng.uniform(0.2, 0.5, layer.b.shape)
        x, target = rng.normal(size=(5, 3)), rng.normal(size=(5, 2))
        assert fd_check(net, x, target) <= 1e-6

    def test_input_gradient(self):
        rng = np.random.default_rng(3)
        net = Mlp.init([3, 4, 2], "tanh", rng)
        x, target = rng.normal(size=(2, 3)), rng.normal(size=(2, 2))
        _, _, g_in = loss_and_grads(net, x, target)
        h = 1e-6
        for i in np.ndindex(x.shape):
            xp, xm = x.copy(), x.copy()
            xp[i] += h
            xm[i] -= h
            fd = (loss_and_grads(net, xp, target)[0] - loss_and_grads(net, xm, target)[0]) / (2 * h)
            assert g_in[i] == pytest.approx(fd, abs=1e-7)


class TestStructure:
    def test_param_count(self):
        net = Mlp.init([150, 80, 80, 2], "relu", np.random.default_rng(0))
        assert net.n_params() == sum((a + 1) * b for a, b in zip(net.sizes[:-1], net.sizes[1:]))
        assert net.activations == ["relu", "relu", "identity"]

    def test_init_bounds(self):
        net = Mlp.init([10, 30], "relu", np.random.default_rng(0))
        assert np.abs(net.layers[0].W).max() <= np.sqrt(6 / 40)
        assert not net.layers[0].b.any()

    def test_flat_round_trip(self):
        net = Mlp.init([3, 5, 2], ["tanh", "identity"], np.random.default_rng(0))
        back = Mlp.from_flat(net.to_manifest(), net.flat())
        x = np.ones((1, 3))
        np.testing.assert_array_equal(back(x), net(x))
        with pytest.raises(ValueError):
            Mlp.from_flat(net.to_manifest(), net.flat()[:-1])


class TestAdam:
    def test_zero_gradient(self):
        p = np.array([1.0, -2.0])
        opt_step([p], [np.zeros(2)], OptimizerState(lr=0.1))
        np.testing.assert_array_equal(p, [1.0, -2.0])

    @pytest.mark.parametrize("g", [0.3, -7.0])
    def test_first_step_is_lr_sign(self, g):
        p = np.array([0.0])
        opt_step([p], [np.array([g])], OptimizerState(lr=0.01))
        assert p[0] == pytest.approx(-0.01 * np.sign(g), rel=1e-6)

    def test_quadratic_bowl(self):
        x = np.array([1.0])
        state = OptimizerState(lr=0.05)
        for _ in range(500):
            opt_step([x], [2 * x], state)
        assert abs(x[0]) <= 1e-2

    def test_non_finite_skipped(self):
        p = np.array([1.0])
        state = OptimizerState()
        assert opt_step([p], [np.array([np.nan])], state) is False
        assert p[0] == 1.0 and state.step == 0
