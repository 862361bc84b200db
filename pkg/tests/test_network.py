"""MLP forward/backward, Adam, and serialization unit tests."""

import numpy as np
import pytest

from nccqr.network import (
    AdamState,
    Gradients,
    NetworkParams,
    adam_step,
    backward,
    forward,
    forward_batch,
    init_adam_state,
    init_network,
    load_network,
    network_from_json,
    network_to_json,
    save_network,
)


def _count(widths):
    return sum(widths[i + 1] * (widths[i] + 1) for i in range(len(widths) - 1))


class TestInit:
    def test_parameter_count_univariate(self):
        net = init_network(1, [256, 256, 256], seed=0)
        assert net.n_params == _count([1, 256, 256, 256, 2]) == 132_610

    def test_parameter_count_d5(self):
        net = init_network(5, [256, 256, 256], seed=0)
        assert net.n_params == _count([5, 256, 256, 256, 2]) == 133_634

    def test_deterministic_per_seed(self):
        a = init_network(3, [16, 8], seed=42)
        b = init_network(3, [16, 8], seed=42)
        c = init_network(3, [16, 8], seed=43)
        for wa, wb in zip(a.weights, b.weights):
            assert np.array_equal(wa, wb)
        assert any(not np.array_equal(wa, wc)
                   for wa, wc in zip(a.weights, c.weights))

    def test_he_scaling_and_zero_biases(self):
        net = init_network(100, [400, 300], seed=7)
        for W, w_in in zip(net.weights, net.widths[:-1]):
            assert W.std() == pytest.approx(np.sqrt(2.0 / w_in), rel=0.15)
        for b in net.biases:
            assert np.all(b == 0.0)

    def test_rejects_bad_shapes(self):
        with pytest.raises(ValueError):
            init_network(0, [4], seed=0)
        with pytest.raises(ValueError):
            init_network(2, [], seed=0)
        with pytest.raises(ValueError):
            init_network(2, [4, -1], seed=0)

    def test_params_validation(self):
        w = [np.zeros((3, 2)), np.zeros((2, 3))]
        b = [np.zeros(3), np.zeros(2)]
        NetworkParams((2, 3, 2), tuple(w), tuple(b))
        with pytest.raises(ValueError):
            NetworkParams((2, 3, 3), tuple(w), tuple(b))  # output width != 2
        with pytest.raises(ValueError):
            NetworkParams((2, 4, 2), tuple(w), tuple(b))  # shape mismatch

    def test_arrays_frozen(self):
        net = init_network(2, [4], seed=1)
        with pytest.raises(ValueError):
            net.weights[0][0, 0] = 1.0


class TestForward:
    def test_hand_computed_relu_net(self):
        # one hidden unit pair: h = relu(W1 x + b1), f = W2 h + b2
        W1 = np.array([[1.0], [-1.0]])
        b1 = np.array([0.0, 0.5])
        W2 = np.array([[1.0, 2.0], [3.0, -1.0]])
        b2 = np.array([0.1, -0.2])
        net = NetworkParams((1, 2, 2), (W1, W2), (b1, b2))
        # x = 2: h = (relu(2), relu(-1.5)) = (2, 0)
        assert forward(net, 2.0) == pytest.approx((2.1, 5.8))
        # x = -1: h = (relu(-1), relu(1.5)) = (0, 1.5)
        assert forward(net, -1.0) == pytest.approx((3.1, -1.7))

    def test_batch_matches_single(self):
        net = init_network(3, [8, 8], seed=2)
        X = np.random.default_rng(3).normal(size=(20, 3))
        batch = forward_batch(net, X)
        for i in range(20):
            assert forward(net, X[i]) == pytest.approx(tuple(batch[i]))

    def test_output_bound_clips(self):
        net = init_network(1, [64, 64], seed=4)
        X = np.random.default_rng(5).normal(size=(50, 1)) * 10
        out = forward_batch(net, X, bound=0.01)
        assert np.all(np.abs(out) <= 0.01)
        with pytest.raises(ValueError):
            forward_batch(net, X, bound=-1.0)

    def test_rejects_wrong_width(self):
        net = init_network(2, [4], seed=0)
        with pytest.raises(ValueError):
            forward_batch(net, np.zeros((5, 3)))


class TestBackward:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(10)
        net = init_network(2, [5, 4], seed=11)
        X = rng.normal(size=(7, 2))
        G = rng.normal(size=(7, 2))

        def scalar(params):
            return float(np.sum(forward_batch(params, X) * G)) / X.shape[0]

        grads = backward(net, X, G)
        h = 1e-6

        def perturbed(li, idx, delta):
            ws = [w.copy() for w in net.weights]
            ws[li][idx] += delta
            return NetworkParams(net.widths, tuple(ws), net.biases)

        for li in range(len(net.weights)):
            W = net.weights[li]
            for idx in [(0, 0), (W.shape[0] - 1, W.shape[1] - 1)]:
                fd = (scalar(perturbed(li, idx, h))
                      - scalar(perturbed(li, idx, -h))) / (2 * h)
                assert grads.weights[li][idx] == pytest.approx(fd, abs=1e-6)

    def test_mean_convention_duplicating_batch(self):
        rng = np.random.default_rng(12)
        net = init_network(2, [6], seed=13)
        X = rng.normal(size=(5, 2))
        G = rng.normal(size=(5, 2))
        g1 = backward(net, X, G)
        g2 = backward(net, np.vstack([X, X]), np.vstack([G, G]))
        for a, b in zip(g1.weights, g2.weights):
            assert np.allclose(a, b)

    def test_relu_subgradient_zero_at_kink(self):
        # input 0 puts the hidden preactivation exactly at the kink, so no
        # gradient flows back through it
        W1 = np.array([[1.0]])
        b1 = np.array([0.0])
        W2 = np.array([[1.0], [1.0]])
        b2 = np.array([0.0, 0.0])
        net = NetworkParams((1, 1, 2), (W1, W2), (b1, b2))
        grads = backward(net, np.array([[0.0]]), np.array([[1.0, 1.0]]))
        assert grads.weights[0][0, 0] == 0.0
        assert grads.biases[0][0] == 0.0
        # the output biases still see the full signal
        assert grads.biases[1].tolist() == [1.0, 1.0]

    def test_rejects_bad_grad_shape(self):
        net = init_network(2, [4], seed=0)
        with pytest.raises(ValueError):
            backward(net, np.zeros((5, 2)), np.zeros((4, 2)))


class TestAdam:
    def test_first_step_hand_value(self):
        net = init_network(1, [2], seed=20)
        state = init_adam_state(net, lr=0.01, eps=1e-8)
        g = Gradients(tuple(np.ones_like(W) for W in net.weights),
                      tuple(np.full_like(b, -2.0) for b in net.biases))
        new, _ = adam_step(net, g, state)
        # bias-corrected first step is lr * g / (|g| + eps) elementwise
        for W0, W1 in zip(net.weights, new.weights):
            assert np.allclose(W1, W0 - 0.01 * 1.0 / (1.0 + 1e-8))
        for b0, b1 in zip(net.biases, new.biases):
            assert np.allclose(b1, b0 + 0.01 * 2.0 / (2.0 + 1e-8))

    def test_functional_no_mutation(self):
        net = init_network(2, [3], seed=21)
        before = [W.copy() for W in net.weights]
        state = init_adam_state(net)
        g = Gradients(tuple(np.ones_like(W) for W in net.weights),
                      tuple(np.ones_like(b) for b in net.biases))
        adam_step(net, g, state)
        for W, W0 in zip(net.weights, before):
            assert np.array_equal(W, W0)
        assert state.t == 0

    def test_rejects_nonfinite_grads(self):
        net = init_network(1, [2], seed=22)
        state = init_adam_state(net)
        bad = Gradients(tuple(np.full_like(W, np.nan) for W in net.weights),
                        tuple(np.zeros_like(b) for b in net.biases))
        with pytest.raises(ValueError):
            adam_step(net, bad, state)

    def test_moments_accumulate(self):
        net = init_network(1, [2], seed=23)
        state = init_adam_state(net, lr=0.1)
        g = Gradients(tuple(np.ones_like(W) for W in net.weights),
                      tuple(np.ones_like(b) for b in net.biases))
        _, s1 = adam_step(net, g, state)
        _, s2 = adam_step(net, g, s1)
        assert s2.t == 2
        assert np.allclose(s2.m_weights[0],
                           0.9 * s1.m_weights[0] + 0.1 * 1.0)


class TestSerialization:
    def test_json_round_trip_exact(self):
        net = init_network(3, [7, 5], seed=30, metadata={"note": "x"})
        back = network_from_json(network_to_json(net))
        assert back.widths == net.widths
        for a, b in zip(net.weights, back.weights):
            assert np.array_equal(a, b)
        for a, b in zip(net.biases, back.biases):
            assert np.array_equal(a, b)
        assert back.metadata == {"note": "x"}

    def test_file_round_trip(self, tmp_path):
        net = init_network(2, [4, 4], seed=31)
        path = str(tmp_path / "net.json")
        save_network(net, path)
        back = load_network(path)
        X = np.random.default_rng(32).normal(size=(10, 2))
        assert np.array_equal(forward_batch(net, X), forward_batch(back, X))

    def test_rejects_wrong_format_and_version(self):
        net = init_network(1, [2], seed=33)
        obj = network_to_json(net)
        bad = dict(obj, format="something-else")
        with pytest.raises(ValueError):
            network_from_json(bad)
        bad = dict(obj, version=99)
        with pytest.raises(ValueError):
            network_from_json(bad)
