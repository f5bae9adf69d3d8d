"""MLP substrate: init bounds, forward closed forms, exact gradients, I/O."""

import numpy as np
import pytest

from resloco.net import (MlpParams, backward, flatten_grads, flatten_params,
                         forward, forward_batch, init_mlp, load_params,
                         params_from_dict, params_to_dict, save_params,
                         unflatten_params)
from resloco.oracles import oracle_fd_gradient


class TestInit:
    def test_xavier_bound_per_layer(self):
        p = init_mlp([32, 64, 64, 8], final_layer_gain=0.01, seed=0)
        for i, W in enumerate(p.weights):
            gain = 0.01 if i == len(p.weights) - 1 else 1.0
            bound = gain * np.sqrt(6.0 / (W.shape[1] + W.shape[0]))
            assert np.abs(W).max() <= bound

    def test_final_gain_bound_example(self):
        # gain 0.01, fan 64/64: |w| <= 0.01 * sqrt(6/128) ~= 2.17e-3
        p = init_mlp([64, 64], final_layer_gain=0.01, seed=1)
        assert np.abs(p.weights[-1]).max() <= 0.01 * np.sqrt(6.0 / 128.0)

    def test_zero_input_gives_zero_output(self):
        p = init_mlp([10, 20, 5], seed=2)
        np.testing.assert_array_equal(forward(p, np.zeros(10)), np.zeros(5))

    def test_deterministic(self):
        a = init_mlp([8, 16, 4], seed=3)
        b = init_mlp([8, 16, 4], seed=3)
        for Wa, Wb in zip(a.weights, b.weights):
            np.testing.assert_array_equal(Wa, Wb)

    def test_biases_zero_and_activations(self):
        p = init_mlp([8, 16, 4], seed=0)
        for b in p.biases:
            np.testing.assert_array_equal(b, 0.0)
        assert p.activations == ["tanh", "identity"]

    def test_log_std_init(self):
        p = init_mlp([8, 4], seed=0, log_std_init=np.log(0.2))
        np.testing.assert_allclose(p.log_std, np.log(0.2))
        assert init_mlp([8, 4], seed=0).log_std is None

    def test_invalid_sizes_rejected(self):
        with pytest.raises(ValueError):
            init_mlp([8], seed=0)
        with pytest.raises(ValueError):
            init_mlp([8, 0, 4], seed=0)
        with pytest.raises(ValueError):
            init_mlp([8, 4], final_layer_gain=0.0, seed=0)


class TestForward:
    def test_identity_layer(self):
        p = MlpParams([np.eye(3)], [np.zeros(3)], ["identity"])
        x = np.array([0.3, -0.7, 1.1])
        np.testing.assert_array_equal(forward(p, x), x)

    def test_tanh_closed_form(self):
        # 1-1-1 net, unit weights, zero biases, x = 0.5 -> tanh(0.5)
        p = MlpParams([np.array([[1.0]]), np.array([[1.0]])],
                      [np.zeros(1), np.zeros(1)], ["tanh", "identity"])
        assert forward(p, [0.5])[0] == pytest.approx(np.tanh(0.5))

    def test_finite_output(self, rng):
        p = init_mlp([16, 32, 4], seed=5)
        for _ in range(20):
            y = forward(p, rng.uniform(-100, 100, 16))
            assert np.all(np.isfinite(y))

    def test_dimension_mismatch_rejected(self):
        p = init_mlp([8, 4], seed=0)
        with pytest.raises(ValueError, match="expected input shape"):
            forward(p, np.zeros(5))

    def test_batch_matches_single(self, rng):
        p = init_mlp([12, 24, 3], seed=6)
        X = rng.standard_normal((7, 12))
        Y, _ = forward_batch(p, X)
        for i in range(7):
            # BLAS may reassociate sums across batch shapes; agreement is
            # to rounding, not bitwise
            np.testing.assert_allclose(Y[i], forward(p, X[i]), atol=1e-14)


class TestBackward:
    def test_linear_layer_gradient(self):
        # loss = w @ x -> dloss/dw = x exactly
        x = np.array([0.3, -1.2, 2.0])
        p = MlpParams([np.array([[0.5, 0.1, -0.4]])], [np.zeros(1)],
                      ["identity"])
        _, tape = forward_batch(p, x[None])
        grads, _ = backward(tape, np.ones((1, 1)))
        np.testing.assert_array_equal(grads.weights[0], x[None])
        np.testing.assert_array_equal(grads.biases[0], [1.0])

    def test_constant_loss_zero_gradient(self):
        p = init_mlp([6, 12, 3], seed=7)
        _, tape = forward_batch(p, np.random.default_rng(0).standard_normal((4, 6)))
        grads, _ = backward(tape, np.zeros((4, 3)))
        for W in grads.weights:
            np.testing.assert_array_equal(W, 0.0)

    def test_matches_finite_differences(self, rng):
        """Random 3-layer net, loss = mean square of output."""
        p = init_mlp([10, 32, 32, 4], seed=8)
        X = rng.standard_normal((6, 10))

        def loss_of(flat):
            q = unflatten_params(p, flat)
            y, _ = forward_batch(q, X)
            return float(np.mean(y ** 2))

        y, tape = forward_batch(p, X)
        grads, _ = backward(tape, 2.0 * y / y.size)
        flat_g = flatten_grads(grads)
        fd = oracle_fd_gradient(loss_of, flatten_params(p), eps=1e-5)
        denom = np.maximum(np.abs(fd), 1e-8)
        assert np.max(np.abs(flat_g - fd) / denom) < 1e-4

    def test_input_gradient(self, rng):
        p = init_mlp([5, 16, 2], seed=9)
        x = rng.standard_normal(5)

        def loss_of_x(xv):
            return float(np.sum(forward(p, xv)))

        _, tape = forward_batch(p, x[None])
        _, d_in = backward(tape, np.ones((1, 2)))
        fd = oracle_fd_gradient(loss_of_x, x)
        np.testing.assert_allclose(d_in[0], fd, rtol=1e-6, atol=1e-9)

    def test_tape_single_use(self):
        p = init_mlp([4, 2], seed=0)
        _, tape = forward_batch(p, np.zeros((1, 4)))
        backward(tape, np.zeros((1, 2)))
        with pytest.raises(ValueError, match="consumed"):
            backward(tape, np.zeros((1, 2)))

    def test_gradient_shape_mismatch_rejected(self):
        p = init_mlp([4, 2], seed=0)
        _, tape = forward_batch(p, np.zeros((3, 4)))
        with pytest.raises(ValueError, match="shape"):
            backward(tape, np.zeros((2, 2)))


class TestFlatViews:
    def test_round_trip(self, rng):
        p = init_mlp([7, 13, 3], seed=10, log_std_init=-1.0)
        flat = flatten_params(p)
        q = unflatten_params(p, flat + 0.5)
        np.testing.assert_array_equal(flatten_params(q), flat + 0.5)

    def test_length_mismatch_rejected(self):
        p = init_mlp([4, 2], seed=0)
        with pytest.raises(ValueError, match="length"):
            unflatten_params(p, np.zeros(3))


class TestCheckpoints:
    def test_round_trip_bitwise(self, tmp_path):
        p = init_mlp([10, 16, 4], seed=11, log_std_init=np.log(0.05))
        path = tmp_path / "params.json"
        save_params(p, path)
        q = load_params(path)
        for Wa, Wb in zip(p.weights, q.weights):
            np.testing.assert_array_equal(Wa, Wb)
        np.testing.assert_array_equal(p.log_std, q.log_std)

    def test_wrong_architecture_names_both(self, tmp_path):
        p = init_mlp([10, 16, 4], seed=0)
        path = tmp_path / "params.json"
        save_params(p, path)
        with pytest.raises(ValueError) as e:
            load_params(path, expect_sizes=[12, 16, 4])
        assert "10" in str(e.value) and "12" in str(e.value)

    def test_corrupt_numeric_field_rejected(self, tmp_path):
        p = init_mlp([4, 2], seed=0)
        d = params_to_dict(p)
        d["weights"][0][0][0] = "oops"
        with pytest.raises(ValueError):
            params_from_dict(d)

    def test_unknown_field_rejected(self):
        p = init_mlp([4, 2], seed=0)
        d = params_to_dict(p)
        d["extra"] = 1
        with pytest.raises(ValueError, match="unknown checkpoint fields"):
            params_from_dict(d)

    def test_sizes_field_checked(self):
        p = init_mlp([4, 2], seed=0)
        d = params_to_dict(p)
        d["sizes"] = [4, 3]
        with pytest.raises(ValueError, match="sizes"):
            params_from_dict(d)

    def test_truncated_file_rejected(self, tmp_path):
        p = init_mlp([4, 2], seed=0)
        path = tmp_path / "params.json"
        save_params(p, path)
        path.write_text(path.read_text()[:40])
        with pytest.raises(ValueError, match="offset"):
            load_params(path)


class TestValidation:
    def test_mismatched_chain_rejected(self):
        with pytest.raises(ValueError, match="chain"):
            MlpParams([np.zeros((3, 4)), np.zeros((2, 5))],
                      [np.zeros(3), np.zeros(2)], ["tanh", "identity"])

    def test_non_finite_rejected(self):
        W = np.zeros((2, 2))
        W[0, 0] = np.inf
        with pytest.raises(ValueError, match="non-finite"):
            MlpParams([W], [np.zeros(2)], ["identity"])

    def test_bad_log_std_shape_rejected(self):
        with pytest.raises(ValueError, match="log_std"):
            MlpParams([np.zeros((2, 3))], [np.zeros(2)], ["identity"],
                      log_std=np.zeros(3))
