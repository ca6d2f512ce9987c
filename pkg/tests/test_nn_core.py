"""Core toolkit: forward passes, gradients, optimizer, init, serialization."""

import numpy as np
import pytest

from fedmix.nn_core import (
    LayerSpec,
    ParameterSet,
    adam_update,
    clip_global_norm,
    compute_gradients,
    dense_forward,
    dumps_params,
    global_norm,
    init_optimizer_state,
    init_params,
    loads_params,
    network_forward,
    orthogonal_init,
    recurrent_step,
    validate_arch,
    value_and_grads,
)
from fedmix.nn_core import autodiff as ad

from gradcheck import fd_max_relative_error


def dense_params(weight, bias):
    params = ParameterSet()
    params[0, "weight"] = np.asarray(weight, dtype=np.float64)
    params[0, "bias"] = np.asarray(bias, dtype=np.float64)
    return params


def gru_params(layer_id=0, in_dim=1, out_dim=1, **overrides):
    params = ParameterSet()
    for gate in ("update", "reset", "cand"):
        params[layer_id, f"w_{gate}"] = np.zeros((out_dim, in_dim))
        params[layer_id, f"u_{gate}"] = np.zeros((out_dim, out_dim))
        params[layer_id, f"b_{gate}"] = np.zeros(out_dim)
    for name, value in overrides.items():
        params[layer_id, name] = np.asarray(value, dtype=np.float64)
    return params


class TestDenseForward:
    def test_identity(self):
        layer = LayerSpec(0, "dense", 2, 2, "linear")
        y = dense_forward(np.array([1.0, -2.0]), layer, dense_params(np.eye(2), [0, 0]))
        assert np.array_equal(y, [1.0, -2.0])

    def test_direct_arithmetic(self):
        layer = LayerSpec(0, "dense", 2, 2, "linear")
        params = dense_params([[1, 2], [3, 4]], [0, 0])
        assert np.array_equal(dense_forward(np.array([1.0, 1.0]), layer, params), [3.0, 7.0])

    def test_relu_clamps(self):
        layer = LayerSpec(0, "dense", 1, 1, "relu")
        y = dense_forward(np.array([2.0]), layer, dense_params([[1.0]], [-5.0]))
        assert np.array_equal(y, [0.0])

    def test_dimension_mismatch_names_layer(self):
        layer = LayerSpec(3, "dense", 2, 2, "linear")
        params = ParameterSet()
        params[3, "weight"] = np.eye(2)
        params[3, "bias"] = np.zeros(2)
        with pytest.raises(ValueError, match="layer 3"):
            dense_forward(np.zeros(5), layer, params)

    def test_batched_matches_per_row(self):
        # same math, but batched matmul may round differently in the last bit
        rng = np.random.default_rng(0)
        layer = LayerSpec(0, "dense", 3, 4, "tanh")
        params = dense_params(rng.standard_normal((4, 3)), rng.standard_normal(4))
        xs = rng.standard_normal((6, 3))
        batched = dense_forward(xs, layer, params)
        rows = np.stack([dense_forward(x, layer, params) for x in xs])
        assert np.allclose(batched, rows, rtol=1e-14, atol=1e-15)


class TestRecurrentStep:
    def test_zero_fixed_point(self):
        layer = LayerSpec(0, "recurrent", 1, 1)
        h = recurrent_step(np.array([3.7]), np.array([0.0]), layer, gru_params())
        assert np.array_equal(h, [0.0])

    def test_gate_convention_halves_hidden(self):
        layer = LayerSpec(0, "recurrent", 1, 1)
        h = recurrent_step(np.array([0.0]), np.array([1.0]), layer, gru_params())
        assert np.allclose(h, [0.5], atol=1e-15)

    def test_hand_evaluated_gates(self):
        # z = r = 1/2, candidate = tanh(1), new hidden = tanh(1)/2
        layer = LayerSpec(0, "recurrent", 1, 1)
        params = gru_params(w_cand=[[1.0]])
        h = recurrent_step(np.array([1.0]), np.array([0.0]), layer, params)
        assert np.allclose(h, [0.5 * np.tanh(1.0)], atol=1e-15)

    def test_dimension_mismatch(self):
        layer = LayerSpec(1, "recurrent", 2, 2)
        with pytest.raises(ValueError, match="layer 1"):
            recurrent_step(np.zeros(3), np.zeros(2), layer, gru_params(1, 2, 2))


class TestNetworkForward:
    def arch_dense_only(self):
        return [LayerSpec(0, "dense", 2, 3, "relu"), LayerSpec(1, "dense", 3, 2, "linear")]

    def test_dense_only_equals_composition(self):
        rng = np.random.default_rng(1)
        arch = self.arch_dense_only()
        params = init_params(arch, rng)
        obs = [rng.standard_normal(2) for _ in range(4)]
        q_seq, _ = network_forward(obs, arch, params)
        for x, q in zip(obs, q_seq):
            expected = dense_forward(dense_forward(x, arch[0], params), arch[1], params)
            assert np.array_equal(q, expected)

    def test_all_zero_params_give_zero_q(self):
        arch = [LayerSpec(0, "dense", 2, 3, "relu"),
                LayerSpec(1, "recurrent", 3, 3),
                LayerSpec(2, "dense", 3, 2, "linear")]
        params = init_params(arch, np.random.default_rng(0)).zeros_like()
        q_seq, h = network_forward([np.ones(2)] * 3, arch, params)
        assert all(np.array_equal(q, np.zeros(2)) for q in q_seq)

    def test_two_step_sequence_matches_manual_chaining(self):
        layer = LayerSpec(0, "recurrent", 1, 1)
        params = gru_params(w_cand=[[1.0]], u_cand=[[0.5]], b_update=[0.3])
        obs = [np.array([1.0]), np.array([-0.5])]
        q_seq, h_final = network_forward(obs, [layer], params)
        h = np.zeros(1)
        expected = []
        for x in obs:
            h = recurrent_step(x, h, layer, params)
            expected.append(h)
        assert np.array_equal(q_seq[0], expected[0])
        assert np.array_equal(q_seq[1], expected[1])
        assert np.array_equal(h_final, expected[1])

    def test_empty_sequence_is_error(self):
        arch = self.arch_dense_only()
        with pytest.raises(ValueError, match="non-empty"):
            network_forward([], arch, init_params(arch, np.random.default_rng(0)))

    def test_forward_determinism_bit_identical(self):
        rng = np.random.default_rng(7)
        arch = [LayerSpec(0, "dense", 3, 4, "relu"),
                LayerSpec(1, "recurrent", 4, 4),
                LayerSpec(2, "dense", 4, 2, "linear")]
        params = init_params(arch, rng)
        obs = [rng.standard_normal(3) for _ in range(5)]
        first, h1 = network_forward(obs, arch, params)
        second, h2 = network_forward(obs, arch, params)
        assert all(np.array_equal(a, b) for a, b in zip(first, second))
        assert np.array_equal(h1, h2)


class TestValidateArch:
    def test_rejects_dim_chain_break(self):
        with pytest.raises(ValueError, match="does not match"):
            validate_arch([LayerSpec(0, "dense", 2, 3), LayerSpec(1, "dense", 4, 2)])

    def test_rejects_two_recurrent_layers(self):
        with pytest.raises(ValueError, match="recurrent"):
            validate_arch([LayerSpec(0, "recurrent", 2, 2),
                           LayerSpec(1, "recurrent", 2, 2)])


class TestComputeGradients:
    def test_hand_chain_rule(self):
        # loss = 0.5*(w*x - y)^2 with w=1, x=2, y=0 -> dL/dw = 4
        params = ParameterSet()
        params[0, "w"] = np.array([[1.0]])

        def loss(view):
            pred = ad.linear(np.array([2.0]), view[0, "w"])
            diff = ad.sub(pred, np.array([0.0]))
            return ad.mul(ad.sum_all(ad.mul(diff, diff)), 0.5)

        grads = compute_gradients(loss, params)
        assert np.allclose(grads[0, "w"], [[4.0]], atol=1e-15)

    def test_constant_loss_gives_zero_gradients(self):
        params = ParameterSet()
        params[0, "w"] = np.ones((2, 2))
        grads = compute_gradients(lambda view: np.asarray(3.5), params)
        assert np.array_equal(grads[0, "w"], np.zeros((2, 2)))

    def test_non_finite_loss_is_error(self):
        params = ParameterSet()
        params[0, "w"] = np.array([[1.0]])

        def loss(view):
            return ad.mul(ad.sum_all(view[0, "w"]), np.inf)

        with pytest.raises(FloatingPointError):
            compute_gradients(loss, params)

    def test_random_network_matches_finite_differences(self):
        # Gradient oracle on a random 3-layer net with < 200 parameters.
        rng = np.random.default_rng(11)
        arch = [LayerSpec(0, "dense", 3, 4, "relu"),
                LayerSpec(1, "recurrent", 4, 4),
                LayerSpec(2, "dense", 4, 2, "linear")]
        params = init_params(arch, rng)
        assert params.num_params() <= 200
        obs = [rng.standard_normal(3) for _ in range(3)]
        target = rng.standard_normal(2)

        def loss_value(groups):
            q_seq, _ = network_forward(obs, arch, groups["net"])
            value = 0.0
            for q in q_seq:
                diff = np.asarray(ad.value_of(q)) - target
                value += float(diff @ diff)
            return value

        def loss_node(views):
            q_seq, _ = network_forward(obs, arch, views["net"])
            total = None
            for q in q_seq:
                diff = ad.sub(q, target)
                term = ad.sum_all(ad.mul(diff, diff))
                total = term if total is None else ad.add(total, term)
            return total

        _, grads = value_and_grads(loss_node, {"net": params})
        err = fd_max_relative_error(loss_value, {"net": params}, grads)
        assert err < 1e-4


class TestAdam:
    def test_zero_gradient_leaves_params_and_advances_counter(self):
        params = ParameterSet()
        params[0, "w"] = np.array([1.0, -2.0])
        state = init_optimizer_state(params)
        new_params, new_state = adam_update(params, params.zeros_like(), state, 5e-4)
        assert np.array_equal(new_params[0, "w"], params[0, "w"])
        assert new_state.step == 1

    def test_first_step_magnitude_is_learning_rate(self):
        params = ParameterSet()
        params[0, "w"] = np.zeros(1)
        grads = ParameterSet()
        grads[0, "w"] = np.ones(1)
        new_params, _ = adam_update(params, grads, init_optimizer_state(params), 5e-4)
        assert abs(new_params[0, "w"][0] + 5e-4) < 1e-11

    def test_two_steps_accumulate_twice_learning_rate(self):
        params = ParameterSet()
        params[0, "w"] = np.zeros(1)
        grads = ParameterSet()
        grads[0, "w"] = np.ones(1)
        state = init_optimizer_state(params)
        for _ in range(2):
            params, state = adam_update(params, grads, state, 5e-4)
        assert abs(params[0, "w"][0] + 2 * 5e-4) < 1e-6

    def test_moment_shapes_mirror_params(self):
        arch = [LayerSpec(0, "dense", 2, 3), LayerSpec(1, "recurrent", 3, 3)]
        params = init_params(arch, np.random.default_rng(0))
        state = init_optimizer_state(params)
        assert state.m.keys() == params.keys()
        for layer_id, name, tensor in state.v.items():
            assert tensor.shape == np.asarray(params[layer_id, name]).shape

    def test_shape_mismatch_is_error(self):
        params = ParameterSet()
        params[0, "w"] = np.zeros(2)
        grads = ParameterSet()
        grads[0, "w"] = np.zeros(3)
        with pytest.raises(ValueError):
            adam_update(params, grads, init_optimizer_state(params), 1e-3)


class TestClipGlobalNorm:
    def grads_of(self, values):
        grads = ParameterSet()
        grads[0, "g"] = np.asarray(values, dtype=np.float64)
        return grads

    def test_below_threshold_unchanged(self):
        clipped = clip_global_norm(self.grads_of([3.0, 4.0]), 10.0)
        assert np.array_equal(clipped[0, "g"], [3.0, 4.0])

    def test_scaling(self):
        clipped = clip_global_norm(self.grads_of([3.0, 4.0]), 1.0)
        assert np.allclose(clipped[0, "g"], [0.6, 0.8], atol=1e-15)

    def test_zero_gradients_stay_zero(self):
        clipped = clip_global_norm(self.grads_of([0.0, 0.0]), 1.0)
        assert np.array_equal(clipped[0, "g"], [0.0, 0.0])

    def test_idempotence(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            grads = ParameterSet()
            grads[0, "a"] = rng.standard_normal((4, 4)) * rng.uniform(0.1, 50)
            grads[1, "b"] = rng.standard_normal(6) * rng.uniform(0.1, 50)
            once = clip_global_norm(grads, 1.0)
            twice = clip_global_norm(once, 1.0)
            for layer_id, name, tensor in once.items():
                assert np.array_equal(tensor, twice[layer_id, name])

    def test_invalid_max_norm(self):
        with pytest.raises(ValueError):
            clip_global_norm(self.grads_of([1.0]), 0.0)


class TestOrthogonalInit:
    def test_one_by_one_is_sign(self):
        m = orthogonal_init((1, 1), np.random.default_rng(2))
        assert m.shape == (1, 1) and abs(abs(m[0, 0]) - 1.0) < 1e-12

    def test_square_orthonormal(self):
        m = orthogonal_init((4, 4), np.random.default_rng(3))
        assert np.abs(m.T @ m - np.eye(4)).max() < 1e-10

    def test_same_seed_bit_identical(self):
        a = orthogonal_init((5, 3), np.random.default_rng(9))
        b = orthogonal_init((5, 3), np.random.default_rng(9))
        assert np.array_equal(a, b)

    @pytest.mark.parametrize("shape", [(2, 7), (7, 2), (16, 16), (64, 64), (64, 5)])
    def test_residual_bound_various_shapes(self, shape):
        m = orthogonal_init(shape, np.random.default_rng(sum(shape)))
        k = min(shape)
        gram = m @ m.T if shape[0] <= shape[1] else m.T @ m
        assert np.abs(gram - np.eye(k)).max() < 1e-10

    def test_non_2d_shape_is_error(self):
        with pytest.raises(ValueError):
            orthogonal_init((3,), np.random.default_rng(0))

    def test_init_params_biases_zero(self):
        arch = [LayerSpec(0, "dense", 3, 4), LayerSpec(1, "recurrent", 4, 4)]
        params = init_params(arch, np.random.default_rng(0))
        assert np.array_equal(params[0, "bias"], np.zeros(4))
        for gate in ("update", "reset", "cand"):
            assert np.array_equal(params[1, f"b_{gate}"], np.zeros(4))


class TestCheckpoint:
    def test_round_trip_exact(self):
        rng = np.random.default_rng(4)
        arch = [LayerSpec(0, "dense", 3, 5, "relu"), LayerSpec(1, "recurrent", 5, 5)]
        params = init_params(arch, rng)
        params[0, "bias"] = np.array([1e-300, -1e300, np.pi, -0.0, 7.0])
        restored = loads_params(dumps_params(params))
        assert restored == params

    def test_values_have_17_significant_digits(self):
        params = ParameterSet()
        params[0, "w"] = np.array([1.0 / 3.0])
        text = dumps_params(params)
        value_line = text.splitlines()[-1]
        mantissa = value_line.split("e")[0].replace("-", "").replace(".", "")
        assert len(mantissa) >= 17

    def test_bad_magic_rejected(self):
        with pytest.raises(ValueError, match="magic"):
            loads_params("something else\n")

    def test_wrong_value_count_rejected(self):
        params = ParameterSet()
        params[2, "w"] = np.arange(4.0).reshape(2, 2)
        text = dumps_params(params)
        lines = text.splitlines()
        lines[-1] = "1.0 2.0"
        with pytest.raises(ValueError, match="expected 4 values"):
            loads_params("\n".join(lines))


class TestAutodiffPieces:
    def test_gru_cell_matches_unfused_formula(self):
        rng = np.random.default_rng(6)
        hid, inp, batch = 3, 2, 4
        tensors = {
            "wz": rng.standard_normal((hid, inp)), "uz": rng.standard_normal((hid, hid)),
            "bz": rng.standard_normal(hid),
            "wr": rng.standard_normal((hid, inp)), "ur": rng.standard_normal((hid, hid)),
            "br": rng.standard_normal(hid),
            "wc": rng.standard_normal((hid, inp)), "uc": rng.standard_normal((hid, hid)),
            "bc": rng.standard_normal(hid),
        }
        x = rng.standard_normal((batch, inp))
        h = rng.standard_normal((batch, hid))
        out = ad.gru_cell(x, h, *(tensors[k] for k in
                                  ("wz", "uz", "bz", "wr", "ur", "br", "wc", "uc", "bc")))

        def sigmoid(v):
            return 1.0 / (1.0 + np.exp(-v))

        z = sigmoid(x @ tensors["wz"].T + h @ tensors["uz"].T + tensors["bz"])
        r = sigmoid(x @ tensors["wr"].T + h @ tensors["ur"].T + tensors["br"])
        c = np.tanh(x @ tensors["wc"].T + (r * h) @ tensors["uc"].T + tensors["bc"])
        assert np.allclose(out, (1 - z) * h + z * c, atol=1e-12)

    def test_backward_accumulates_over_reuse(self):
        w = ad.Node(np.array([2.0]))
        out = ad.add(ad.mul(w, w), ad.mul(w, np.array([3.0])))  # w^2 + 3w
        ad.backward(ad.sum_all(out))
        assert np.allclose(w.grad, [7.0], atol=1e-15)

    def test_backward_requires_scalar(self):
        w = ad.Node(np.ones(3))
        with pytest.raises(ValueError):
            ad.backward(ad.mul(w, 2.0))
