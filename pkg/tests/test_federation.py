"""Reward accounting, aggregation weights, layer-wise aggregation, broadcast."""

import inspect

import numpy as np
import pytest

from fedmix import federation
from fedmix.federation import (
    AggregationPolicy,
    GlobalModel,
    RewardBuffer,
    RoundRecord,
    aggregate,
    aggregation_weights,
    apply_global,
    record_reward,
    should_aggregate,
)
from fedmix.nn_core import LayerSpec, ParameterSet, init_params


def stacked_params(layer_values):
    params = ParameterSet()
    for layer_id, value in enumerate(layer_values):
        params[layer_id, "weight"] = np.asarray(value, dtype=np.float64)
    return params


class TestRewardBuffer:
    def test_push_and_sum(self):
        buf = RewardBuffer(n_agents=1, capacity=4)
        record_reward(buf, 0, 1.0)
        assert buf.sum(0) == 1.0

    def test_fifo_eviction(self):
        buf = RewardBuffer(n_agents=1, capacity=2)
        for r in (1.0, 2.0, 3.0):
            record_reward(buf, 0, r)
        assert buf.contents(0) == [2.0, 3.0]
        assert buf.sum(0) == 5.0

    def test_zero_pushes_sum_to_zero(self):
        buf = RewardBuffer(n_agents=2, capacity=8)
        for _ in range(8):
            record_reward(buf, 1, 0.0)
        assert buf.sum(1) == 0.0
        assert buf.size(1) == 8

    def test_agents_are_independent(self):
        buf = RewardBuffer(n_agents=3, capacity=4)
        record_reward(buf, 0, 5.0)
        assert buf.sums().tolist() == [5.0, 0.0, 0.0]

    def test_length_never_exceeds_capacity(self):
        buf = RewardBuffer(n_agents=1, capacity=96)
        for i in range(300):
            record_reward(buf, 0, float(i))
        assert buf.size(0) == 96
        assert buf.sum(0) == sum(range(204, 300))


class TestAggregationWeights:
    def test_uniform_for_four_agents(self):
        assert np.array_equal(aggregation_weights("apps", [9, -3, 0, 7]),
                              [0.25, 0.25, 0.25, 0.25])

    def test_reward_proportional(self):
        w = aggregation_weights("rspps", [1.0, 3.0])
        assert np.allclose(w, [0.25, 0.75], atol=1e-15)

    def test_all_zero_rewards_fall_back_to_uniform(self):
        w = aggregation_weights("rspps", [0.0, 0.0, 0.0])
        assert np.allclose(w, [1 / 3] * 3, atol=1e-15)

    def test_negative_rewards_shift_then_normalize(self):
        w = aggregation_weights("rspps", [-1.0, 3.0], weight_floor=1e-6)
        assert w[0] == pytest.approx(2.5e-7, rel=1e-5)
        assert w[1] == pytest.approx(0.99999975, abs=1e-9)

    def test_simplex_property_all_modes(self):
        rng = np.random.default_rng(8)
        for _ in range(1000):
            n = int(rng.integers(1, 9))
            rewards = rng.standard_normal(n) * 10.0 ** float(rng.integers(-3, 4))
            for mode in ("none", "apps", "rspps", "pppps"):
                w = aggregation_weights(mode, rewards)
                assert w.min() >= 0.0
                assert abs(w.sum() - 1.0) <= 1e-12

    def test_equal_rewards_match_uniform_exactly(self):
        for value in (0.0, -2.5, 17.0):
            w = aggregation_weights("rspps", [value] * 4)
            assert np.abs(w - 0.25).max() <= 1e-12

    def test_shift_invariance_in_shift_regime(self):
        # whenever the shifted rule applies to both vectors, a constant offset
        # cannot change the weights
        rng = np.random.default_rng(9)
        for _ in range(200):
            n = int(rng.integers(2, 6))
            rewards = rng.standard_normal(n)
            rewards[int(rng.integers(n))] = -abs(rewards).max() - 1.0
            shift = float(rng.uniform(-0.5, 0.5))
            shifted = rewards + shift
            if shifted.min() >= 0.0:
                continue
            a = aggregation_weights("rspps", rewards)
            b = aggregation_weights("rspps", shifted)
            assert np.abs(a - b).max() <= 1e-12

    def test_pppps_uses_reward_weights(self):
        assert np.allclose(aggregation_weights("pppps", [1.0, 3.0]), [0.25, 0.75])

    def test_empty_is_error(self):
        with pytest.raises(ValueError):
            aggregation_weights("apps", [])

    def test_unknown_mode_is_error(self):
        with pytest.raises(ValueError):
            aggregation_weights("banana", [1.0])


class TestAggregate:
    def test_identical_params_are_a_fixed_point(self):
        arch = [LayerSpec(0, "dense", 3, 4, "relu"), LayerSpec(1, "recurrent", 4, 4),
                LayerSpec(2, "dense", 4, 2)]
        base = init_params(arch, np.random.default_rng(10))
        for n in (2, 3, 4):
            copies = [base.copy() for _ in range(n)]
            result = aggregate(copies, aggregation_weights("apps", np.zeros(n)))
            for layer_id, name, tensor in result.params.items():
                assert np.abs(tensor - base[layer_id, name]).max() <= 1e-12

    def test_fixed_point_is_exact_for_power_of_two_weights(self):
        base = stacked_params([np.array([[0.1, -7.3]])])
        result = aggregate([base.copy(), base.copy()], [0.5, 0.5])
        assert np.array_equal(result.params[0, "weight"], base[0, "weight"])

    def test_scalar_average(self):
        a = stacked_params([[2.0]])
        b = stacked_params([[4.0]])
        result = aggregate([a, b], [0.5, 0.5])
        assert np.array_equal(result.params[0, "weight"], [3.0])

    def test_personalized_cutoff_keeps_only_upper_layers(self):
        agents = [stacked_params([[float(v + k)] for k in range(5)]) for v in (1, 2)]
        result = aggregate(agents, [0.5, 0.5], personalized_layers=4)
        assert result.aggregated_layer_ids == (4,)
        assert (0, "weight") not in result.params
        assert (3, "weight") not in result.params
        assert np.array_equal(result.params[4, "weight"], [5.5])

    def test_weighted_average(self):
        a = stacked_params([[0.0]])
        b = stacked_params([[1.0]])
        result = aggregate([a, b], [0.25, 0.75])
        assert np.allclose(result.params[0, "weight"], [0.75], atol=1e-15)

    def test_shape_mismatch_names_layer(self):
        a = stacked_params([np.zeros((2, 2)), np.zeros(3)])
        b = stacked_params([np.zeros((2, 2)), np.zeros(4)])
        with pytest.raises(ValueError, match="layer 1"):
            aggregate([a, b], [0.5, 0.5])

    def test_empty_list_is_error(self):
        with pytest.raises(ValueError):
            aggregate([], [])


class TestApplyGlobal:
    def test_full_replacement_at_tau_one(self):
        local = stacked_params([[1.0], [2.0]])
        gm = GlobalModel(params=stacked_params([[5.0], [6.0]]))
        out = apply_global(local, gm, blend_tau=1.0)
        assert np.array_equal(out[0, "weight"], [5.0])
        assert np.array_equal(out[1, "weight"], [6.0])

    def test_tiny_tau_limit_leaves_local(self):
        local = stacked_params([[1.0]])
        gm = GlobalModel(params=stacked_params([[2.0]]))
        out = apply_global(local, gm, blend_tau=1e-12)
        assert abs(out[0, "weight"][0] - 1.0) < 1e-11

    def test_default_soft_update_value(self):
        local = stacked_params([[0.0]])
        gm = GlobalModel(params=stacked_params([[1.0]]))
        out = apply_global(local, gm, blend_tau=0.05)
        assert out[0, "weight"][0] == pytest.approx(0.05, abs=1e-15)

    def test_absent_layers_bit_unchanged(self):
        local = stacked_params([np.array([[0.123456789]]), np.array([[9.0]])])
        gm = GlobalModel(params=stacked_params([]))
        gm.params[1, "weight"] = np.array([[1.0]])
        out = apply_global(local, gm, blend_tau=0.5)
        assert np.array_equal(out[0, "weight"], local[0, "weight"])
        assert np.array_equal(out[1, "weight"], [[5.0]])

    def test_invalid_tau(self):
        local = stacked_params([[1.0]])
        gm = GlobalModel(params=stacked_params([[1.0]]))
        for tau in (0.0, -0.1, 1.5):
            with pytest.raises(ValueError):
                apply_global(local, gm, tau)

    def test_shape_mismatch_is_error(self):
        local = stacked_params([np.zeros(2)])
        gm = GlobalModel(params=stacked_params([np.zeros(3)]))
        with pytest.raises(ValueError):
            apply_global(local, gm, 0.5)


class TestShouldAggregate:
    def test_table_interval(self):
        assert should_aggregate(300, 300) is True

    def test_step_zero_skipped(self):
        assert should_aggregate(0, 300) is False

    def test_off_interval(self):
        assert should_aggregate(301, 300) is False

    def test_every_multiple(self):
        hits = [s for s in range(1, 1001) if should_aggregate(s, 300)]
        assert hits == [300, 600, 900]


class TestAggregationPolicy:
    def test_pppps_requires_personalized_layers(self):
        with pytest.raises(ValueError):
            AggregationPolicy(mode="pppps", personalized_layers=0)

    def test_defaults_are_valid(self):
        policy = AggregationPolicy()
        assert policy.mode == "none"
        assert policy.interval == 300
        assert policy.blend_tau == 0.05

    def test_invalid_interval_and_tau(self):
        with pytest.raises(ValueError):
            AggregationPolicy(interval=0)
        with pytest.raises(ValueError):
            AggregationPolicy(blend_tau=0.0)


class TestEqualRewardEquivalence:
    def test_rspps_equals_apps_on_equal_rewards(self):
        arch = [LayerSpec(0, "dense", 2, 3), LayerSpec(1, "dense", 3, 2)]
        rng = np.random.default_rng(11)
        agents = [init_params(arch, rng) for _ in range(3)]
        rewards = [4.2] * 3
        uniform = aggregate(agents, aggregation_weights("apps", rewards))
        scaled = aggregate(agents, aggregation_weights("rspps", rewards))
        for layer_id, name, tensor in uniform.params.items():
            assert np.abs(tensor - scaled.params[layer_id, name]).max() <= 1e-12


class TestPersonalizationIsolation:
    def test_lower_layers_bit_identical_through_a_round(self):
        arch = [LayerSpec(0, "dense", 2, 3), LayerSpec(1, "recurrent", 3, 3),
                LayerSpec(2, "dense", 3, 2)]
        rng = np.random.default_rng(12)
        agents = [init_params(arch, rng) for _ in range(4)]
        before = [p.copy() for p in agents]
        weights = aggregation_weights("pppps", [1.0, 2.0, 3.0, 4.0])
        gm = aggregate(agents, weights, personalized_layers=2)
        blended = [apply_global(p, gm, blend_tau=0.05) for p in agents]
        for prev, now in zip(before, blended):
            for layer_id in (0, 1):
                for name in prev.tensor_names(layer_id):
                    assert np.array_equal(prev[layer_id, name], now[layer_id, name])
            # the aggregated head does move (zero biases stay zero, weights blend)
            assert not np.array_equal(prev[2, "weight"], now[2, "weight"])


class TestPrivacySurface:
    FORBIDDEN = {"obs", "observation", "observations", "state", "states",
                 "action", "actions", "trajectory", "trajectories", "episode",
                 "episodes"}

    def test_no_operation_admits_experience_data(self):
        public = [record_reward, aggregation_weights, aggregate, apply_global,
                  should_aggregate]
        for fn in public:
            names = set(inspect.signature(fn).parameters)
            assert not names & self.FORBIDDEN, f"{fn.__name__} leaks experience"

    def test_module_exports_only_parameter_level_types(self):
        for name in dir(federation):
            if name.startswith("_"):
                continue
            assert name.lower() not in self.FORBIDDEN


class TestRoundRecord:
    def test_audit_line_format(self):
        record = RoundRecord(round_index=3, train_step=900, mode="rspps",
                             weights=np.array([0.25, 0.75]),
                             distances=np.array([1.5, 0.5]))
        line = record.format_line()
        assert line == ("round=3 train_step=900 mode=rspps "
                        "weights=0.250000000000;0.750000000000 "
                        "dists=1.500000000000;0.500000000000")
