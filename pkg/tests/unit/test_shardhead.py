"""Tests for the class-sharded margin head, its cost model and throughput estimate."""

import math

import numpy as np
import pytest

from src.core.exceptions import InvalidShardCount, LabelOutOfRange, ShardError
from src.domain.models import CostModel, MarginSpec
from src.services.margin_zoo import combined_loss
from src.services.shardhead import (
    cost_report,
    make_shard_plan,
    sharded_backward,
    sharded_forward,
    throughput_model,
)
from src.utils.gradcheck import relative_error


@pytest.fixture
def instance():
    rng = np.random.default_rng(21)
    features = rng.standard_normal((8, 16)) * 3.0
    centres = rng.standard_normal((16, 40))
    labels = rng.integers(0, 40, size=8)
    return features, centres, labels


def _sharded(features, centres, labels, spec, k, **kwargs):
    state = sharded_forward(features, centres, labels, spec, make_shard_plan(centres.shape[1], k), **kwargs)
    grad_x, grad_blocks = sharded_backward(state)
    return state, grad_x, np.concatenate(grad_blocks, axis=1)


class TestShardPlan:

    def test_balanced_ranges(self):
        plan = make_shard_plan(10, 3)
        assert plan.ranges == ((0, 4), (4, 7), (7, 10))
        assert plan.sizes == [4, 3, 3]
        assert plan.max_shard == 4

    def test_one_class_per_device(self):
        assert make_shard_plan(4, 4).sizes == [1, 1, 1, 1]

    @pytest.mark.parametrize("k", [0, 11])
    def test_invalid_count(self, k):
        with pytest.raises(InvalidShardCount):
            make_shard_plan(10, k)


class TestShardedLoss:

    def test_single_device_is_bitwise_dense(self, instance, arcface):
        features, centres, labels = instance
        dense = combined_loss(features, centres, labels, arcface)
        state, grad_x, grad_w = _sharded(features, centres, labels, arcface, 1)
        assert state.loss == dense.loss
        np.testing.assert_array_equal(grad_x, dense.grad_features)
        np.testing.assert_array_equal(grad_w, dense.grad_centres)

    @pytest.mark.parametrize("k", [2, 3, 8])
    @pytest.mark.parametrize("name", ["arcface", "cosface", "sphereface", "cm2", "softmax"])
    def test_matches_dense(self, instance, k, name):
        features, centres, labels = instance
        spec = MarginSpec.preset(name)
        dense = combined_loss(features, centres, labels, spec)
        state, grad_x, grad_w = _sharded(features, centres, labels, spec, k)
        assert abs(state.loss - dense.loss) / abs(dense.loss) < 1e-10
        assert relative_error(grad_x, dense.grad_features) < 1e-10
        assert relative_error(grad_w, dense.grad_centres) < 1e-10

    def test_schedule_and_workers_do_not_change_results(self, instance, arcface):
        features, centres, labels = instance
        reference, grad_x, grad_w = _sharded(features, centres, labels, arcface, 3)
        shuffled, grad_x2, grad_w2 = _sharded(features, centres, labels, arcface, 3,
                                              workers=3, schedule=[2, 0, 1])
        assert shuffled.loss == reference.loss
        np.testing.assert_array_equal(grad_x2, grad_x)
        np.testing.assert_array_equal(grad_w2, grad_w)

    def test_score_blocks_cover_every_class(self, instance, arcface):
        features, centres, labels = instance
        state, _, _ = _sharded(features, centres, labels, arcface, 3)
        assert [block.shape[1] for block in state.score_blocks] == [14, 13, 13]

    @pytest.mark.parametrize("k", [1, 3, 8])
    def test_traffic_matches_cost_model(self, instance, arcface, k):
        features, centres, labels = instance
        state, _, _ = _sharded(features, centres, labels, arcface, k)
        traffic = state.group.traffic
        cost = cost_report(8, 16, 40, k, bytes_per_scalar=1)
        assert traffic.scalars("features") == cost.feature_gather_bytes
        assert traffic.scalars("softmax_max") + traffic.scalars("softmax_sum") == cost.softmax_reduction_bytes
        assert traffic.scalars("dx") == cost.dx_reduction_bytes

    def test_plan_must_match_centres(self, instance, arcface):
        features, centres, labels = instance
        with pytest.raises(ShardError):
            sharded_forward(features, centres, labels, arcface, make_shard_plan(39, 3))

    def test_label_out_of_range(self, instance, arcface):
        features, centres, _ = instance
        with pytest.raises(LabelOutOfRange):
            sharded_forward(features, centres, np.full(8, 40), arcface, make_shard_plan(40, 2))


class TestCostReport:

    def test_reference_shape(self):
        cost = cost_report(512, 512, 1_000_000, 8)
        assert CostModel.megabytes(cost.per_device_w_bytes) == pytest.approx(256.0)
        assert CostModel.megabytes(cost.per_device_score_bytes) == pytest.approx(256.0)
        assert CostModel.megabytes(cost.gather_only_bytes) == pytest.approx(1.048576)

    def test_items(self):
        cost = cost_report(4, 3, 10, 3, bytes_per_scalar=2)
        assert cost.feature_gather_bytes == 4 * 3 * 2
        assert cost.per_device_w_bytes == 3 * 4 * 2
        assert cost.per_device_score_bytes == 4 * 4 * 2
        assert cost.softmax_reduction_bytes == 2 * 4 * 3 * 2
        assert cost.dx_reduction_bytes == 4 * 3 * 3 * 2
        assert cost.communicated_bytes == 24 + 48 + 72

    def test_per_device_memory_shrinks_with_devices(self):
        sizes = [cost_report(512, 512, 1_000_000, k).per_device_w_bytes for k in (1, 2, 4, 8)]
        assert all(a > b for a, b in zip(sizes, sizes[1:]))

    def test_invalid(self):
        with pytest.raises(InvalidShardCount):
            cost_report(4, 3, 10, 11)
        with pytest.raises(ShardError):
            cost_report(0, 3, 10, 1)


class TestThroughputModel:

    def test_infinite_bandwidth_is_compute_bound(self):
        estimate = throughput_model(make_shard_plan(1000, 4), flop_rate=1e9, bandwidth=math.inf)
        assert estimate.comm_seconds == 0.0
        assert estimate.samples_per_second == pytest.approx(512 / estimate.compute_seconds)

    def test_more_devices_help_without_communication(self):
        rates = [throughput_model(make_shard_plan(1000, k), 1e9, math.inf).samples_per_second
                 for k in (1, 2, 4)]
        assert rates[0] < rates[1] < rates[2]

    def test_slow_link_is_communication_bound(self):
        estimate = throughput_model(make_shard_plan(1000, 4), flop_rate=1e15, bandwidth=1.0)
        assert estimate.comm_seconds > estimate.compute_seconds
        assert estimate.samples_per_second == pytest.approx(512 / estimate.comm_seconds)

    def test_invalid_rates(self):
        with pytest.raises(ShardError):
            throughput_model(make_shard_plan(10, 2), flop_rate=0.0, bandwidth=1.0)
