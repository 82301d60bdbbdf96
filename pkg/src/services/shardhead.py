"""
Sharded Classification Head
Model-parallel combined margin loss over a class-sharded centre matrix, with the
per-step memory / communication cost model and an analytic throughput estimate.
"""

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import NDArray

from src.core.exceptions import InvalidShardCount, NonFiniteInput, ShardError
from src.core.logger import logger
from src.domain.models import CostModel, MarginSpec, ShardPlan, ThroughputEstimate
from src.infrastructure.devices.simulated_device import SimulatedDevice, SimulatedDeviceGroup
from src.services.hypersphere import (
    normalize_columns_backward,
    normalize_columns_with_norms,
    normalize_rows_backward,
    normalize_rows_with_norms,
)
from src.services.margin_zoo import check_labels, margin_terms

DEFAULT_BYTES_PER_SCALAR = 4
# exp, normalise, margin and the score gradient touch every score entry a few times
ELEMENTWISE_FLOPS_PER_SCORE = 10


def make_shard_plan(n: int, k: int) -> ShardPlan:
    """
    Balanced contiguous partition of n classes over k devices

    Args:
        n: Number of classes
        k: Number of devices, 1 <= k <= n

    Returns:
        ShardPlan; the first n % k shards hold one extra class

    Raises:
        InvalidShardCount: If k is outside [1, n]
    """
    if not 1 <= k <= n:
        raise InvalidShardCount(f"Shard count must lie in [1, {n}], got {k}")
    base, extra = divmod(n, k)
    ranges = []
    start = 0
    for rank in range(k):
        stop = start + base + (1 if rank < extra else 0)
        ranges.append((start, stop))
        start = stop
    return ShardPlan(n=n, k=k, ranges=tuple(ranges))


@dataclass
class ShardedForward:
    """Forward result plus the device state the backward pass reuses"""
    loss: float
    score_blocks: List[NDArray[np.float64]]
    group: SimulatedDeviceGroup
    spec: MarginSpec
    unit_features: NDArray[np.float64]
    feature_norms: NDArray[np.float64]
    labels: NDArray[np.int64]


def sharded_forward(features, centres, labels, spec: MarginSpec, plan: ShardPlan,
                    workers: int = 1, schedule: Optional[Sequence[int]] = None) -> ShardedForward:
    """
    Combined margin loss computed shard by shard

    Every device receives the gathered unit features, scores its own classes,
    applies the margin to the samples whose ground-truth class it owns, and joins
    a two-pass softmax reduction: global row max, then global sum of exponentials.

    Args:
        features: Raw N x d embeddings
        centres: Raw d x n centre matrix
        labels: Ground-truth class per row
        spec: Margin hyper-parameters
        plan: Class partition
        workers: Thread count for the simulated devices
        schedule: Device execution order; results never depend on it

    Returns:
        ShardedForward holding the mean loss and per-shard post-scale scores

    Raises:
        LabelOutOfRange: If a label does not index a centre column
    """
    centres = np.asarray(centres, dtype=np.float64)
    if centres.shape[1] != plan.n:
        raise ShardError(f"Plan covers {plan.n} classes but the centre matrix has {centres.shape[1]}")
    unit_x, x_norms = normalize_rows_with_norms(features)
    n_rows = unit_x.shape[0]
    labels = check_labels(labels, n_rows, plan.n)

    group = SimulatedDeviceGroup(plan, workers=workers, schedule=schedule)
    group.place("centres", [centres[:, start:stop] for start, stop in plan.ranges])
    group.place("labels", [labels] * plan.k)
    group.broadcast("features", unit_x)

    def score_step(device: SimulatedDevice) -> NDArray[np.float64]:
        start, stop = device.class_range
        unit_w, w_norms = normalize_columns_with_norms(device["centres"])
        cosines = device["features"] @ unit_w
        device_labels = device["labels"]
        owned = np.flatnonzero((device_labels >= start) & (device_labels < stop))
        local = device_labels[owned] - start
        dpsi = np.ones(owned.size)
        values = cosines.copy()
        if not spec.is_identity:
            psi, dpsi = margin_terms(cosines[owned, local], spec)
            values[owned, local] = psi
        scores = values * spec.s
        for name, value in (("unit_w", unit_w), ("w_norms", w_norms), ("owned", owned),
                            ("local", local), ("dpsi", dpsi), ("scores", scores)):
            device.receive(name, value)
        return scores.max(axis=1)

    global_max = group.all_reduce("softmax_max", group.run(score_step), "max")

    def exp_step(device: SimulatedDevice) -> NDArray[np.float64]:
        shifted = device["scores"] - global_max[:, None]
        exp = np.exp(shifted)
        device.receive("shifted", shifted)
        device.receive("exp", exp)
        return exp.sum(axis=1)

    global_sum = group.all_reduce("softmax_sum", group.run(exp_step), "sum")

    def loss_step(device: SimulatedDevice) -> NDArray[np.float64]:
        owned, local = device["owned"], device["local"]
        per_sample = np.zeros(n_rows)
        per_sample[owned] = np.log(global_sum[owned]) - device["shifted"][owned, local]
        return per_sample

    per_sample = group.all_reduce("loss", group.run(loss_step), "sum")
    score_blocks = [device["scores"] for device in group.devices]
    if not all(np.all(np.isfinite(block)) for block in score_blocks):
        raise NonFiniteInput("Scores contain NaN or infinite entries")
    return ShardedForward(
        loss=float(np.mean(per_sample)),
        score_blocks=score_blocks,
        group=group,
        spec=spec,
        unit_features=unit_x,
        feature_norms=x_norms,
        labels=labels,
    )


def sharded_backward(state: ShardedForward) -> Tuple[NDArray[np.float64], List[NDArray[np.float64]]]:
    """
    Gradients of the sharded loss

    Each device forms its score-gradient block, takes dW = x^T dscore on its own
    columns, and contributes dscore W^T to a rank-ordered sum for dx.

    Args:
        state: Result of sharded_forward

    Returns:
        (gradient on the raw features, per-shard gradient blocks on the raw centres)
    """
    group = state.group
    spec = state.spec
    n_rows = state.unit_features.shape[0]
    global_sum = group.devices[0]["softmax_sum"]

    def grad_step(device: SimulatedDevice) -> Tuple[NDArray[np.float64], NDArray[np.float64]]:
        owned, local = device["owned"], device["local"]
        grad = device["exp"] / global_sum[:, None]
        grad[owned, local] -= 1.0
        grad_cos = (grad / n_rows) * spec.s
        grad_cos[owned, local] *= device["dpsi"]
        unit_w = device["unit_w"]
        grad_centres = normalize_columns_backward(unit_w, device["w_norms"],
                                                  device["features"].T @ grad_cos)
        return grad_centres, grad_cos @ unit_w.T

    results = group.run(grad_step)
    grad_unit_x = group.all_reduce("dx", [dx for _, dx in results], "sum")
    grad_features = normalize_rows_backward(state.unit_features, state.feature_norms, grad_unit_x)
    return grad_features, [grad_w for grad_w, _ in results]


def cost_report(N: int, d: int, n: int, k: int, bytes_per_scalar: int = DEFAULT_BYTES_PER_SCALAR) -> CostModel:
    """
    Per-step memory and traffic of the sharded head

    Args:
        N: Batch size
        d: Embedding dimension
        n: Number of classes
        k: Number of devices
        bytes_per_scalar: 4 for float32

    Returns:
        CostModel with every item in bytes
    """
    if min(N, d, n, bytes_per_scalar) < 1:
        raise ShardError("cost_report arguments must be positive")
    if not 1 <= k <= n:
        raise InvalidShardCount(f"Shard count must lie in [1, {n}], got {k}")
    shard = math.ceil(n / k)
    return CostModel(
        bytes_per_scalar=bytes_per_scalar,
        feature_gather_bytes=N * d * bytes_per_scalar,
        per_device_w_bytes=d * shard * bytes_per_scalar,
        per_device_score_bytes=N * shard * bytes_per_scalar,
        softmax_reduction_bytes=2 * N * k * bytes_per_scalar,
        dx_reduction_bytes=N * d * k * bytes_per_scalar,
    )


def throughput_model(plan: ShardPlan, flop_rate: float, bandwidth: float, batch_size: int = 512,
                     dim: int = 512, bytes_per_scalar: int = DEFAULT_BYTES_PER_SCALAR) -> ThroughputEstimate:
    """
    Analytic samples per second of one training step of the head

    Compute covers the three shard-local products (scores, dW, dx) and the
    elementwise score work on the largest shard; communication is the itemised
    traffic of cost_report over the link bandwidth. The step takes the larger of the two.

    Args:
        plan: Class partition
        flop_rate: Floating point operations per second of one device
        bandwidth: Link bytes per second; math.inf removes the communication bound
        batch_size: Samples per step
        dim: Embedding dimension
        bytes_per_scalar: Storage width

    Returns:
        ThroughputEstimate
    """
    if not flop_rate > 0 or not bandwidth > 0:
        raise ShardError("flop_rate and bandwidth must be positive")
    shard = plan.max_shard
    flops = 3 * 2 * batch_size * dim * shard + ELEMENTWISE_FLOPS_PER_SCORE * batch_size * shard
    compute = flops / flop_rate
    cost = cost_report(batch_size, dim, plan.n, plan.k, bytes_per_scalar)
    comm = 0.0 if math.isinf(bandwidth) else cost.communicated_bytes / bandwidth
    step = max(compute, comm)
    logger.debug(f"Throughput k={plan.k} n={plan.n}: compute={compute:.3e}s comm={comm:.3e}s")
    return ThroughputEstimate(compute_seconds=compute, comm_seconds=comm,
                              samples_per_second=batch_size / step)
