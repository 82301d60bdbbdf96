"""
Training Service
Runs the toy training loop over every supported supervision and builds the
class-spread report for trained 2-D embeddings.
"""

import math
from itertools import combinations
from typing import Dict, List, Optional, Tuple

import numpy as np
from numpy.typing import NDArray

from src.core.exceptions import DivergenceDetected, NonFiniteInput
from src.core.logger import logger
from src.domain.models import (
    CentreMatrix,
    ClassSpread,
    EmbeddingBatch,
    SpreadReport,
    LossKind,
    ThetaSnapshot,
    ToyNet,
    TrainConfig,
    TrainResult,
)
from src.services.anglestats import class_centres
from src.services.autonet import backward, forward, init_net, sgd_step
from src.services.hypersphere import (
    normalize_columns,
    normalize_columns_backward,
    normalize_columns_with_norms,
    normalize_rows,
    normalize_rows_backward,
    normalize_rows_with_norms,
)
from src.services.margin_zoo import (
    batch_angular_triplet,
    combined_loss_normalized,
    inter_penalty,
    intra_penalty,
    mine_triplets,
    unnormalized_softmax_loss,
)
from src.utils.rng import spawn_rngs


class TrainingService:
    """Mini-batch momentum SGD over a ToyNet and its raw centre matrix"""

    def __init__(self, config: TrainConfig):
        """
        Initialize training service

        Args:
            config: Optimizer, schedule and loss settings
        """
        self.config = config
        self._init_rng, self._batch_rng, self._mining_rng = spawn_rngs(config.seed, 3)
        logger.info(f"Initialized TrainingService: loss={config.loss_kind.value}, "
                    f"margin={config.margin.name}, iters={config.total_iters}")

    def init_centres(self, d_emb: int, n_classes: int) -> CentreMatrix:
        """Gaussian entries, then unit columns"""
        return normalize_columns(self._init_rng.standard_normal((d_emb, n_classes)))

    def _loss_and_grads(self, embeddings: EmbeddingBatch, centres: CentreMatrix,
                        labels: NDArray[np.int64]) -> Tuple[float, EmbeddingBatch, Optional[CentreMatrix]]:
        """Batch loss with gradients on the raw embeddings and the raw centres"""
        config = self.config
        kind = config.loss_kind

        if kind is LossKind.SOFTMAX_UNNORMALIZED:
            out = unnormalized_softmax_loss(embeddings, centres, labels)
            return out.loss, out.grad_features, out.grad_centres

        unit_x, x_norms = normalize_rows_with_norms(embeddings)
        if kind is LossKind.TRIPLET_ONLY:
            triplets = mine_triplets(labels, self._mining_rng)
            out = batch_angular_triplet(unit_x, triplets, config.triplet_margin)
            return out.value, normalize_rows_backward(unit_x, x_norms, out.grad_features), None

        unit_w, w_norms = normalize_columns_with_norms(centres)
        loss, grad_ux, grad_uw = combined_loss_normalized(unit_x, unit_w, labels, config.margin)
        weight = config.penalty_weight
        for penalty in kind.penalties:
            if penalty == "intra":
                out = intra_penalty(unit_x, unit_w, labels)
                grad_ux = grad_ux + weight * out.grad_features
                grad_uw = grad_uw + weight * out.grad_centres
            elif penalty == "inter":
                out = inter_penalty(unit_w, labels)
                grad_uw = grad_uw + weight * out.grad_centres
            else:
                out = batch_angular_triplet(unit_x, mine_triplets(labels, self._mining_rng),
                                            config.triplet_margin)
                grad_ux = grad_ux + weight * out.grad_features
            loss += weight * out.value
        return (loss,
                normalize_rows_backward(unit_x, x_norms, grad_ux),
                normalize_columns_backward(unit_w, w_norms, grad_uw))

    def _snapshot(self, iteration: int, net: ToyNet, centres: CentreMatrix,
                  inputs: NDArray[np.float64], labels: NDArray[np.int64]) -> ThetaSnapshot:
        """Histogram of ground-truth angles over the full training data"""
        embeddings = forward(net, inputs)
        unit_x = normalize_rows(embeddings)
        if self.config.loss_kind.trains_centres:
            reference = normalize_columns(centres)
        else:
            reference = class_centres(embeddings, labels, centres.shape[1])
        cos_gt = np.sum(unit_x * reference[:, labels].T, axis=1)
        theta_deg = np.degrees(np.arccos(np.clip(cos_gt, -1.0, 1.0)))
        edges = np.linspace(0.0, 180.0, self.config.snapshot_bins + 1)
        counts, _ = np.histogram(theta_deg, bins=edges)
        return ThetaSnapshot(iteration=iteration, bin_edges_deg=edges, counts=counts.astype(np.int64))

    def _batches(self, n_rows: int):
        """Endless stream of index batches, reshuffled every epoch"""
        size = min(self.config.batch_size, n_rows)
        while True:
            order = self._batch_rng.permutation(n_rows)
            for start in range(0, n_rows - size + 1, size):
                yield order[start:start + size]

    def train(self, inputs, labels, net: Optional[ToyNet] = None,
              n_classes: Optional[int] = None) -> TrainResult:
        """
        Train the net and the raw centre matrix

        Args:
            inputs: N x d_in training data
            labels: Class id per row
            net: Starting network; a He-initialised one is built when None
            n_classes: Number of centre columns; defaults to max(label) + 1

        Returns:
            TrainResult with the loss trace and angle snapshots at start, midpoint and end

        Raises:
            DivergenceDetected: If the batch loss becomes NaN or infinite
        """
        config = self.config
        inputs = np.asarray(inputs, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64)
        n_classes = int(labels.max()) + 1 if n_classes is None else n_classes
        if net is None:
            net = init_net(inputs.shape[1], config.hidden, config.embedding_dim, self._init_rng)
        centres = self.init_centres(net.dims[2], n_classes)

        params = net.parameters()
        net_state: Dict[str, NDArray[np.float64]] = {}
        centre_params = {"centres": centres}
        centre_state: Dict[str, NDArray[np.float64]] = {}

        midpoint = config.total_iters // 2
        snapshots: List[ThetaSnapshot] = []
        loss_trace = np.empty(config.total_iters)
        log_every = max(1, config.total_iters // 10)
        batches = self._batches(labels.size)

        for iteration in range(config.total_iters):
            net = ToyNet.from_parameters(params)
            if iteration in (0, midpoint):
                snapshots.append(self._snapshot(iteration, net, centre_params["centres"], inputs, labels))

            rows = next(batches)
            x_batch, y_batch = inputs[rows], labels[rows]
            embeddings = forward(net, x_batch)
            try:
                loss, grad_emb, grad_centres = self._loss_and_grads(embeddings, centre_params["centres"], y_batch)
            except NonFiniteInput as e:
                logger.error(f"Non-finite scores at iteration {iteration}")
                raise DivergenceDetected(f"Scores became non-finite at iteration {iteration}") from e
            if not math.isfinite(loss):
                raise DivergenceDetected(f"Loss became {loss} at iteration {iteration}")
            loss_trace[iteration] = loss

            lr = config.lr_at(iteration)
            params, net_state = sgd_step(params, backward(net, x_batch, grad_emb), net_state,
                                         lr, config.momentum, config.weight_decay)
            if grad_centres is not None and config.loss_kind.trains_centres:
                centre_params, centre_state = sgd_step(
                    centre_params, {"centres": grad_centres}, centre_state,
                    lr * config.centre_lr_scale, config.momentum, config.weight_decay,
                )
            if iteration % log_every == 0:
                logger.info(f"iter {iteration}: loss={loss:.6f} lr={lr:g}")

        net = ToyNet.from_parameters(params)
        snapshots.append(self._snapshot(config.total_iters, net, centre_params["centres"], inputs, labels))
        logger.info(f"Training finished: loss {loss_trace[0]:.6f} -> {loss_trace[-1]:.6f}")
        return TrainResult(net=net, centres=centre_params["centres"], loss_trace=loss_trace,
                           theta_snapshots=snapshots)


def spread_report(net: ToyNet, inputs, labels) -> SpreadReport:
    """
    Per-class angular spread and pairwise centre separation of trained embeddings

    Args:
        net: Trained network
        inputs: N x d_in data
        labels: Class id per row

    Returns:
        SpreadReport whose gap is min separation - 2 x max 95th-percentile spread
    """
    labels = np.asarray(labels, dtype=np.int64)
    embeddings = forward(net, inputs)
    unit_x = normalize_rows(embeddings)
    centres = class_centres(embeddings, labels)

    classes = []
    for label in range(centres.shape[1]):
        rows = labels == label
        cosines = np.clip(unit_x[rows] @ centres[:, label], -1.0, 1.0)
        spread = float(np.percentile(np.degrees(np.arccos(cosines)), 95))
        classes.append(ClassSpread(label=label, mean_direction=centres[:, label], spread95_deg=spread))

    separations = {
        (i, j): float(np.degrees(np.arccos(np.clip(centres[:, i] @ centres[:, j], -1.0, 1.0))))
        for i, j in combinations(range(centres.shape[1]), 2)
    }
    gap = min(separations.values()) - 2.0 * max(c.spread95_deg for c in classes)
    return SpreadReport(classes=classes, pair_separations_deg=separations, gap_deg=gap)
