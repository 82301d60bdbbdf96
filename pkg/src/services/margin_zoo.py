"""
Margin Loss Family
Target logits, margin forward pass, softmax cross-entropy and the combined
margin loss with analytic gradients, plus intra / inter / angular-triplet
penalties and binary decision boundaries.
"""

import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import NDArray

from src.core.exceptions import LabelOutOfRange, NonFiniteInput, ThetaOutOfRange
from src.domain.models import (
    CentreMatrix,
    EmbeddingBatch,
    Labels,
    LogitBlock,
    LogitStage,
    LossOutput,
    MarginSpec,
    PenaltyOutput,
    TripletOutput,
    UnitVector,
)
from src.services.hypersphere import (
    normalize_columns_backward,
    normalize_columns_with_norms,
    normalize_rows_backward,
    normalize_rows_with_norms,
)
from src.utils.rng import SeedLike, make_rng

SIN_FLOOR = 1e-7
BISECTION_TOL = 1e-12
DEFAULT_CURVE_GRID_DEG = np.arange(20.0, 101.0, 1.0)


def _theta_from_cos(cosines: NDArray[np.float64]) -> Tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.bool_]]:
    """arccos with a hard clamp; returns (theta, sin(theta) floored, clamp-active mask)"""
    clamped = (cosines > 1.0) | (cosines < -1.0)
    theta = np.arccos(np.clip(cosines, -1.0, 1.0))
    return theta, np.maximum(np.sin(theta), SIN_FLOOR), clamped


def _acos_grad(cosines: NDArray[np.float64]) -> NDArray[np.float64]:
    """d arccos(c) / dc with the sin floor, zero where the clamp is active"""
    _, sin_t, clamped = _theta_from_cos(cosines)
    grad = -1.0 / sin_t
    grad[clamped] = 0.0
    return grad


def target_logit(theta, spec: MarginSpec):
    """
    Margin-penalised target logit cos(m1*theta + m2) - m3

    Past the branch point m1*theta + m2 > pi the curve continues as the unit-slope
    line in cos(theta) that meets the main branch there, which keeps it continuous
    and strictly decreasing on [0, pi].

    Args:
        theta: Angle(s) in radians within [0, pi]
        spec: Margin hyper-parameters

    Returns:
        Target logit(s), same shape as theta
    """
    theta_arr = np.asarray(theta, dtype=np.float64)
    if np.any(theta_arr < 0.0) or np.any(theta_arr > math.pi) or np.any(np.isnan(theta_arr)):
        raise ThetaOutOfRange(f"theta must lie in [0, pi], got {theta}")
    shifted = spec.m1 * theta_arr + spec.m2
    main = np.cos(shifted) - spec.m3
    fallback = np.cos(theta_arr) - spec.fallback_offset - spec.m3
    value = np.where(shifted <= math.pi, main, fallback)
    return float(value) if value.ndim == 0 else value


def target_logit_curve(spec: MarginSpec, grid: Optional[Sequence[float]] = None) -> List[Tuple[float, float]]:
    """
    Target logit sampled over an angle grid

    Args:
        spec: Margin hyper-parameters
        grid: Angles in radians; defaults to 20..100 degrees in 1 degree steps

    Returns:
        (degrees, logit) pairs
    """
    radians = np.deg2rad(DEFAULT_CURVE_GRID_DEG) if grid is None else np.asarray(grid, dtype=np.float64)
    values = np.atleast_1d(target_logit(radians, spec))
    return [(float(np.rad2deg(t)), float(v)) for t, v in zip(radians, values)]


def margin_terms(cos_gt: NDArray[np.float64], spec: MarginSpec) -> Tuple[NDArray[np.float64], NDArray[np.float64]]:
    """
    Target logit and its derivative with respect to cos(theta) for ground-truth cosines

    Args:
        cos_gt: Cosines of the ground-truth columns
        spec: Margin hyper-parameters

    Returns:
        (psi, dpsi / dcos)
    """
    cos_gt = np.asarray(cos_gt, dtype=np.float64)
    if spec.m1 == 1.0 and spec.m2 == 0.0:
        # no angular term: skip the arccos round trip
        return cos_gt - spec.m3, np.ones_like(cos_gt)

    theta, sin_t, clamped = _theta_from_cos(cos_gt)
    shifted = spec.m1 * theta + spec.m2
    main = shifted <= math.pi
    psi = np.where(main, np.cos(shifted) - spec.m3,
                   np.clip(cos_gt, -1.0, 1.0) - spec.fallback_offset - spec.m3)
    dpsi = np.where(main, spec.m1 * np.sin(shifted) / sin_t, 1.0)
    dpsi[clamped] = 0.0
    return psi, dpsi


def check_labels(labels, n_rows: int, n_classes: int) -> Labels:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (n_rows,):
        raise LabelOutOfRange(f"Expected {n_rows} labels, got shape {labels.shape}")
    if n_rows and (labels.min() < 0 or labels.max() >= n_classes):
        raise LabelOutOfRange(f"Labels must lie in [0, {n_classes}), got range "
                              f"[{labels.min()}, {labels.max()}]")
    return labels


def margin_forward(cosines: LogitBlock, labels, spec: MarginSpec) -> LogitBlock:
    """
    Replace each ground-truth cosine by its target logit and scale by s

    Args:
        cosines: Pre-scale N x n cosine block
        labels: Ground-truth class per row
        spec: Margin hyper-parameters

    Returns:
        Post-scale score block
    """
    values = cosines.values
    labels = check_labels(labels, values.shape[0], values.shape[1])
    rows = np.arange(values.shape[0])
    out = values.copy()
    if not spec.is_identity:
        out[rows, labels] = margin_terms(values[rows, labels], spec)[0]
    return LogitBlock(out * spec.s, LogitStage.POST_SCALE)


def softmax_xent(scores: LogitBlock, labels) -> Tuple[float, NDArray[np.float64]]:
    """
    Mean softmax cross-entropy with the max-subtraction trick

    Args:
        scores: Post-scale N x n scores
        labels: Ground-truth class per row

    Returns:
        (loss, gradient of the loss with respect to the scores)
    """
    values = scores.values
    if not np.all(np.isfinite(values)):
        raise NonFiniteInput("Scores contain NaN or infinite entries")
    n_rows = values.shape[0]
    labels = check_labels(labels, n_rows, values.shape[1])
    rows = np.arange(n_rows)

    shifted = values - values.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    sum_exp = exp.sum(axis=1)
    per_sample = np.log(sum_exp) - shifted[rows, labels]
    grad = exp / sum_exp[:, None]
    grad[rows, labels] -= 1.0
    return float(np.mean(per_sample)), grad / n_rows


def _margin_head_backward(grad_scores: NDArray[np.float64], dpsi: NDArray[np.float64],
                          labels: Labels, spec: MarginSpec) -> NDArray[np.float64]:
    """Gradient with respect to the pre-scale cosines"""
    grad_cos = grad_scores * spec.s
    rows = np.arange(grad_cos.shape[0])
    grad_cos[rows, labels] *= dpsi
    return grad_cos


def combined_loss_normalized(unit_features: EmbeddingBatch, unit_centres: CentreMatrix, labels,
                             spec: MarginSpec) -> Tuple[float, NDArray[np.float64], NDArray[np.float64]]:
    """
    Combined margin loss on already-normalized inputs

    Returns:
        (loss, gradient on unit features, gradient on unit centres)
    """
    cosines = unit_features @ unit_centres
    labels = check_labels(labels, cosines.shape[0], cosines.shape[1])
    rows = np.arange(cosines.shape[0])
    _, dpsi = margin_terms(cosines[rows, labels], spec)
    scores = margin_forward(LogitBlock(cosines), labels, spec)
    loss, grad_scores = softmax_xent(scores, labels)
    grad_cos = _margin_head_backward(grad_scores, dpsi, labels, spec)
    return loss, grad_cos @ unit_centres.T, unit_features.T @ grad_cos


def combined_loss(features, centres, labels, spec: MarginSpec) -> LossOutput:
    """
    Combined margin softmax loss on raw features and raw centres

    Normalizes both, computes cosines, applies the margin, and returns the mean
    cross-entropy with gradients chained back through both l2 normalizations.

    Args:
        features: Raw N x d embeddings
        centres: Raw d x n centre matrix
        labels: Ground-truth class per row
        spec: Margin hyper-parameters

    Returns:
        LossOutput with gradients on the raw entries
    """
    unit_x, x_norms = normalize_rows_with_norms(features)
    unit_w, w_norms = normalize_columns_with_norms(centres)
    loss, grad_ux, grad_uw = combined_loss_normalized(unit_x, unit_w, labels, spec)
    return LossOutput(
        loss=loss,
        grad_features=normalize_rows_backward(unit_x, x_norms, grad_ux),
        grad_centres=normalize_columns_backward(unit_w, w_norms, grad_uw),
    )


def unnormalized_softmax_loss(features, centres, labels) -> LossOutput:
    """
    Plain softmax loss on raw features and raw weights, bias fixed at zero

    Args:
        features: Raw N x d embeddings
        centres: Raw d x n weight matrix
        labels: Ground-truth class per row

    Returns:
        LossOutput with gradients on the raw entries
    """
    features = np.asarray(features, dtype=np.float64)
    centres = np.asarray(centres, dtype=np.float64)
    loss, grad_scores = softmax_xent(LogitBlock(features @ centres, LogitStage.POST_SCALE), labels)
    return LossOutput(loss=loss, grad_features=grad_scores @ centres.T, grad_centres=features.T @ grad_scores)


def intra_penalty(features: EmbeddingBatch, centres: CentreMatrix, labels) -> PenaltyOutput:
    """
    Mean ground-truth angle divided by pi

    Args:
        features: Unit N x d embeddings
        centres: Unit d x n centres
        labels: Ground-truth class per row

    Returns:
        PenaltyOutput with gradients on both inputs
    """
    n_rows = features.shape[0]
    labels = check_labels(labels, n_rows, centres.shape[1])
    gt_centres = centres[:, labels].T
    cos_gt = np.sum(features * gt_centres, axis=1)
    theta, _, _ = _theta_from_cos(cos_gt)
    coef = 1.0 / (math.pi * n_rows)
    dtheta = _acos_grad(cos_gt) * coef

    grad_features = dtheta[:, None] * gt_centres
    grad_centres = np.zeros_like(centres)
    np.add.at(grad_centres.T, labels, dtheta[:, None] * features)
    return PenaltyOutput(float(theta.sum() * coef), grad_features, grad_centres)


def inter_penalty(centres: CentreMatrix, labels) -> PenaltyOutput:
    """
    Negative mean angle between each sample's centre and every other centre, over pi

    Args:
        centres: Unit d x n centres
        labels: Batch class ids

    Returns:
        PenaltyOutput with a gradient on the centres only
    """
    n_classes = centres.shape[1]
    labels = np.asarray(labels, dtype=np.int64)
    n_rows = labels.shape[0]
    labels = check_labels(labels, n_rows, n_classes)
    counts = np.bincount(labels, minlength=n_classes).astype(np.float64)

    gram = centres.T @ centres
    off_diag = ~np.eye(n_classes, dtype=bool)
    theta = np.arccos(np.clip(gram, -1.0, 1.0))
    coef = -1.0 / (math.pi * n_rows * (n_classes - 1))
    value = coef * float(np.sum(counts[:, None] * theta * off_diag))

    weights = counts[:, None] * _acos_grad(gram) * off_diag
    grad_centres = coef * (centres @ (weights + weights.T))
    return PenaltyOutput(value, None, grad_centres)


def angular_triplet(anchor: UnitVector, positive: UnitVector, negative: UnitVector, m: float) -> TripletOutput:
    """
    Hinge max(0, theta_pos + m - theta_neg) on unit vectors

    Args:
        anchor: Unit anchor embedding
        positive: Unit embedding of the same identity
        negative: Unit embedding of another identity
        m: Angular margin in radians

    Returns:
        TripletOutput; gradients are zero when the hinge is not active
    """
    cos_p = np.atleast_1d(np.dot(anchor, positive))
    cos_n = np.atleast_1d(np.dot(anchor, negative))
    theta_p = float(_theta_from_cos(cos_p)[0][0])
    theta_n = float(_theta_from_cos(cos_n)[0][0])
    value = theta_p + m - theta_n
    if value <= 0.0:
        zero = np.zeros_like(anchor, dtype=np.float64)
        return TripletOutput(0.0, zero, zero.copy(), zero.copy())
    dp = float(_acos_grad(cos_p)[0])
    dn = float(_acos_grad(cos_n)[0])
    return TripletOutput(
        value=value,
        grad_anchor=dp * positive - dn * negative,
        grad_positive=dp * anchor,
        grad_negative=-dn * anchor,
    )


def mine_triplets(labels, seed: SeedLike) -> NDArray[np.int64]:
    """
    One random positive and one random negative per anchor that has both

    Args:
        labels: Class id per row
        seed: Generator or seed

    Returns:
        T x 3 array of (anchor, positive, negative) row indices
    """
    rng = make_rng(seed)
    labels = np.asarray(labels, dtype=np.int64)
    triplets = []
    for anchor, label in enumerate(labels):
        same = np.flatnonzero(labels == label)
        same = same[same != anchor]
        other = np.flatnonzero(labels != label)
        if same.size == 0 or other.size == 0:
            continue
        triplets.append((anchor, int(rng.choice(same)), int(rng.choice(other))))
    return np.asarray(triplets, dtype=np.int64).reshape(-1, 3)


def batch_angular_triplet(features: EmbeddingBatch, triplets: NDArray[np.int64], m: float) -> PenaltyOutput:
    """
    Mean angular triplet hinge over mined triplets

    Args:
        features: Unit N x d embeddings
        triplets: T x 3 (anchor, positive, negative) indices
        m: Angular margin in radians

    Returns:
        PenaltyOutput with a gradient on the features
    """
    grad = np.zeros_like(features)
    if len(triplets) == 0:
        return PenaltyOutput(0.0, grad, None)
    total = 0.0
    for a, p, n in triplets:
        out = angular_triplet(features[a], features[p], features[n], m)
        total += out.value
        grad[a] += out.grad_anchor
        grad[p] += out.grad_positive
        grad[n] += out.grad_negative
    count = len(triplets)
    return PenaltyOutput(total / count, grad / count, None)


def decision_boundary(spec: MarginSpec, theta2: float) -> Optional[float]:
    """
    Binary decision boundary: the class-1 angle where target_logit(theta1) = cos(theta2)

    Args:
        spec: Margin hyper-parameters
        theta2: Angle to the competing class centre, radians in [0, pi]

    Returns:
        theta1 in radians, or None when no angle reaches cos(theta2)
    """
    if not 0.0 <= theta2 <= math.pi:
        raise ThetaOutOfRange(f"theta2 must lie in [0, pi], got {theta2}")
    goal = math.cos(theta2)
    if goal > target_logit(0.0, spec):
        return None
    if spec.m3 == 0.0 and theta2 >= spec.m2:
        # on the main branch cos(m1*theta1 + m2) = cos(theta2) inverts exactly
        theta1 = (theta2 - spec.m2) / spec.m1
        if theta1 <= min(spec.branch_point, math.pi):
            return theta1
    lo, hi = 0.0, math.pi
    # target_logit is decreasing, so f(lo) >= 0 >= f(hi)
    while hi - lo > BISECTION_TOL:
        mid = 0.5 * (lo + hi)
        if target_logit(mid, spec) - goal > 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
