"""
Angle Statistics
Post-hoc diagnostics on trained embeddings: centre alignment, pair-angle
histograms and threshold-sweep verification accuracy.
"""

from typing import Optional, Tuple

import numpy as np
from numpy.typing import NDArray

from src.core.exceptions import EmptyClass, EmptyPairSet, NoPositivePairs, ZeroVector
from src.core.logger import logger
from src.domain.models import AngleReport, CentreMatrix, EmbeddingBatch, PairHistogram, PairSet
from src.services.hypersphere import MIN_NORM, nearest_angles, normalize_columns, normalize_rows
from src.utils.rng import SeedLike, make_rng

NEGATIVES_PER_POSITIVE = 5
DEFAULT_BINS = 180
_SAMPLE_CHUNK = 4096


def _row_angles_deg(a: NDArray[np.float64], b: NDArray[np.float64]) -> NDArray[np.float64]:
    return np.degrees(np.arccos(np.clip(np.sum(a * b, axis=1), -1.0, 1.0)))


def class_centres(embeddings: EmbeddingBatch, labels, n_classes: Optional[int] = None) -> CentreMatrix:
    """
    Empirical class centres: normalized mean of each class's normalized embeddings

    Args:
        embeddings: Raw or unit N x d embeddings
        labels: Class id per row
        n_classes: Number of classes; defaults to max(label) + 1

    Returns:
        d x n matrix of unit columns

    Raises:
        EmptyClass: If a class in range has no samples
        ZeroVector: If a class mean cancels to zero
    """
    unit = normalize_rows(embeddings)
    labels = np.asarray(labels, dtype=np.int64)
    n_classes = int(labels.max()) + 1 if n_classes is None else n_classes
    counts = np.bincount(labels, minlength=n_classes)
    if np.any(counts == 0):
        raise EmptyClass(f"Classes {np.flatnonzero(counts == 0).tolist()} have no samples")

    sums = np.zeros((n_classes, unit.shape[1]))
    np.add.at(sums, labels, unit)
    norms = np.linalg.norm(sums, axis=1)
    if np.any(norms < MIN_NORM):
        raise ZeroVector(f"Mean direction of classes {np.flatnonzero(norms < MIN_NORM).tolist()} cancels to zero")
    return (sums / norms[:, None]).T


def angle_report(embeddings: EmbeddingBatch, labels,
                 learned_centres: Optional[CentreMatrix] = None) -> AngleReport:
    """
    Alignment and separation statistics in degrees

    Args:
        embeddings: N x d embeddings
        labels: Class id per row
        learned_centres: Trained d x n centre matrix, or None for centre-free models

    Returns:
        AngleReport; w_ec and w_inter are None when learned_centres is None
    """
    n_classes = None if learned_centres is None else learned_centres.shape[1]
    labels = np.asarray(labels, dtype=np.int64)
    empirical = class_centres(embeddings, labels, n_classes)
    unit = normalize_rows(embeddings)

    intra = float(np.mean(_row_angles_deg(unit, empirical[:, labels].T)))
    inter = float(np.mean(np.degrees(nearest_angles(empirical))))

    w_ec = w_inter = None
    if learned_centres is not None:
        learned = normalize_columns(learned_centres)
        w_ec = float(np.mean(_row_angles_deg(learned.T, empirical.T)))
        w_inter = float(np.mean(np.degrees(nearest_angles(learned))))
    return AngleReport(w_ec=w_ec, w_inter=w_inter, intra=intra, inter=inter)


def _positive_pairs(labels: NDArray[np.int64]) -> NDArray[np.int64]:
    blocks = []
    for label in np.unique(labels):
        rows = np.flatnonzero(labels == label)
        i, j = np.triu_indices(rows.size, k=1)
        blocks.append(np.stack([rows[i], rows[j]], axis=1))
    return np.concatenate(blocks).astype(np.int64) if blocks else np.zeros((0, 2), dtype=np.int64)


def _all_negative_pairs(labels: NDArray[np.int64]) -> NDArray[np.int64]:
    i, j = np.triu_indices(labels.size, k=1)
    keep = labels[i] != labels[j]
    return np.stack([i[keep], j[keep]], axis=1).astype(np.int64)


def _sample_negative_pairs(labels: NDArray[np.int64], count: int, rng: np.random.Generator) -> NDArray[np.int64]:
    """Uniform distinct inter-class pairs by block rejection, in first-draw order"""
    n = labels.size
    keys = np.zeros(0, dtype=np.int64)
    while keys.size < count:
        draw = max(2 * (count - keys.size), _SAMPLE_CHUNK)
        first = rng.integers(0, n, size=draw)
        second = rng.integers(0, n, size=draw)
        inter = labels[first] != labels[second]
        low = np.minimum(first, second)[inter]
        high = np.maximum(first, second)[inter]
        merged = np.concatenate([keys, low * n + high])
        _, first_seen = np.unique(merged, return_index=True)
        keys = merged[np.sort(first_seen)]
    keys = keys[:count]
    return np.stack([keys // n, keys % n], axis=1).astype(np.int64)


def pair_histogram(embeddings: EmbeddingBatch, labels, seed: SeedLike, n_neg: Optional[int] = None,
                   bins: int = DEFAULT_BINS) -> PairHistogram:
    """
    Fixed-width degree histograms of all positive pairs and sampled negative pairs

    Args:
        embeddings: N x d embeddings
        labels: Class id per row
        seed: Generator or seed for negative sampling
        n_neg: Negative pairs to sample; defaults to min(all, 5 x positives)
        bins: Number of equal bins over [0, 180] degrees

    Returns:
        PairHistogram holding both count vectors and the underlying pairs

    Raises:
        NoPositivePairs: If no class has two samples
    """
    labels = np.asarray(labels, dtype=np.int64)
    unit = normalize_rows(embeddings)
    positives = _positive_pairs(labels)
    if len(positives) == 0:
        raise NoPositivePairs("No class has at least two samples")

    total_pairs = labels.size * (labels.size - 1) // 2
    available = total_pairs - len(positives)
    wanted = min(available, NEGATIVES_PER_POSITIVE * len(positives)) if n_neg is None else min(n_neg, available)
    rng = make_rng(seed)
    if wanted >= available:
        negatives = _all_negative_pairs(labels)
    elif 2 * wanted >= available:
        everything = _all_negative_pairs(labels)
        negatives = everything[np.sort(rng.choice(available, size=wanted, replace=False))]
    else:
        negatives = _sample_negative_pairs(labels, wanted, rng)

    pos_angles = _row_angles_deg(unit[positives[:, 0]], unit[positives[:, 1]])
    neg_angles = (_row_angles_deg(unit[negatives[:, 0]], unit[negatives[:, 1]])
                  if len(negatives) else np.zeros(0))
    edges = np.linspace(0.0, 180.0, bins + 1)
    pos_counts, _ = np.histogram(pos_angles, bins=edges)
    neg_counts, _ = np.histogram(neg_angles, bins=edges)
    logger.info(f"Pair histogram: {len(positives)} positive and {len(negatives)} negative pairs")
    return PairHistogram(
        bin_edges_deg=edges,
        positive_counts=pos_counts.astype(np.int64),
        negative_counts=neg_counts.astype(np.int64),
        pairs=PairSet(positives, negatives, pos_angles, neg_angles),
    )


def overlap_mass(histogram: PairHistogram) -> float:
    """Shared probability mass of the normalized positive and negative histograms"""
    pos = histogram.positive_counts / max(histogram.positive_counts.sum(), 1)
    neg = histogram.negative_counts / max(histogram.negative_counts.sum(), 1)
    return float(np.minimum(pos, neg).sum())


def verification_accuracy(pairs: PairSet) -> Tuple[float, float]:
    """
    Best single-threshold verification accuracy; a pair is 'same' when its angle is below the threshold

    Args:
        pairs: Positive and negative pair angles in degrees

    Returns:
        (accuracy fraction, threshold in degrees); ties go to the smallest threshold

    Raises:
        EmptyPairSet: If either side has no pairs
    """
    pos = np.sort(np.asarray(pairs.positive_angles_deg, dtype=np.float64))
    neg = np.sort(np.asarray(pairs.negative_angles_deg, dtype=np.float64))
    if pos.size == 0 or neg.size == 0:
        raise EmptyPairSet("Verification needs at least one positive and one negative pair")

    values = np.unique(np.concatenate([pos, neg]))
    thresholds = np.concatenate([[values[0]], 0.5 * (values[:-1] + values[1:]), [values[-1] + 1.0]])
    pos_below = np.searchsorted(pos, thresholds, side="left")
    neg_above = neg.size - np.searchsorted(neg, thresholds, side="left")
    accuracy = (pos_below + neg_above) / (pos.size + neg.size)
    best = int(np.argmax(accuracy))
    return float(accuracy[best]), float(thresholds[best])
