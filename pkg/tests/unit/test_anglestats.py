"""Tests for post-hoc angle statistics and verification accuracy."""

import numpy as np
import pytest

from src.core.exceptions import EmptyClass, EmptyPairSet, NoPositivePairs, ZeroVector
from src.domain.models import PairSet
from src.services.anglestats import (
    angle_report,
    class_centres,
    overlap_mass,
    pair_histogram,
    verification_accuracy,
)


@pytest.fixture
def two_clusters():
    embeddings = np.array([[1.0, 0.0], [2.0, 0.0], [0.0, 3.0], [0.0, 0.5]])
    labels = np.array([0, 0, 1, 1])
    return embeddings, labels


class TestClassCentres:

    def test_unit_mean_directions(self, two_clusters):
        centres = class_centres(*two_clusters)
        np.testing.assert_allclose(centres, np.eye(2), atol=1e-15)

    def test_ignores_raw_norms(self):
        embeddings = np.array([[10.0, 0.0], [0.0, 0.1]])
        centres = class_centres(embeddings, [0, 0])
        np.testing.assert_allclose(centres[:, 0], [np.sqrt(0.5), np.sqrt(0.5)])

    def test_empty_class(self, two_clusters):
        embeddings, labels = two_clusters
        with pytest.raises(EmptyClass):
            class_centres(embeddings, labels, n_classes=3)

    def test_cancelling_class(self):
        with pytest.raises(ZeroVector):
            class_centres(np.array([[1.0, 0.0], [-1.0, 0.0]]), [0, 0])


class TestAngleReport:

    def test_perfect_clusters(self, two_clusters):
        embeddings, labels = two_clusters
        report = angle_report(embeddings, labels, learned_centres=np.eye(2) * 3.0)
        assert report.intra == pytest.approx(0.0, abs=1e-6)
        assert report.inter == pytest.approx(90.0)
        assert report.w_ec == pytest.approx(0.0, abs=1e-6)
        assert report.w_inter == pytest.approx(90.0)

    def test_without_learned_centres(self, two_clusters):
        report = angle_report(*two_clusters)
        assert report.w_ec is None and report.w_inter is None

    def test_rotated_centres(self, two_clusters):
        embeddings, labels = two_clusters
        c, s = np.cos(np.radians(10.0)), np.sin(np.radians(10.0))
        rotated = np.array([[c, -s], [s, c]])
        report = angle_report(embeddings, labels, learned_centres=rotated)
        assert report.w_ec == pytest.approx(10.0)

    def test_values_within_range(self, rng):
        embeddings = rng.standard_normal((60, 5))
        labels = np.repeat(np.arange(6), 10)
        report = angle_report(embeddings, labels, learned_centres=rng.standard_normal((5, 6)))
        for value in (report.w_ec, report.w_inter, report.intra, report.inter):
            assert 0.0 <= value <= 180.0


class TestPairHistogram:

    def test_enumerates_all_negatives_when_few(self):
        embeddings = np.random.default_rng(0).standard_normal((5, 3))
        histogram = pair_histogram(embeddings, [0, 0, 0, 1, 1], seed=0)
        assert histogram.positive_counts.sum() == 4
        assert histogram.negative_counts.sum() == 6
        assert histogram.bin_edges_deg.shape == (181,)

    def test_samples_requested_negatives(self, rng):
        embeddings = rng.standard_normal((40, 4))
        labels = np.repeat(np.arange(4), 10)
        histogram = pair_histogram(embeddings, labels, n_neg=25, seed=3)
        negatives = histogram.pairs.negative_pairs
        assert len(negatives) == 25
        assert len({tuple(p) for p in negatives.tolist()}) == 25
        assert np.all(labels[negatives[:, 0]] != labels[negatives[:, 1]])

    def test_default_negative_count(self, rng):
        embeddings = rng.standard_normal((20, 4))
        labels = np.repeat(np.arange(5), 4)
        histogram = pair_histogram(embeddings, labels, seed=3)
        assert histogram.positive_counts.sum() == 30
        assert histogram.negative_counts.sum() == 150

    def test_sampling_is_seeded(self, rng):
        embeddings = rng.standard_normal((40, 4))
        labels = np.repeat(np.arange(4), 10)
        first = pair_histogram(embeddings, labels, n_neg=30, seed=8)
        second = pair_histogram(embeddings, labels, n_neg=30, seed=8)
        np.testing.assert_array_equal(first.pairs.negative_pairs, second.pairs.negative_pairs)

    def test_sampled_negatives_at_scale(self, rng):
        labels = np.repeat(np.arange(8), 300)
        embeddings = rng.standard_normal((labels.size, 8))
        histogram = pair_histogram(embeddings, labels, seed=5, n_neg=100_000)
        negatives = histogram.pairs.negative_pairs
        assert len(negatives) == 100_000
        assert np.all(negatives[:, 0] < negatives[:, 1])
        assert np.all(labels[negatives[:, 0]] != labels[negatives[:, 1]])
        assert np.unique(negatives[:, 0] * labels.size + negatives[:, 1]).size == len(negatives)

    def test_dense_request_draws_without_replacement(self, rng):
        embeddings = rng.standard_normal((12, 3))
        labels = np.repeat(np.arange(3), 4)
        histogram = pair_histogram(embeddings, labels, n_neg=40, seed=2)
        negatives = histogram.pairs.negative_pairs
        assert len(negatives) == 40
        assert len({tuple(p) for p in negatives.tolist()}) == 40
        assert np.all(labels[negatives[:, 0]] != labels[negatives[:, 1]])

    def test_seed_is_required(self):
        with pytest.raises(TypeError):
            pair_histogram(np.eye(3), [0, 0, 1])

    def test_custom_bins(self, two_clusters):
        histogram = pair_histogram(*two_clusters, seed=0, bins=18)
        assert histogram.positive_counts.shape == (18,)
        assert histogram.positive_counts[0] == 2
        assert histogram.negative_counts[8:10].sum() == 4

    def test_no_positive_pairs(self):
        with pytest.raises(NoPositivePairs):
            pair_histogram(np.eye(3), [0, 1, 2], seed=0)

    def test_overlap_mass(self, two_clusters):
        separated = pair_histogram(*two_clusters, seed=0)
        assert overlap_mass(separated) == 0.0
        separated.negative_counts = separated.positive_counts.copy()
        assert overlap_mass(separated) == pytest.approx(1.0)


class TestVerificationAccuracy:

    def test_separable(self):
        accuracy, threshold = verification_accuracy(PairSet.from_angles([10.0, 20.0], [30.0, 40.0]))
        assert accuracy == 1.0
        assert threshold == pytest.approx(25.0)

    def test_inverted_sets_fall_back_to_prior(self):
        accuracy, threshold = verification_accuracy(PairSet.from_angles([90.0], [10.0, 20.0, 30.0]))
        assert accuracy == pytest.approx(0.75)
        assert threshold == pytest.approx(10.0)

    def test_matches_fine_threshold_scan(self, rng):
        pos = rng.integers(0, 180, size=300) * 0.5
        neg = rng.integers(60, 360, size=700) * 0.5
        accuracy, _ = verification_accuracy(PairSet.from_angles(pos, neg))
        best = 0.0
        for t in np.arange(0.0, 181.0, 0.01):
            best = max(best, (np.sum(pos < t) + np.sum(neg >= t)) / 1000)
        assert accuracy == pytest.approx(best, abs=1e-12)

    def test_shuffled_labels_give_prior(self, rng):
        embeddings = rng.standard_normal((200, 8))
        labels = rng.permutation(np.repeat(np.arange(10), 20))
        histogram = pair_histogram(embeddings, labels, seed=1)
        accuracy, _ = verification_accuracy(histogram.pairs)
        n_pos = histogram.positive_counts.sum()
        n_neg = histogram.negative_counts.sum()
        assert n_neg == 5 * n_pos
        prior = n_neg / (n_pos + n_neg)
        assert prior <= accuracy <= prior + 0.02

    def test_empty_side(self):
        with pytest.raises(EmptyPairSet):
            verification_accuracy(PairSet.from_angles([], [10.0]))
